use pneumoscan::imageprep::{
    decode_image, letterbox_layout, load_image, resize_raw, resize_with_padding, split_grid,
    GrayImage, ImageError,
};
use proptest::prelude::*;

/// Bilinear resampling written as a separable tent-kernel sum over every
/// source pixel, with source coordinates clamped to the image.
fn tent_oracle(img: &GrayImage, tw: usize, th: usize) -> Vec<f64> {
    let tent = |d: f64| (1.0 - d.abs()).max(0.0);
    let map = |d: usize, src: usize, dst: usize| {
        ((d as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64)
    };
    let mut out = Vec::with_capacity(tw * th);
    for dy in 0..th {
        let sy = map(dy, img.height(), th);
        for dx in 0..tw {
            let sx = map(dx, img.width(), tw);
            let mut acc = 0.0;
            for y in 0..img.height() {
                let wy = tent(sy - y as f64);
                if wy == 0.0 {
                    continue;
                }
                for x in 0..img.width() {
                    acc += wy * tent(sx - x as f64) * f64::from(img.get(x, y));
                }
            }
            out.push(acc);
        }
    }
    out
}

fn arb_image(max: usize) -> impl Strategy<Value = GrayImage> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h)
            .prop_map(move |px| GrayImage::new("p", w, h, px).unwrap())
    })
}

#[test]
fn two_pixel_upsample_matches_oracle() {
    let src = GrayImage::new("s", 2, 1, vec![0, 255]).unwrap();
    let out = resize_raw(&src, 4, 1).unwrap();
    assert_eq!(tent_oracle(&src, 4, 1), vec![0.0, 63.75, 191.25, 255.0]);
    assert_eq!(out.pixels(), &[0, 64, 191, 255]);
}

#[test]
fn large_resize_dimensions() {
    let src = GrayImage::filled("big", 1024, 768, 100).unwrap();
    let out = resize_raw(&src, 310, 310).unwrap();
    assert_eq!((out.width(), out.height()), (310, 310));
    let padded = resize_with_padding(&src, 310, 310).unwrap();
    let layout = letterbox_layout(1024, 768, 310, 310);
    assert_eq!((layout.content_h, layout.top), (232, 39));
    assert_eq!(310 - layout.top - layout.content_h, 39);
    for y in 0..310 {
        let inside = (39..39 + 232).contains(&y);
        assert!(padded.row(y).iter().all(|&p| p == if inside { 100 } else { 0 }), "row {y}");
    }
}

#[test]
fn split_three_hundred() {
    let src = GrayImage::filled("s", 300, 300, 1).unwrap();
    let grid = split_grid(&src, 3, 3).unwrap();
    assert_eq!(grid.len(), 9);
    assert!(grid.tiles().iter().all(|t| t.width() == 100 && t.height() == 100));
    let grid = split_grid(&GrayImage::filled("n", 9, 9, 1).unwrap(), 3, 3).unwrap();
    assert!(grid.tiles().iter().all(|t| t.width() == 3 && t.height() == 3));
}

#[test]
fn load_files_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let pgm = dir.path().join("a.pgm");
    std::fs::write(&pgm, b"P5\n2 2\n255\n\x00\xff\x80\x40").unwrap();
    let img = load_image(&pgm).unwrap();
    assert_eq!((img.width(), img.height(), img.id()), (2, 2, "a"));
    assert_eq!(img.pixels(), &[0, 255, 128, 64]);

    let rgb = image::RgbImage::from_raw(2, 1, vec![255, 0, 0, 10, 200, 30]).unwrap();
    let png = dir.path().join("c.png");
    rgb.save(&png).unwrap();
    let img = load_image(&png).unwrap();
    // round(0.299*255) and round(0.299*10 + 0.587*200 + 0.114*30)
    assert_eq!(img.pixels(), &[76, 124]);

    let empty = dir.path().join("z.png");
    std::fs::write(&empty, b"").unwrap();
    assert!(matches!(load_image(&empty), Err(ImageError::CorruptFile(_))));

    let gif = dir.path().join("x.gif");
    std::fs::write(&gif, b"GIF89a\x01\x00\x01\x00\x00\x00\x00;").unwrap();
    assert!(matches!(load_image(&gif), Err(ImageError::UnsupportedFormat(_))));

    let zero = b"P5\n0 3\n255\n";
    assert!(decode_image(zero, None, "z").is_err());
}

#[test]
fn png_roundtrip_through_save() {
    let dir = tempfile::tempdir().unwrap();
    let src = GrayImage::new("r", 3, 2, vec![1, 2, 3, 250, 251, 252]).unwrap();
    let path = dir.path().join("r.png");
    src.save(&path).unwrap();
    assert_eq!(load_image(&path).unwrap(), src);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resize_matches_tent_oracle(img in arb_image(12), tw in 1usize..20, th in 1usize..20) {
        let out = resize_raw(&img, tw, th).unwrap();
        let expect = tent_oracle(&img, tw, th);
        // the output must be a rounding of the exact interpolated value
        for (a, b) in out.pixels().iter().zip(&expect) {
            prop_assert!((f64::from(*a) - b).abs() <= 0.5 + 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn split_then_reassemble_is_identity(img in arb_image(40), r in 1usize..8, c in 1usize..8) {
        prop_assume!(r <= img.height() && c <= img.width());
        let grid = split_grid(&img, r, c).unwrap();
        prop_assert_eq!(grid.len(), r * c);
        prop_assert_eq!(grid.reassemble(), img);
        let hs: Vec<_> = (0..r).map(|i| grid.tile(i, 0).height()).collect();
        let ws: Vec<_> = (0..c).map(|j| grid.tile(0, j).width()).collect();
        prop_assert!(hs.iter().max().unwrap() - hs.iter().min().unwrap() <= 1);
        prop_assert!(ws.iter().max().unwrap() - ws.iter().min().unwrap() <= 1);
    }

    #[test]
    fn constant_images_are_fixed_points(w in 1usize..30, h in 1usize..30, tw in 1usize..40, th in 1usize..40, v in any::<u8>()) {
        let src = GrayImage::filled("c", w, h, v).unwrap();
        let there = resize_raw(&src, tw, th).unwrap();
        prop_assert!(there.pixels().iter().all(|&p| p == v));
        prop_assert_eq!(resize_raw(&there, w, h).unwrap(), src);
    }

    #[test]
    fn padding_is_centered_and_black(w in 1usize..60, h in 1usize..60, tw in 1usize..50, th in 1usize..50) {
        let src = GrayImage::filled("c", w, h, 200).unwrap();
        let out = resize_with_padding(&src, tw, th).unwrap();
        prop_assert_eq!((out.width(), out.height()), (tw, th));
        let l = letterbox_layout(w, h, tw, th);
        let (right, bottom) = (tw - l.left - l.content_w, th - l.top - l.content_h);
        prop_assert!(right >= l.left && right - l.left <= 1);
        prop_assert!(bottom >= l.top && bottom - l.top <= 1);
        for y in 0..th {
            for x in 0..tw {
                let inside = (l.left..l.left + l.content_w).contains(&x) && (l.top..l.top + l.content_h).contains(&y);
                prop_assert_eq!(out.get(x, y), if inside { 200 } else { 0 });
            }
        }
    }

    #[test]
    fn operations_are_deterministic(img in arb_image(20), tw in 1usize..25, th in 1usize..25) {
        prop_assert_eq!(resize_raw(&img, tw, th).unwrap(), resize_raw(&img, tw, th).unwrap());
        prop_assert_eq!(resize_with_padding(&img, tw, th).unwrap(), resize_with_padding(&img, tw, th).unwrap());
    }
}
