//! Resizes an image with both strategies and cuts it into a 3x3 grid.
//!
//! ```bash
//! cargo run --example tile_pipeline -- scan.png out/
//! ```
//!
//! Without arguments a synthetic 200x130 gradient is used and nothing is written.

use pneumoscan::imageprep::{self, letterbox_layout, GrayImage, PrepOptions, ResizeStrategy};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let img = match args.first() {
        Some(path) => imageprep::load_image(path)?,
        None => {
            let (w, h) = (200, 130);
            let px = (0..w * h).map(|i| ((i % w + i / w) % 256) as u8).collect();
            GrayImage::new("gradient", w, h, px)?
        }
    };
    println!("input {} {}x{}", img.id(), img.width(), img.height());

    let l = letterbox_layout(img.width(), img.height(), 310, 310);
    println!(
        "padding layout: content {}x{} at ({}, {})",
        l.content_w, l.content_h, l.left, l.top
    );

    for strategy in [ResizeStrategy::Raw, ResizeStrategy::Padding] {
        let opts = PrepOptions { strategy, ..PrepOptions::default() };
        let prepared = imageprep::prepare(&img, &opts)?;
        let grid = imageprep::split_grid(&img, opts.rows, opts.cols)?;
        println!("{strategy:?}: whole {}x{}", prepared.whole.width(), prepared.whole.height());
        for r in 0..grid.rows() {
            let sizes: Vec<_> = (0..grid.cols())
                .map(|c| format!("{}x{}", grid.tile(r, c).width(), grid.tile(r, c).height()))
                .collect();
            println!("  source tiles row {r}: {}", sizes.join("  "));
        }
        assert_eq!(grid.reassemble(), img);
        if let Some(out) = args.get(1) {
            let out = std::path::Path::new(out);
            std::fs::create_dir_all(out)?;
            let tag = format!("{strategy:?}").to_lowercase();
            prepared.whole.save(out.join(format!("{}_{tag}.png", img.id())))?;
            for (k, t) in prepared.tiles.iter().enumerate() {
                t.save(out.join(format!("{}_{tag}_tile{k}.png", img.id())))?;
            }
        }
    }
    Ok(())
}
