//! Grayscale raster ingestion, resizing and grid tiling.
//!
//! Every image in the pipeline is an 8-bit [`GrayImage`]. Two resize
//! strategies are provided, [`resize_raw`] (stretch to the target, aspect
//! ratio discarded) and [`resize_with_padding`] (letterbox: uniform scale,
//! centered, black bands). [`split_grid`] cuts an image into an `r x c`
//! [`TileGrid`] whose tiles partition the source exactly.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image file: {0}")]
    CorruptFile(String),
    #[error("image dimensions must be at least 1x1 (got {width}x{height})")]
    ZeroDimension { width: usize, height: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferMismatch { expected: usize, actual: usize },
    #[error("grid {rows}x{cols} is finer than the {width}x{height} image")]
    GridTooFine {
        rows: usize,
        cols: usize,
        width: usize,
        height: usize,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Row-major 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayImage {
    id: String,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImageError::BufferMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            pixels,
        })
    }

    /// Image filled with a single value.
    pub fn filled(
        id: impl Into<String>,
        width: usize,
        height: usize,
        value: u8,
    ) -> Result<Self, ImageError> {
        Self::new(id, width, height, vec![value; width * height])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Encodes the image as a binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Encodes the image as an 8-bit grayscale PNG.
    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .ok_or(ImageError::BufferMismatch {
            expected: self.width * self.height,
            actual: self.pixels.len(),
        })?;
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageLuma8(buf)
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| ImageError::Io(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Writes PNG or PGM depending on the path extension (PNG otherwise).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let bytes = match extension(path).as_deref() {
            Some("pgm") | Some("pnm") => self.to_pgm(),
            _ => self.to_png()?,
        };
        std::fs::write(path, bytes).map_err(|e| ImageError::Io(e.to_string()))
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Rec.601 luma, rounded to the nearest integer.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    y.round().clamp(0.0, 255.0) as u8
}

/// Reads a PNG or binary PGM file into a [`GrayImage`] whose id is the file stem.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| ImageError::Io(format!("{}: {e}", path.display())))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    decode_image(&bytes, extension(path).as_deref(), id)
}

/// Decodes PNG or binary PGM bytes. `ext_hint` is used only when the
/// content signature is not recognised.
pub fn decode_image(
    bytes: &[u8],
    ext_hint: Option<&str>,
    id: impl Into<String>,
) -> Result<GrayImage, ImageError> {
    if bytes.is_empty() {
        return Err(ImageError::CorruptFile("empty file".into()));
    }
    let format = match image::guess_format(bytes) {
        Ok(f @ (ImageFormat::Png | ImageFormat::Pnm)) => f,
        Ok(other) => return Err(ImageError::UnsupportedFormat(format!("{other:?}"))),
        Err(_) => match ext_hint {
            Some("png") => ImageFormat::Png,
            Some("pgm") | Some("pnm") => ImageFormat::Pnm,
            Some(ext) => return Err(ImageError::UnsupportedFormat(ext.to_string())),
            None => return Err(ImageError::UnsupportedFormat("unknown signature".into())),
        },
    };
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ImageError::CorruptFile(e.to_string()))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width == 0 || height == 0 {
        return Err(ImageError::ZeroDimension { width, height });
    }
    let pixels = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
    };
    GrayImage::new(id, width, height, pixels)
}

/// Bilinear sampling positions for one axis: for each destination index,
/// the two source indices and the weight of the second.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

fn check_target(w: usize, h: usize) -> Result<(), ImageError> {
    if w == 0 || h == 0 {
        Err(ImageError::ZeroDimension {
            width: w,
            height: h,
        })
    } else {
        Ok(())
    }
}

/// Stretches the image to exactly `target_w x target_h` using bilinear
/// interpolation with pixel-center alignment and edge clamping.
pub fn resize_raw(
    img: &GrayImage,
    target_w: usize,
    target_h: usize,
) -> Result<GrayImage, ImageError> {
    check_target(target_w, target_h)?;
    if img.width == target_w && img.height == target_h {
        return Ok(img.clone());
    }
    let xs = axis_taps(img.width, target_w);
    let ys = axis_taps(img.height, target_h);
    let mut pixels = Vec::with_capacity(target_w * target_h);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (img.row(y0), img.row(y1));
        for &(x0, x1, fx) in &xs {
            let top = f64::from(r0[x0]) * (1.0 - fx) + f64::from(r0[x1]) * fx;
            let bottom = f64::from(r1[x0]) * (1.0 - fx) + f64::from(r1[x1]) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(img.id.clone(), target_w, target_h, pixels)
}

/// Placement of scaled content inside a letterboxed canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Letterbox {
    pub content_w: usize,
    pub content_h: usize,
    pub left: usize,
    pub top: usize,
}

/// Computes the letterbox layout: one scale factor `min(tw/w, th/h)`,
/// content dimensions floored, content centered with any odd remainder
/// pixel going to the bottom/right band.
pub fn letterbox_layout(
    width: usize,
    height: usize,
    target_w: usize,
    target_h: usize,
) -> Letterbox {
    let scale = (target_w as f64 / width as f64).min(target_h as f64 / height as f64);
    // The epsilon keeps exact products such as 50 * 2.0 from flooring low.
    let fit = |dim: usize, cap: usize| ((dim as f64 * scale + 1e-9).floor() as usize).clamp(1, cap);
    let content_w = fit(width, target_w);
    let content_h = fit(height, target_h);
    Letterbox {
        content_w,
        content_h,
        left: (target_w - content_w) / 2,
        top: (target_h - content_h) / 2,
    }
}

/// Uniformly scales the image to fit inside the target and pads with zeros.
pub fn resize_with_padding(
    img: &GrayImage,
    target_w: usize,
    target_h: usize,
) -> Result<GrayImage, ImageError> {
    check_target(target_w, target_h)?;
    let layout = letterbox_layout(img.width, img.height, target_w, target_h);
    let content = resize_raw(img, layout.content_w, layout.content_h)?;
    let mut pixels = vec![0u8; target_w * target_h];
    for y in 0..layout.content_h {
        let dst = (layout.top + y) * target_w + layout.left;
        pixels[dst..dst + layout.content_w].copy_from_slice(content.row(y));
    }
    GrayImage::new(img.id.clone(), target_w, target_h, pixels)
}

/// How an image is brought to model input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResizeStrategy {
    #[default]
    Raw,
    Padding,
}

impl ResizeStrategy {
    pub fn apply(self, img: &GrayImage, w: usize, h: usize) -> Result<GrayImage, ImageError> {
        match self {
            Self::Raw => resize_raw(img, w, h),
            Self::Padding => resize_with_padding(img, w, h),
        }
    }
}

impl std::str::FromStr for ResizeStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::Raw),
            "padding" | "pad" => Ok(Self::Padding),
            other => Err(format!("unknown resize strategy `{other}` (expected raw|padding)")),
        }
    }
}

/// An image cut into `rows x cols` tiles, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    rows: usize,
    cols: usize,
    parent_id: String,
    row_cuts: Vec<usize>,
    col_cuts: Vec<usize>,
    tiles: Vec<GrayImage>,
}

impl TileGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of tiles, `rows * cols`.
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn parent_id(&self) -> &str {
        &self.parent_id
    }

    /// Pixel offsets of the horizontal cuts, `rows + 1` values from 0 to height.
    pub fn row_cuts(&self) -> &[usize] {
        &self.row_cuts
    }

    /// Pixel offsets of the vertical cuts, `cols + 1` values from 0 to width.
    pub fn col_cuts(&self) -> &[usize] {
        &self.col_cuts
    }

    pub fn tiles(&self) -> &[GrayImage] {
        &self.tiles
    }

    pub fn tile(&self, row: usize, col: usize) -> &GrayImage {
        &self.tiles[row * self.cols + col]
    }

    pub fn into_tiles(self) -> Vec<GrayImage> {
        self.tiles
    }

    /// Stitches the tiles back together at their cut offsets.
    pub fn reassemble(&self) -> GrayImage {
        let width = *self.col_cuts.last().unwrap();
        let height = *self.row_cuts.last().unwrap();
        let mut pixels = vec![0u8; width * height];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let tile = self.tile(r, c);
                let (x0, y0) = (self.col_cuts[c], self.row_cuts[r]);
                for ty in 0..tile.height {
                    let dst = (y0 + ty) * width + x0;
                    pixels[dst..dst + tile.width].copy_from_slice(tile.row(ty));
                }
            }
        }
        GrayImage {
            id: self.parent_id.clone(),
            width,
            height,
            pixels,
        }
    }
}

/// Cut offsets `round(i * len / parts)` for `i = 0..=parts`.
pub fn grid_cuts(len: usize, parts: usize) -> Vec<usize> {
    (0..=parts).map(|i| (2 * i * len + parts) / (2 * parts)).collect()
}

/// Splits an image into a `rows x cols` grid of tiles.
///
/// Tile `k` (row-major) has id `"{parent}#{k}"`. When a dimension is not
/// divisible, tile sizes differ by at most one pixel.
pub fn split_grid(img: &GrayImage, rows: usize, cols: usize) -> Result<TileGrid, ImageError> {
    if rows == 0 || cols == 0 || rows > img.height || cols > img.width {
        return Err(ImageError::GridTooFine {
            rows,
            cols,
            width: img.width,
            height: img.height,
        });
    }
    let row_cuts = grid_cuts(img.height, rows);
    let col_cuts = grid_cuts(img.width, cols);
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (y0, y1) = (row_cuts[r], row_cuts[r + 1]);
        for c in 0..cols {
            let (x0, x1) = (col_cuts[c], col_cuts[c + 1]);
            let mut pixels = Vec::with_capacity((y1 - y0) * (x1 - x0));
            for y in y0..y1 {
                pixels.extend_from_slice(&img.row(y)[x0..x1]);
            }
            tiles.push(GrayImage {
                id: format!("{}#{}", img.id, r * cols + c),
                width: x1 - x0,
                height: y1 - y0,
                pixels,
            });
        }
    }
    Ok(TileGrid {
        rows,
        cols,
        parent_id: img.id.clone(),
        row_cuts,
        col_cuts,
        tiles,
    })
}

/// Preprocessing applied before classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepOptions {
    pub strategy: ResizeStrategy,
    pub width: usize,
    pub height: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self {
            strategy: ResizeStrategy::Raw,
            width: 310,
            height: 310,
            rows: 3,
            cols: 3,
        }
    }
}

/// A resized whole image plus its grid tiles, each tile resized on its own.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub whole: GrayImage,
    pub tiles: Vec<GrayImage>,
    pub rows: usize,
    pub cols: usize,
}

/// Splits the original image first, then resizes the whole image and every
/// tile with the chosen strategy.
pub fn prepare(img: &GrayImage, opts: &PrepOptions) -> Result<Prepared, ImageError> {
    let whole = opts.strategy.apply(img, opts.width, opts.height)?;
    let grid = split_grid(img, opts.rows, opts.cols)?;
    let tiles = grid
        .into_tiles()
        .iter()
        .map(|t| opts.strategy.apply(t, opts.width, opts.height))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prepared {
        whole,
        tiles,
        rows: opts.rows,
        cols: opts.cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, px: Vec<u8>) -> GrayImage {
        GrayImage::new("t", w, h, px).unwrap()
    }

    #[test]
    fn rejects_zero_dimension_and_bad_buffer() {
        assert!(matches!(
            GrayImage::new("z", 0, 3, vec![]),
            Err(ImageError::ZeroDimension { .. })
        ));
        assert!(matches!(
            GrayImage::new("z", 2, 2, vec![0; 3]),
            Err(ImageError::BufferMismatch { .. })
        ));
    }

    #[test]
    fn rec601_red() {
        assert_eq!(luminance(255, 0, 0), 76);
        assert_eq!(luminance(255, 255, 255), 255);
        assert_eq!(luminance(0, 0, 0), 0);
    }

    #[test]
    fn pgm_roundtrip_identity() {
        let src = img(2, 2, vec![0, 255, 128, 64]);
        let back = decode_image(&src.to_pgm(), None, "x").unwrap();
        assert_eq!(back.pixels(), &[0, 255, 128, 64]);
        assert_eq!((back.width(), back.height()), (2, 2));
    }

    #[test]
    fn empty_and_garbage_inputs() {
        assert!(matches!(
            decode_image(&[], Some("png"), "e"),
            Err(ImageError::CorruptFile(_))
        ));
        assert!(matches!(
            decode_image(b"not an image", Some("txt"), "e"),
            Err(ImageError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_image(b"\x89PNG\r\n\x1a\ntruncated", None, "e"),
            Err(ImageError::CorruptFile(_))
        ));
    }

    #[test]
    fn resize_identity() {
        let src = img(3, 2, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(resize_raw(&src, 3, 2).unwrap(), src);
    }

    #[test]
    fn resize_zero_target() {
        let src = img(1, 1, vec![9]);
        assert!(matches!(
            resize_raw(&src, 0, 4),
            Err(ImageError::ZeroDimension { .. })
        ));
        assert!(resize_with_padding(&src, 4, 0).is_err());
    }

    #[test]
    fn upsample_two_to_four() {
        // pixel-center mapping: sources -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
        let out = resize_raw(&img(2, 1, vec![0, 255]), 4, 1).unwrap();
        assert_eq!(out.pixels(), &[0, 64, 191, 255]);
    }

    #[test]
    fn padding_layout_examples() {
        let l = letterbox_layout(100, 50, 100, 100);
        assert_eq!((l.content_w, l.content_h, l.left, l.top), (100, 50, 0, 25));
        let l = letterbox_layout(1024, 768, 310, 310);
        assert_eq!((l.content_w, l.content_h, l.left, l.top), (310, 232, 0, 39));
    }

    #[test]
    fn padding_bands_are_black() {
        let src = GrayImage::filled("w", 100, 50, 200).unwrap();
        let out = resize_with_padding(&src, 100, 100).unwrap();
        for y in 0..100 {
            let expect = if (25..75).contains(&y) { 200 } else { 0 };
            assert!(out.row(y).iter().all(|&p| p == expect), "row {y}");
        }
    }

    #[test]
    fn square_padding_equals_raw() {
        let px: Vec<u8> = (0..64u32).map(|v| (v * 4) as u8).collect();
        let src = img(8, 8, px);
        assert_eq!(
            resize_with_padding(&src, 5, 5).unwrap(),
            resize_raw(&src, 5, 5).unwrap()
        );
    }

    #[test]
    fn grid_cut_rounding() {
        assert_eq!(grid_cuts(10, 3), vec![0, 3, 7, 10]);
        assert_eq!(grid_cuts(9, 3), vec![0, 3, 6, 9]);
        assert_eq!(grid_cuts(300, 3), vec![0, 100, 200, 300]);
    }

    #[test]
    fn split_ten_by_ten() {
        let src = img(10, 10, (0..100).map(|v| v as u8).collect());
        let g = split_grid(&src, 3, 3).unwrap();
        let heights: Vec<_> = (0..3).map(|r| g.tile(r, 0).height()).collect();
        let widths: Vec<_> = (0..3).map(|c| g.tile(0, c).width()).collect();
        assert_eq!(heights, vec![3, 4, 3]);
        assert_eq!(widths, vec![3, 4, 3]);
        assert_eq!(g.reassemble(), src);
        assert_eq!(g.tiles()[4].id(), "t#4");
    }

    #[test]
    fn split_too_fine() {
        let src = img(2, 2, vec![0; 4]);
        assert!(matches!(
            split_grid(&src, 3, 1),
            Err(ImageError::GridTooFine { .. })
        ));
        assert!(split_grid(&src, 0, 1).is_err());
    }

    #[test]
    fn prepare_yields_resized_tiles() {
        let src = GrayImage::filled("p", 90, 60, 10).unwrap();
        let opts = PrepOptions {
            width: 32,
            height: 32,
            ..PrepOptions::default()
        };
        let p = prepare(&src, &opts).unwrap();
        assert_eq!(p.tiles.len(), 9);
        assert!(p.tiles.iter().all(|t| t.width() == 32 && t.height() == 32));
        assert_eq!((p.whole.width(), p.whole.height()), (32, 32));
    }
}
