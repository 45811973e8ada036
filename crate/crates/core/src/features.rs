//! Image to feature-vector pipeline.
//!
//! Fixed and deterministic: decode to RGB, bilinear resize to 32x32 with
//! half-pixel centres, then three blocks:
//!
//! | range        | block                                                  |
//! |--------------|--------------------------------------------------------|
//! | `[0, 192)`   | 8x8 mean-pooled thumbnail, RGB interleaved per cell    |
//! | `[192, 256)` | 4x4x4 joint RGB histogram, L1-normalized               |
//! | `[256, 264)` | 8-bin luminance gradient-orientation histogram on [0,π) |
//!
//! Changing any of these constants is a model format break.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const FEATURE_DIM: usize = 264;
pub const RESIZED: usize = 32;
pub const THUMB_CELLS: usize = 8;
pub const COLOR_BINS_PER_CHANNEL: usize = 4;
pub const ORIENTATION_BINS: usize = 8;

pub const THUMBNAIL: Range<usize> = 0..192;
pub const COLOR_HIST: Range<usize> = 192..256;
pub const GRAD_HIST: Range<usize> = 256..264;

/// Total gradient magnitude below which the orientation block is all zero.
pub const MIN_GRADIENT_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(CoreError::DimensionMismatch { expected: FEATURE_DIM, got: values.len() });
        }
        Ok(FeatureVector { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn thumbnail(&self) -> &[f64] {
        &self.values[THUMBNAIL]
    }

    pub fn color_hist(&self) -> &[f64] {
        &self.values[COLOR_HIST]
    }

    pub fn grad_hist(&self) -> &[f64] {
        &self.values[GRAD_HIST]
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = CoreError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        FeatureVector::from_values(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Vec<f64> {
        f.values
    }
}

/// A decoded 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CoreError::EmptyImage);
        }
        if pixels.len() != width * height {
            return Err(CoreError::ImageDecode(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(RgbImage { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        RgbImage { width, height, pixels }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn transpose(&self) -> RgbImage {
        RgbImage::from_fn(self.height, self.width, |x, y| self.pixel(y, x))
    }

    /// Decodes PNG or JPEG bytes. Other formats are rejected.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let format =
            image::guess_format(bytes).map_err(|e| CoreError::ImageDecode(e.to_string()))?;
        if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
            return Err(CoreError::ImageDecode(format!("unsupported format {format:?}")));
        }
        let img = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| CoreError::ImageDecode(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img.pixels().map(|p| p.0).collect();
        RgbImage::new(w as usize, h as usize, pixels)
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in buf.pixels_mut().zip(&self.pixels) {
            dst.0 = *src;
        }
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png).expect("png encoding into memory");
        out.into_inner()
    }
}

pub fn extract_features(bytes: &[u8]) -> Result<FeatureVector> {
    Ok(extract_from_image(&RgbImage::decode(bytes)?))
}

pub fn extract_from_image(img: &RgbImage) -> FeatureVector {
    let small = resize_bilinear(img);
    let mut values = Vec::with_capacity(FEATURE_DIM);
    values.extend(thumbnail_block(&small));
    values.extend(color_hist_block(&small));
    values.extend(grad_hist_block(&small));
    debug_assert_eq!(values.len(), FEATURE_DIM);
    FeatureVector { values }
}

type Resized = [[[f64; 3]; RESIZED]; RESIZED];

/// Source coordinate and blend weight for one output coordinate.
fn sample_axis(out: usize, src_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / RESIZED as f64;
    let pos = ((out as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resize to 32x32, values in [0, 255].
///
/// Written as `a + (fx*(b-a) + fy*(c-a)) + fx*fy*((a+d) - (b+c))`: exact on
/// flat regions, and symmetric in x/y so resizing a transposed image gives
/// exactly the transposed result.
fn resize_bilinear(img: &RgbImage) -> Box<Resized> {
    let mut out = Box::new([[[0.0; 3]; RESIZED]; RESIZED]);
    for (oy, row) in out.iter_mut().enumerate() {
        let (y0, y1, fy) = sample_axis(oy, img.height);
        for (ox, px) in row.iter_mut().enumerate() {
            let (x0, x1, fx) = sample_axis(ox, img.width);
            let a = img.pixel(x0, y0);
            let b = img.pixel(x1, y0);
            let c = img.pixel(x0, y1);
            let d = img.pixel(x1, y1);
            for ch in 0..3 {
                let (a, b, c, d) =
                    (f64::from(a[ch]), f64::from(b[ch]), f64::from(c[ch]), f64::from(d[ch]));
                let v = a + (fx * (b - a) + fy * (c - a)) + (fx * fy) * ((a + d) - (b + c));
                px[ch] = v.clamp(0.0, 255.0);
            }
        }
    }
    out
}

fn thumbnail_block(small: &Resized) -> Vec<f64> {
    let cell = RESIZED / THUMB_CELLS;
    let mut out = Vec::with_capacity(THUMBNAIL.len());
    for cy in 0..THUMB_CELLS {
        for cx in 0..THUMB_CELLS {
            for ch in 0..3 {
                let mut sum = 0.0;
                for dy in 0..cell {
                    for dx in 0..cell {
                        sum += small[cy * cell + dy][cx * cell + dx][ch];
                    }
                }
                out.push(sum / (cell * cell) as f64 / 255.0);
            }
        }
    }
    out
}

fn color_bin(v: f64) -> usize {
    ((v / 64.0).floor() as usize).min(COLOR_BINS_PER_CHANNEL - 1)
}

fn color_hist_block(small: &Resized) -> Vec<f64> {
    let mut counts = [0u32; 64];
    for row in small.iter() {
        for px in row.iter() {
            let idx = color_bin(px[0]) * 16 + color_bin(px[1]) * 4 + color_bin(px[2]);
            counts[idx] += 1;
        }
    }
    let n = (RESIZED * RESIZED) as f64;
    counts.iter().map(|&c| f64::from(c) / n).collect()
}

fn luminance(px: &[f64; 3]) -> f64 {
    (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) / 255.0
}

/// Central differences on interior pixels only.
fn grad_hist_block(small: &Resized) -> Vec<f64> {
    let mut lum = [[0.0; RESIZED]; RESIZED];
    for (y, row) in small.iter().enumerate() {
        for (x, px) in row.iter().enumerate() {
            lum[y][x] = luminance(px);
        }
    }
    let bin_width = std::f64::consts::PI / ORIENTATION_BINS as f64;
    let mut hist = [0.0; ORIENTATION_BINS];
    let mut total = 0.0;
    for y in 1..RESIZED - 1 {
        for x in 1..RESIZED - 1 {
            let gx = lum[y][x + 1] - lum[y][x - 1];
            let gy = lum[y + 1][x] - lum[y - 1][x];
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            if theta >= std::f64::consts::PI {
                theta -= std::f64::consts::PI;
            }
            let bin = ((theta / bin_width).floor() as usize).min(ORIENTATION_BINS - 1);
            hist[bin] += mag;
            total += mag;
        }
    }
    if total < MIN_GRADIENT_MASS {
        return vec![0.0; ORIENTATION_BINS];
    }
    hist.iter().map(|h| h / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn solid(w: usize, h: usize, c: [u8; 3]) -> RgbImage {
        RgbImage::from_fn(w, h, |_, _| c)
    }

    #[test]
    fn uniform_gray() {
        let f = extract_from_image(&solid(17, 9, [128, 128, 128]));
        assert_eq!(f.as_slice().len(), FEATURE_DIM);
        for &v in f.thumbnail() {
            assert!((v - 128.0 / 255.0).abs() < 1e-12);
        }
        let hist = f.color_hist();
        // 128 lands in the third bin of each channel.
        assert_eq!(hist[2 * 16 + 2 * 4 + 2], 1.0);
        assert_eq!(hist.iter().sum::<f64>(), 1.0);
        assert!(f.grad_hist().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_red() {
        let f = extract_from_image(&solid(64, 64, [255, 0, 0]));
        assert_eq!(f.color_hist()[3 * 16], 1.0);
    }

    #[test]
    fn decode_png_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| [x as u8 * 40, y as u8 * 80, 7]);
        let bytes = img.encode_png();
        assert_eq!(RgbImage::decode(&bytes).unwrap(), img);
        assert_eq!(extract_features(&bytes).unwrap(), extract_from_image(&img));
    }

    #[test]
    fn decode_jpeg() {
        let mut buf = image::RgbImage::new(8, 8);
        for p in buf.pixels_mut() {
            p.0 = [10, 200, 30];
        }
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Jpeg).unwrap();
        let f = extract_features(out.get_ref()).unwrap();
        assert!((f.color_hist().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn garbage_bytes_are_rejected() {
        assert!(matches!(extract_features(b"not an image"), Err(CoreError::ImageDecode(_))));
        assert!(matches!(extract_features(&[]), Err(CoreError::ImageDecode(_))));
    }

    #[test]
    fn other_formats_are_rejected() {
        let mut bmp = b"BM".to_vec();
        bmp.extend_from_slice(&[0; 64]);
        assert!(matches!(extract_features(&bmp), Err(CoreError::ImageDecode(_))));
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(RgbImage::new(0, 4, vec![]), Err(CoreError::EmptyImage)));
    }

    #[test]
    fn truncated_png_is_rejected() {
        let bytes = solid(8, 8, [1, 2, 3]).encode_png();
        assert!(extract_features(&bytes[..bytes.len() / 2]).is_err());
    }

    #[test]
    fn one_pixel_image() {
        let f = extract_from_image(&solid(1, 1, [0, 255, 0]));
        assert_eq!(f.color_hist()[3 * 4], 1.0);
        assert!(f.grad_hist().iter().all(|&v| v == 0.0));
    }

    fn arb_image() -> impl Strategy<Value = RgbImage> {
        (1usize..40, 1usize..40).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<[u8; 3]>(), w * h)
                .prop_map(move |pixels| RgbImage { width: w, height: h, pixels })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn block_norms(img in arb_image()) {
            let f = extract_from_image(&img);
            prop_assert_eq!(f.as_slice().len(), FEATURE_DIM);
            prop_assert!(f.thumbnail().iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((f.color_hist().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let g: f64 = f.grad_hist().iter().sum();
            prop_assert!(g == 0.0 || (g - 1.0).abs() < 1e-9);
            prop_assert!(f.grad_hist().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn transpose_permutes_thumbnail_and_keeps_colors(img in arb_image()) {
            let f = extract_from_image(&img);
            let t = extract_from_image(&img.transpose());
            prop_assert_eq!(f.color_hist(), t.color_hist());
            for cy in 0..THUMB_CELLS {
                for cx in 0..THUMB_CELLS {
                    for ch in 0..3 {
                        let a = f.thumbnail()[(cy * THUMB_CELLS + cx) * 3 + ch];
                        let b = t.thumbnail()[(cx * THUMB_CELLS + cy) * 3 + ch];
                        prop_assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn deterministic(img in arb_image()) {
            let a = extract_from_image(&img);
            let b = extract_from_image(&img);
            prop_assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
