//! Synthetic image fixtures: solid colours and simple shapes with seeded
//! noise. Used by tests, benchmarks and demos in place of camera photos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Fill,
    Square,
    Circle,
    Triangle,
    Stripes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub shape: Shape,
    pub foreground: [u8; 3],
    pub background: [u8; 3],
}

impl FixtureSpec {
    pub const fn solid(color: [u8; 3]) -> Self {
        FixtureSpec { shape: Shape::Fill, foreground: color, background: color }
    }

    pub const fn shape(shape: Shape, foreground: [u8; 3], background: [u8; 3]) -> Self {
        FixtureSpec { shape, foreground, background }
    }
}

/// Three easy-to-separate object classes.
pub fn three_classes() -> [(&'static str, FixtureSpec); 3] {
    [
        ("tomato", FixtureSpec::shape(Shape::Circle, [220, 40, 30], [235, 235, 225])),
        ("lettuce", FixtureSpec::shape(Shape::Square, [60, 170, 60], [235, 235, 225])),
        ("blueberry", FixtureSpec::shape(Shape::Triangle, [40, 60, 190], [235, 235, 225])),
    ]
}

/// Four kitchen-object classes with more overlap between them.
pub fn four_classes() -> [(&'static str, FixtureSpec); 4] {
    [
        ("spaghetti", FixtureSpec::shape(Shape::Stripes, [230, 200, 110], [90, 70, 50])),
        ("spoon", FixtureSpec::shape(Shape::Circle, [180, 180, 190], [90, 70, 50])),
        ("pot", FixtureSpec::shape(Shape::Square, [50, 50, 60], [200, 190, 170])),
        ("tomato", FixtureSpec::shape(Shape::Circle, [210, 40, 30], [200, 190, 170])),
    ]
}

fn inside(shape: Shape, x: f64, y: f64, cx: f64, cy: f64, r: f64) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    match shape {
        Shape::Fill => true,
        Shape::Square => dx.abs() <= r && dy.abs() <= r,
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Triangle => dy <= r && dy >= -r && dx.abs() <= (dy + r) / 2.0,
        Shape::Stripes => ((y / (r / 3.0)).floor() as i64).rem_euclid(2) == 0,
    }
}

/// Renders one image. `noise` is the per-channel uniform noise amplitude
/// and `jitter` the fraction of the size by which the shape may move.
pub fn render(spec: &FixtureSpec, size: usize, noise: f64, jitter: f64, rng: &mut impl Rng) -> RgbImage {
    let s = size as f64;
    let cx = s / 2.0 + rng.random_range(-jitter..=jitter) * s;
    let cy = s / 2.0 + rng.random_range(-jitter..=jitter) * s;
    let r = s * (0.3 + rng.random_range(-jitter..=jitter) / 2.0);
    RgbImage::from_fn(size, size, |x, y| {
        let base = if inside(spec.shape, x as f64 + 0.5, y as f64 + 0.5, cx, cy, r) {
            spec.foreground
        } else {
            spec.background
        };
        let mut px = [0u8; 3];
        for ch in 0..3 {
            let n = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
            px[ch] = (f64::from(base[ch]) + n).round().clamp(0.0, 255.0) as u8;
        }
        px
    })
}

pub fn generate(spec: &FixtureSpec, count: usize, size: usize, noise: f64, seed: u64) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| render(spec, size, noise, 0.08, &mut rng)).collect()
}

pub fn solid(size: usize, color: [u8; 3]) -> RgbImage {
    RgbImage::from_fn(size, size, |_, _| color)
}

pub fn solid_png(size: usize, color: [u8; 3]) -> Vec<u8> {
    solid(size, color).encode_png()
}

/// Pixelwise blend `(1 - t) * a + t * b`; the images must match in size.
pub fn blend(a: &RgbImage, b: &RgbImage, t: f64) -> RgbImage {
    assert_eq!((a.width, a.height), (b.width, b.height));
    RgbImage::from_fn(a.width, a.height, |x, y| {
        let (pa, pb) = (a.pixel(x, y), b.pixel(x, y));
        let mut px = [0u8; 3];
        for ch in 0..3 {
            px[ch] = ((1.0 - t) * f64::from(pa[ch]) + t * f64::from(pb[ch])).round() as u8;
        }
        px
    })
}
