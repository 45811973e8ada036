//! Independent reference implementations used only to check the library.
//!
//! Written from the pipeline description rather than from the library code:
//! separable resizing, per-parameter gradient loops, no shared helpers.

#![allow(dead_code)]

use std::f64::consts::PI;

pub const DIM: usize = 264;

/// `img[y][x] = [r, g, b]` as raw 8-bit values.
pub type Pixels = Vec<Vec<[u8; 3]>>;

pub fn decode(bytes: &[u8]) -> Pixels {
    let img = image::load_from_memory(bytes).unwrap().to_rgb8();
    (0..img.height())
        .map(|y| (0..img.width()).map(|x| img.get_pixel(x, y).0).collect())
        .collect()
}

fn src_coord(i: usize, n_src: usize) -> (usize, usize, f64) {
    let s = (i as f64 + 0.5) * n_src as f64 / 32.0 - 0.5;
    let s = if s < 0.0 { 0.0 } else if s > (n_src - 1) as f64 { (n_src - 1) as f64 } else { s };
    let i0 = s as usize;
    let i1 = if i0 + 1 < n_src { i0 + 1 } else { i0 };
    (i0, i1, s - i0 as f64)
}

/// 32x32 bilinear resize, as lerp along x then along y.
pub fn resize(img: &Pixels) -> Vec<Vec<[f64; 3]>> {
    let h = img.len();
    let w = img[0].len();
    let mut out = vec![vec![[0.0; 3]; 32]; 32];
    for oy in 0..32 {
        let (y0, y1, ty) = src_coord(oy, h);
        for ox in 0..32 {
            let (x0, x1, tx) = src_coord(ox, w);
            for c in 0..3 {
                let p = |x: usize, y: usize| img[y][x][c] as f64;
                let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
                let bot = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
                out[oy][ox][c] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    out
}

pub fn features(img: &Pixels) -> Vec<f64> {
    let r = resize(img);
    let mut f = vec![0.0; DIM];
    // thumbnail
    for cy in 0..8 {
        for cx in 0..8 {
            for c in 0..3 {
                let mut acc = 0.0;
                for y in cy * 4..cy * 4 + 4 {
                    for x in cx * 4..cx * 4 + 4 {
                        acc += r[y][x][c] / 255.0;
                    }
                }
                f[(cy * 8 + cx) * 3 + c] = acc / 16.0;
            }
        }
    }
    // colour histogram
    for row in &r {
        for px in row {
            let q = |v: f64| ((v / 64.0) as usize).min(3);
            f[192 + q(px[0]) * 16 + q(px[1]) * 4 + q(px[2])] += 1.0 / 1024.0;
        }
    }
    // orientation histogram
    let lum = |x: usize, y: usize| {
        let p = r[y][x];
        (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0
    };
    let mut bins = [0.0; 8];
    for y in 1..31 {
        for x in 1..31 {
            let gx = lum(x + 1, y) - lum(x - 1, y);
            let gy = lum(x, y + 1) - lum(x, y - 1);
            let m = (gx * gx + gy * gy).sqrt();
            if m == 0.0 {
                continue;
            }
            let mut a = gy.atan2(gx);
            while a < 0.0 {
                a += PI;
            }
            while a >= PI {
                a -= PI;
            }
            let b = ((a * 8.0 / PI) as usize).min(7);
            bins[b] += m;
        }
    }
    let total: f64 = bins.iter().sum();
    if total >= 1e-12 {
        for (i, b) in bins.iter().enumerate() {
            f[256 + i] = b / total;
        }
    }
    f
}

pub struct OracleModel {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `w[c][j]`
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Plain full-batch gradient descent; a step that raises the loss is
/// retried with half the learning rate.
pub fn train(xs: &[Vec<f64>], ys: &[usize], k: usize, lr: f64, epochs: usize, l2: f64) -> OracleModel {
    let n = xs.len();
    let d = xs[0].len();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        mean[j] = xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
        std[j] = var.sqrt().max(1e-8);
    }
    let z: Vec<Vec<f64>> =
        xs.iter().map(|x| (0..d).map(|j| (x[j] - mean[j]) / std[j]).collect()).collect();
    let mut w = vec![vec![0.0; d]; k];
    let mut b = vec![0.0; k];
    let mut lr = lr;
    let mut current = loss(&z, ys, &w, &b, l2);
    let mut accepted = 0;
    let mut halvings = 0;
    while accepted < epochs {
        let probs: Vec<Vec<f64>> = z.iter().map(|x| softmax(&logits(&w, &b, x))).collect();
        let mut gw = vec![vec![0.0; d]; k];
        let mut gb = vec![0.0; k];
        for c in 0..k {
            for i in 0..n {
                let delta = probs[i][c] - if ys[i] == c { 1.0 } else { 0.0 };
                gb[c] += delta / n as f64;
                for j in 0..d {
                    gw[c][j] += delta * z[i][j] / n as f64;
                }
            }
            for j in 0..d {
                gw[c][j] += l2 * w[c][j];
            }
        }
        let mut nw = w.clone();
        let mut nb = b.clone();
        for c in 0..k {
            nb[c] -= lr * gb[c];
            for j in 0..d {
                nw[c][j] -= lr * gw[c][j];
            }
        }
        let next = loss(&z, ys, &nw, &nb, l2);
        // A step that raises the loss is retried at half the rate.
        if next > current + 1e-12 {
            if halvings == 60 {
                break;
            }
            halvings += 1;
            lr /= 2.0;
            continue;
        }
        w = nw;
        b = nb;
        current = next;
        accepted += 1;
    }
    OracleModel { mean, std, w, b }
}

fn loss(z: &[Vec<f64>], ys: &[usize], w: &[Vec<f64>], b: &[f64], l2: f64) -> f64 {
    let ce: f64 = z.iter().zip(ys).map(|(x, &y)| -softmax(&logits(w, b, x))[y].ln()).sum::<f64>() / z.len() as f64;
    let norm: f64 = w.iter().flatten().map(|v| v * v).sum();
    ce + l2 / 2.0 * norm
}

fn logits(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter().zip(b).map(|(row, bc)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + bc).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl OracleModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = (0..x.len()).map(|j| (x[j] - self.mean[j]) / self.std[j]).collect();
        softmax(&logits(&self.w, &self.b, &z))
    }

    pub fn argmax(&self, x: &[f64]) -> usize {
        let p = self.predict(x);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        best
    }
}

/// The game's documented target RNG, re-derived from its description.
pub struct Splitmix {
    pub s: u64,
}

impl Splitmix {
    pub fn next(&mut self) -> u64 {
        self.s = self.s.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.s;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self, n: u64) -> u64 {
        // Reject the first (2^64 mod n) values.
        let reject_below = ((u128::from(u64::MAX) + 1) % u128::from(n)) as u64;
        loop {
            let v = self.next();
            if v >= reject_below {
                return v % n;
            }
        }
    }
}
