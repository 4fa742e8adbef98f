//! Scale/shift depth alignment, aligned depth error and image metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 depth pairs, got {0}")]
    TooFewPairs(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("source depths are constant; scale/shift is not identifiable")]
    Singular,
    #[error("no entries with positive reference depth")]
    EmptyEvaluation,
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("SSIM needs images of at least {min}x{min} pixels, got {w}x{h}")]
    TooSmall { w: usize, h: usize, min: usize },
}

/// Affine map `a * d - b` taking source depths onto reference depths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    pub a: f64,
    pub b: f64,
}

impl AlignParams {
    pub const IDENTITY: AlignParams = AlignParams { a: 1.0, b: 0.0 };

    pub fn apply(&self, d: f64) -> f64 {
        self.a * d - self.b
    }
}

/// Least-squares `min_{a,b} sum (a * src - b - reference)^2`.
pub fn fit_scale_shift(src: &[f64], reference: &[f64]) -> Result<AlignParams, EvalError> {
    if src.len() != reference.len() {
        return Err(EvalError::LengthMismatch(src.len(), reference.len()));
    }
    if src.len() < 2 {
        return Err(EvalError::TooFewPairs(src.len()));
    }
    let n = src.len() as f64;
    let mx = src.iter().sum::<f64>() / n;
    let my = reference.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in src.iter().zip(reference) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let scale = src
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    if sxx <= 1e-24 * n * scale * scale {
        return Err(EvalError::Singular);
    }
    let a = sxy / sxx;
    Ok(AlignParams { a, b: a * mx - my })
}

/// Mean of `|a * pred - b - ref| / ref`, in percent, over entries with `ref > 0`.
pub fn depth_error(pred: &[f64], reference: &[f64], align: AlignParams) -> Result<f64, EvalError> {
    if pred.len() != reference.len() {
        return Err(EvalError::LengthMismatch(pred.len(), reference.len()));
    }
    let (sum, count) = pred
        .iter()
        .zip(reference)
        .filter(|(_, r)| **r > 0.0)
        .fold((0.0, 0usize), |(s, c), (p, r)| {
            (s + (align.apply(*p) - r).abs() / r, c + 1)
        });
    if count == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok(100.0 * sum / count as f64)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, EvalError> {
    if a.shape() != b.shape() {
        return Err(EvalError::ShapeMismatch(a.shape(), b.shape()));
    }
    let n = (a.pixels().len() * 3) as f64;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / n)
}

/// Peak signal-to-noise ratio for peak value 1; identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, EvalError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * m.log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub(crate) fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mean SSIM over all full 11x11 Gaussian windows (sigma 1.5), computed per
/// channel and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, EvalError> {
    if a.shape() != b.shape() {
        return Err(EvalError::ShapeMismatch(a.shape(), b.shape()));
    }
    let (w, h) = a.shape();
    if w.min(h) < SSIM_WINDOW {
        return Err(EvalError::TooSmall {
            w,
            h,
            min: SSIM_WINDOW,
        });
    }
    let k = ssim_kernel();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.pixels().iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.pixels().iter().map(|p| p[c]).collect();
        let products = [
            x.clone(),
            y.clone(),
            x.iter().map(|v| v * v).collect(),
            y.iter().map(|v| v * v).collect(),
            x.iter().zip(&y).map(|(p, q)| p * q).collect::<Vec<f64>>(),
        ];
        let filtered: Vec<Vec<f64>> = products.iter().map(|p| filter_valid(p, w, h, &k)).collect();
        let n = filtered[0].len();
        let mut sum = 0.0;
        for i in 0..n {
            let (mx, my) = (filtered[0][i], filtered[1][i]);
            let vx = filtered[2][i] - mx * mx;
            let vy = filtered[3][i] - my * my;
            let cxy = filtered[4][i] - mx * my;
            sum += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// Separable "valid" correlation with `k`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW)
                .map(|i| k[i] * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}
