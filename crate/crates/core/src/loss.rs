//! Color reconstruction loss and the depth-supervision losses on the ray
//! termination distribution.
//!
//! Every loss returns its value together with the cotangent that
//! [`render_ray_backward`](crate::render::render_ray_backward) consumes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::RayRender;

/// Floor added inside `log h_k`.
pub const LOG_EPS: f64 = 1e-10;
/// Default lower bound on the depth standard deviation, in world units.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch length mismatch: {renders} renders vs {targets} targets")]
    LengthMismatch { renders: usize, targets: usize },
    #[error("lambda_depth must be finite and non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("invalid depth target (D={depth}, sigma_hat={sigma_hat})")]
    InvalidTarget { depth: f64, sigma_hat: f64 },
}

/// Gaussian depth target: surface depth `depth` with standard deviation `sigma_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthTarget {
    pub depth: f64,
    pub sigma_hat: f64,
}

impl DepthTarget {
    pub fn new(depth: f64, sigma_hat: f64, sigma_floor: f64) -> Result<Self, LossError> {
        if !(depth > 0.0 && depth.is_finite() && sigma_hat.is_finite() && sigma_hat >= 0.0) {
            return Err(LossError::InvalidTarget { depth, sigma_hat });
        }
        Ok(Self {
            depth,
            sigma_hat: sigma_hat.max(sigma_floor),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DepthMode {
    #[default]
    Kl,
    Mse,
    None,
}

impl fmt::Display for DepthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepthMode::Kl => "kl",
            DepthMode::Mse => "mse",
            DepthMode::None => "none",
        })
    }
}

impl FromStr for DepthMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(DepthMode::Kl),
            "mse" => Ok(DepthMode::Mse),
            "none" => Ok(DepthMode::None),
            other => Err(format!(
                "unknown depth mode '{other}' (expected kl, mse or none)"
            )),
        }
    }
}

/// Mean squared color error over the batch with per-ray cotangents.
pub fn color_loss(
    colors: &[[f64; 3]],
    targets: &[[f64; 3]],
) -> Result<(f64, Vec<[f64; 3]>), LossError> {
    if colors.len() != targets.len() {
        return Err(LossError::LengthMismatch {
            renders: colors.len(),
            targets: targets.len(),
        });
    }
    if colors.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let n = colors.len() as f64;
    let mut total = 0.0;
    let grads = colors
        .iter()
        .zip(targets)
        .map(|(c, t)| {
            let d = [c[0] - t[0], c[1] - t[1], c[2] - t[2]];
            total += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            d.map(|x| 2.0 * x / n)
        })
        .collect();
    Ok((total / n, grads))
}

/// Unnormalized Gaussian weight of each sample around the target depth.
pub fn gaussian_weights(t: &[f64], target: &DepthTarget) -> Vec<f64> {
    let inv = 1.0 / (2.0 * target.sigma_hat * target.sigma_hat);
    t.iter()
        .map(|tk| (-(tk - target.depth).powi(2) * inv).exp())
        .collect()
}

/// Cross-entropy between the Gaussian depth target and the termination
/// weights, `-sum_k w_k log(h_k + eps) dt_k`, with its gradient w.r.t. `h`.
///
/// Panics if the weights are not normalized.
pub fn depth_kl_loss(render: &RayRender, target: &DepthTarget) -> (f64, Vec<f64>) {
    let mass: f64 = render.weights.iter().sum();
    assert!(
        (mass - 1.0).abs() < NORMALIZATION_TOL,
        "termination weights sum to {mass}, expected 1"
    );
    kl_terms(
        &render.weights,
        &render.samples.t,
        &render.samples.delta,
        target,
    )
}

pub(crate) fn kl_terms(h: &[f64], t: &[f64], dt: &[f64], target: &DepthTarget) -> (f64, Vec<f64>) {
    let w = gaussian_weights(t, target);
    let mut loss = 0.0;
    let grad = h
        .iter()
        .zip(&w)
        .zip(dt)
        .map(|((hk, wk), dtk)| {
            let a = wk * dtk;
            loss -= a * (hk + LOG_EPS).ln();
            -a / (hk + LOG_EPS)
        })
        .collect();
    (loss, grad)
}

/// Squared error of the expected depth; returns the loss and `d loss / d depth_mean`.
pub fn depth_mse_loss(render: &RayRender, target: &DepthTarget) -> (f64, f64) {
    let e = render.depth_mean - target.depth;
    (e * e, 2.0 * e)
}

/// Combined objective bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub color_loss: f64,
    pub depth_loss: f64,
    pub total: f64,
    pub rgb_rays: usize,
    pub keypoint_rays: usize,
}

pub fn total_loss(
    color_loss: f64,
    depth_loss: f64,
    lambda_depth: f64,
    mode: DepthMode,
    rgb_rays: usize,
    keypoint_rays: usize,
) -> Result<LossReport, LossError> {
    if !(lambda_depth >= 0.0 && lambda_depth.is_finite()) {
        return Err(LossError::NegativeLambda(lambda_depth));
    }
    let depth_loss = if mode == DepthMode::None {
        0.0
    } else {
        depth_loss
    };
    Ok(LossReport {
        color_loss,
        depth_loss,
        total: color_loss + lambda_depth * depth_loss,
        rgb_rays,
        keypoint_rays,
    })
}
