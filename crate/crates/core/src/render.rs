//! Quadrature of the volume rendering integral along a ray.
//!
//! The far bound is an opaque wall: the last sample has alpha 1, so the
//! termination weights `h` always sum to one.

use rand::Rng;
use thiserror::Error;

use crate::camera::Ray;
use crate::field::{FieldGrad, FieldSample, VoxelField};

/// Lower clamp on exponent arguments when forming transmittance.
pub const MIN_EXPONENT: f64 = -80.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("need at least 2 samples per ray, got {0}")]
    TooFewSamples(usize),
    #[error("no renders to summarise")]
    Empty,
}

/// How sample positions are placed inside the `K` equal bins of `[near, far]`.
pub enum SamplingMode<'a, R: Rng + ?Sized> {
    /// Bin centers.
    Midpoint,
    /// One uniform draw per bin.
    Stratified(&'a mut R),
}

impl SamplingMode<'static, rand_chacha::ChaCha8Rng> {
    pub const MIDPOINT: Self = SamplingMode::Midpoint;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    /// Strictly increasing sample positions in `[near, far]`.
    pub t: Vec<f64>,
    /// `t[k+1] - t[k]`; the last entry repeats the final spacing.
    pub delta: Vec<f64>,
}

impl RaySamples {
    /// Builds samples from explicit positions. Panics on fewer than two
    /// positions or positions that are not strictly increasing.
    pub fn from_positions(t: Vec<f64>) -> Self {
        assert!(t.len() >= 2, "need at least two sample positions");
        let mut delta: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(
            delta.iter().all(|d| *d > 0.0),
            "sample positions must be strictly increasing"
        );
        delta.push(*delta.last().unwrap());
        Self { t, delta }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

pub fn stratified_samples<R: Rng + ?Sized>(
    ray: &Ray,
    count: usize,
    mode: SamplingMode<'_, R>,
) -> Result<RaySamples, RenderError> {
    if count < 2 {
        return Err(RenderError::TooFewSamples(count));
    }
    let width = (ray.far - ray.near) / count as f64;
    let mut t: Vec<f64> = match mode {
        SamplingMode::Midpoint => (0..count)
            .map(|k| ray.near + (k as f64 + 0.5) * width)
            .collect(),
        SamplingMode::Stratified(rng) => (0..count)
            .map(|k| ray.near + (k as f64 + rng.gen::<f64>()) * width)
            .collect(),
    };
    // a draw of exactly 0 in bin k+1 may collide with the upper edge of bin k
    for k in 1..count {
        if t[k] <= t[k - 1] {
            t[k] = f64::min(next_up(t[k - 1]), ray.near + (k + 1) as f64 * width);
        }
    }
    Ok(RaySamples::from_positions(t))
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(if x >= 0.0 {
        x.to_bits() + 1
    } else {
        x.to_bits() - 1
    })
}

/// Everything rendered along one ray, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RayRender {
    pub color: [f64; 3],
    /// Termination weights `h_k`, summing to one.
    pub weights: Vec<f64>,
    /// Transmittance `T_k` in front of sample `k`.
    pub trans: Vec<f64>,
    pub depth_mean: f64,
    pub depth_var: f64,
    pub samples: RaySamples,
    pub field_samples: Vec<FieldSample>,
}

pub fn render_ray(field: &VoxelField, ray: &Ray, samples: RaySamples) -> RayRender {
    let k_count = samples.len();
    let mut weights = Vec::with_capacity(k_count);
    let mut trans = Vec::with_capacity(k_count);
    let mut field_samples = Vec::with_capacity(k_count);
    let mut optical = 0.0f64;
    let mut color = [0.0f64; 3];
    let mut depth_mean = 0.0;
    for k in 0..k_count {
        let fs = field.sample(&ray.at(samples.t[k]));
        let t_k = (-optical).max(MIN_EXPONENT).exp();
        let alpha = if k + 1 == k_count {
            1.0
        } else {
            let s = fs.sigma * samples.delta[k];
            optical += s;
            -(-s).max(MIN_EXPONENT).exp_m1()
        };
        let h = t_k * alpha;
        for c in 0..3 {
            color[c] += h * fs.rgb[c];
        }
        depth_mean += h * samples.t[k];
        trans.push(t_k);
        weights.push(h);
        field_samples.push(fs);
    }
    let depth_var = weights
        .iter()
        .zip(&samples.t)
        .map(|(h, t)| h * (t - depth_mean) * (t - depth_mean))
        .sum();
    RayRender {
        color,
        weights,
        trans,
        depth_mean,
        depth_var,
        samples,
        field_samples,
    }
}

/// Receives per-sample density and color cotangents during backprop.
pub trait GradSink {
    fn accumulate(&mut self, sample: &FieldSample, d_sigma: f64, d_rgb: [f64; 3]);
}

impl GradSink for FieldGrad {
    fn accumulate(&mut self, sample: &FieldSample, d_sigma: f64, d_rgb: [f64; 3]) {
        FieldGrad::accumulate(self, sample, d_sigma, d_rgb);
    }
}

/// Adjoint of [`render_ray`] for cotangents on the color, the expected depth
/// and (optionally) the individual termination weights.
pub fn render_ray_backward<S: GradSink + ?Sized>(
    render: &RayRender,
    d_color: [f64; 3],
    d_depth: f64,
    d_weights: Option<&[f64]>,
    sink: &mut S,
) {
    let k_count = render.weights.len();
    if let Some(dh) = d_weights {
        assert_eq!(dh.len(), k_count, "weight cotangent has wrong length");
    }
    // g_k = dL/dh_k
    let g = |k: usize| {
        let fs = &render.field_samples[k];
        d_weights.map_or(0.0, |dh| dh[k])
            + d_color[0] * fs.rgb[0]
            + d_color[1] * fs.rgb[1]
            + d_color[2] * fs.rgb[2]
            + d_depth * render.samples.t[k]
    };
    // dL/ds_k = g_k T_{k+1} - sum_{j>k} g_j h_j, with s_k = sigma_k delta_k
    let mut suffix = g(k_count - 1) * render.weights[k_count - 1];
    let last = &render.field_samples[k_count - 1];
    let w_last = render.weights[k_count - 1];
    sink.accumulate(last, 0.0, d_color.map(|d| d * w_last));
    for k in (0..k_count - 1).rev() {
        let gk = g(k);
        let d_s = gk * render.trans[k + 1] - suffix;
        suffix += gk * render.weights[k];
        let hk = render.weights[k];
        sink.accumulate(
            &render.field_samples[k],
            d_s * render.samples.delta[k],
            d_color.map(|d| d * hk),
        );
    }
}

/// Summary of termination variances over a set of rays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceStats {
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

pub fn termination_variance_stats<'a, I>(renders: I) -> Result<VarianceStats, RenderError>
where
    I: IntoIterator<Item = &'a RayRender>,
{
    variance_stats_from(renders.into_iter().map(|r| r.depth_var).collect())
}

pub fn variance_stats_from(mut values: Vec<f64>) -> Result<VarianceStats, RenderError> {
    if values.is_empty() {
        return Err(RenderError::Empty);
    }
    values.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (values.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
    };
    Ok(VarianceStats {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        min: values[0],
        q25: q(0.25),
        median: q(0.5),
        q75: q(0.75),
        max: values[values.len() - 1],
    })
}
