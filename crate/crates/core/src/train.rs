//! Optimization of a voxel field against a [`SceneDataset`]: ray batching,
//! the combined color and depth objective, Adam, periodic evaluation and
//! checkpoints.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Camera, Ray};
use crate::dataset::{SceneDataset, View};
use crate::eval::{depth_error, fit_scale_shift, psnr, ssim, AlignParams, EvalError};
use crate::field::{FieldError, FieldSample, GridHandle, VoxelField, CHANNELS};
use crate::image::{DepthMap, Image};
use crate::loss::{
    color_loss, depth_kl_loss, depth_mse_loss, total_loss, DepthMode, DepthTarget, LossError,
    LossReport, DEFAULT_SIGMA_FLOOR,
};
use crate::render::{
    render_ray, render_ray_backward, stratified_samples, GradSink, RayRender, RaySamples,
    SamplingMode,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(
        "non-finite loss at iteration {iteration}, ray {ray} (origin {origin:?}, direction {direction:?}, depth target {target:?}): {detail}"
    )]
    NonFinite {
        iteration: usize,
        ray: usize,
        origin: [f64; 3],
        direction: [f64; 3],
        target: Option<DepthTarget>,
        detail: String,
    },
}

/// Training hyperparameters. Every field has a default, so a JSON config only
/// needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the depth term.
    pub lambda_depth: f64,
    pub depth_mode: DepthMode,
    /// Supervise depth with every reference-depth pixel of the training views
    /// instead of the sparse keypoints.
    pub dense_depth: bool,
    /// Fixed depth standard deviation of dense targets, world units.
    pub dense_sigma: f64,
    /// Lower bound applied to every keypoint standard deviation, world units.
    pub sigma_floor: f64,
    pub samples_per_ray: usize,
    pub rays_per_batch: usize,
    pub keypoint_ray_fraction: f64,
    pub iters: usize,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Overrides the dataset's near bound.
    pub near: Option<f64>,
    /// Overrides the dataset's far bound.
    pub far: Option<f64>,
    pub grid: [usize; 3],
    /// Directory receiving a field checkpoint at every evaluation.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_depth: 0.1,
            depth_mode: DepthMode::Kl,
            dense_depth: false,
            dense_sigma: 0.1,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            samples_per_ray: 128,
            rays_per_batch: 256,
            keypoint_ray_fraction: 0.5,
            iters: 5000,
            lr: 1e-2,
            betas: [0.9, 0.999],
            eps: 1e-8,
            seed: 0,
            eval_every: 500,
            near: None,
            far: None,
            grid: [64, 64, 64],
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.lambda_depth >= 0.0 && self.lambda_depth.is_finite()) {
            return bad(format!(
                "lambda_depth must be finite and non-negative, got {}",
                self.lambda_depth
            ));
        }
        if self.samples_per_ray < 2 {
            return bad(format!(
                "samples_per_ray must be at least 2, got {}",
                self.samples_per_ray
            ));
        }
        if self.rays_per_batch == 0 || self.eval_every == 0 {
            return bad("rays_per_batch and eval_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.keypoint_ray_fraction) {
            return bad(format!(
                "keypoint_ray_fraction must lie in [0, 1], got {}",
                self.keypoint_ray_fraction
            ));
        }
        if !(self.lr > 0.0 && self.eps > 0.0 && self.betas.iter().all(|b| (0.0..1.0).contains(b))) {
            return bad("lr and eps must be positive and betas in [0, 1)".into());
        }
        if !(self.sigma_floor >= 0.0 && self.dense_sigma > 0.0) {
            return bad("sigma_floor must be non-negative and dense_sigma positive".into());
        }
        if self.grid.iter().any(|&d| d < 2) {
            return bad(format!(
                "grid needs at least 2 nodes per axis, got {:?}",
                self.grid
            ));
        }
        if let (Some(n), Some(f)) = (self.near, self.far) {
            if !(n > 0.0 && f > n) {
                return bad(format!("need 0 < near < far, got [{n}, {f}]"));
            }
        }
        Ok(())
    }

    fn depth_range(&self, ds: &SceneDataset) -> Result<(f64, f64), TrainError> {
        let (near, far) = (self.near.unwrap_or(ds.near), self.far.unwrap_or(ds.far));
        if !(near > 0.0 && far > near) {
            return Err(TrainError::Config(format!(
                "need 0 < near < far, got [{near}, {far}]"
            )));
        }
        Ok((near, far))
    }
}

/// First/second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Panics if the slices differ in length.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: [f64; 2],
    eps: f64,
) {
    assert!(
        params.len() == grads.len()
            && params.len() == state.m.len()
            && params.len() == state.v.len(),
        "adam_step: parameter, gradient and state lengths differ"
    );
    state.step += 1;
    let [b1, b2] = betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
}

/// A supervised training ray.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRay {
    pub ray: Ray,
    pub rgb: [f64; 3],
    pub depth: Option<DepthTarget>,
    /// Seeds this ray's stratified sample jitter.
    pub jitter_seed: u64,
}

#[derive(Debug, Clone)]
struct DepthRay {
    view: usize,
    u: f64,
    v: f64,
    rgb: [f64; 3],
    target: DepthTarget,
}

/// Everything a batch is drawn from.
#[derive(Debug, Clone)]
pub struct RayPool<'a> {
    views: Vec<&'a View>,
    depth_rays: Vec<DepthRay>,
    near: f64,
    far: f64,
    n_depth: usize,
    batch: usize,
}

impl<'a> RayPool<'a> {
    pub fn new(ds: &'a SceneDataset, cfg: &TrainConfig) -> Result<Self, TrainError> {
        if ds.train.is_empty() {
            return Err(TrainError::Config("dataset has no training views".into()));
        }
        let (near, far) = cfg.depth_range(ds)?;
        let views: Vec<&View> = ds.train.iter().collect();
        let mut depth_rays = Vec::new();
        if cfg.dense_depth {
            for (vi, view) in views.iter().enumerate() {
                let (w, h) = view.image.shape();
                for y in 0..h {
                    for x in 0..w {
                        let d = view.depth.get(x, y);
                        if d > 0.0 {
                            depth_rays.push(DepthRay {
                                view: vi,
                                u: x as f64 + 0.5,
                                v: y as f64 + 0.5,
                                rgb: view.image.get(x, y),
                                target: DepthTarget::new(d, cfg.dense_sigma, cfg.sigma_floor)?,
                            });
                        }
                    }
                }
            }
        } else {
            for kp in &ds.keypoints {
                let vi = views
                    .iter()
                    .position(|v| v.id == kp.image_id)
                    .ok_or_else(|| {
                        TrainError::Config(format!(
                            "keypoint references unknown training view {}",
                            kp.image_id
                        ))
                    })?;
                depth_rays.push(DepthRay {
                    view: vi,
                    u: kp.u,
                    v: kp.v,
                    rgb: views[vi].image.bilinear(kp.u, kp.v),
                    target: DepthTarget::new(kp.depth, kp.sigma_hat, cfg.sigma_floor)?,
                });
            }
        }
        let n_depth = (cfg.keypoint_ray_fraction * cfg.rays_per_batch as f64).floor() as usize;
        if n_depth > 0 && depth_rays.is_empty() {
            return Err(TrainError::Config(
                "keypoint rays requested but the dataset provides no depth targets".into(),
            ));
        }
        Ok(Self {
            views,
            depth_rays,
            near,
            far,
            n_depth,
            batch: cfg.rays_per_batch,
        })
    }

    /// `floor(fraction * B)` depth rays, then pixel-center rays without depth.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<BatchRay> {
        let mut out = Vec::with_capacity(self.batch);
        for _ in 0..self.n_depth {
            let d = &self.depth_rays[rng.gen_range(0..self.depth_rays.len())];
            out.push(BatchRay {
                ray: self.views[d.view]
                    .camera
                    .ray_unchecked(d.u, d.v, self.near, self.far),
                rgb: d.rgb,
                depth: Some(d.target),
                jitter_seed: rng.gen(),
            });
        }
        for _ in self.n_depth..self.batch {
            let view = self.views[rng.gen_range(0..self.views.len())];
            let (w, h) = view.image.shape();
            let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
            out.push(BatchRay {
                ray: view
                    .camera
                    .ray_unchecked(x as f64 + 0.5, y as f64 + 0.5, self.near, self.far),
                rgb: view.image.get(x, y),
                depth: None,
                jitter_seed: rng.gen(),
            });
        }
        out
    }
}

pub fn sample_ray_batch<R: Rng + ?Sized>(
    ds: &SceneDataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<BatchRay>, TrainError> {
    Ok(RayPool::new(ds, cfg)?.sample(rng))
}

/// Raw-space gradient contributions of one ray, replayed in ray order so the
/// reduction does not depend on thread scheduling.
#[derive(Default)]
struct GradRecord(Vec<(GridHandle, [f64; CHANNELS])>);

impl GradSink for GradRecord {
    fn accumulate(&mut self, sample: &FieldSample, d_sigma: f64, d_rgb: [f64; 3]) {
        let Some(handle) = sample.handle else {
            return;
        };
        let ds = d_sigma * sample.sigma_slope();
        let s = sample.rgb_slope();
        self.0.push((
            handle,
            [ds, d_rgb[0] * s[0], d_rgb[1] * s[1], d_rgb[2] * s[2]],
        ));
    }
}

impl TrainError {
    fn at_iteration(self, iteration: usize) -> Self {
        match self {
            TrainError::NonFinite {
                ray,
                origin,
                direction,
                target,
                detail,
                ..
            } => TrainError::NonFinite {
                iteration,
                ray,
                origin,
                direction,
                target,
                detail,
            },
            other => other,
        }
    }
}

/// Loss of a batch and its gradient with respect to the raw field
/// parameters, written into `grad` (same layout as [`VoxelField::params`]).
///
/// The objective is the mean squared color error over all rays plus
/// `lambda_depth` times the mean depth loss over the rays that carry a depth
/// target. Rays are rendered and differentiated in parallel; their gradient
/// contributions are summed in batch order, so the result is independent of
/// the thread count.
pub fn batch_objective(
    field: &VoxelField,
    batch: &[BatchRay],
    samples: Vec<RaySamples>,
    mode: DepthMode,
    lambda_depth: f64,
    grad: &mut [f64],
) -> Result<LossReport, TrainError> {
    assert_eq!(batch.len(), samples.len(), "one sample set per ray");
    assert_eq!(
        grad.len(),
        field.params().len(),
        "gradient buffer does not match the field"
    );
    let renders: Vec<RayRender> = batch
        .par_iter()
        .zip(samples)
        .map(|(b, s)| render_ray(field, &b.ray, s))
        .collect();

    let colors: Vec<[f64; 3]> = renders.iter().map(|r| r.color).collect();
    let targets: Vec<[f64; 3]> = batch.iter().map(|b| b.rgb).collect();
    let (c_loss, d_colors) = color_loss(&colors, &targets)?;
    let n_kp = batch.iter().filter(|b| b.depth.is_some()).count();
    let depth_scale = if n_kp > 0 {
        lambda_depth / n_kp as f64
    } else {
        0.0
    };

    let results: Vec<(f64, GradRecord)> = renders
        .par_iter()
        .zip(batch)
        .zip(&d_colors)
        .map(|((r, b), dc)| {
            let mut rec = GradRecord::default();
            let (loss, d_depth, d_weights) = match (mode, b.depth) {
                (DepthMode::Kl, Some(t)) => {
                    let (l, mut g) = depth_kl_loss(r, &t);
                    g.iter_mut().for_each(|x| *x *= depth_scale);
                    (l, 0.0, Some(g))
                }
                (DepthMode::Mse, Some(t)) => {
                    let (l, g) = depth_mse_loss(r, &t);
                    (l, g * depth_scale, None)
                }
                _ => (0.0, 0.0, None),
            };
            render_ray_backward(r, *dc, d_depth, d_weights.as_deref(), &mut rec);
            (loss, rec)
        })
        .collect();

    let non_finite = |i: usize, detail: String| TrainError::NonFinite {
        iteration: 0,
        ray: i,
        origin: batch[i].ray.origin.into(),
        direction: batch[i].ray.direction.into(),
        target: batch[i].depth,
        detail,
    };
    let mut d_loss = 0.0;
    for (i, (l, _)) in results.iter().enumerate() {
        let ray_color: f64 = (0..3).map(|c| (colors[i][c] - targets[i][c]).powi(2)).sum();
        if !l.is_finite() || !ray_color.is_finite() {
            return Err(non_finite(
                i,
                format!("color error {ray_color}, depth loss {l}"),
            ));
        }
        d_loss += l;
    }
    let d_loss = if n_kp > 0 { d_loss / n_kp as f64 } else { 0.0 };
    let report = total_loss(c_loss, d_loss, lambda_depth, mode, batch.len() - n_kp, n_kp)?;

    grad.iter_mut().for_each(|g| *g = 0.0);
    let dims = field.dims();
    for (i, (_, rec)) in results.iter().enumerate() {
        for (h, d) in &rec.0 {
            if d.iter().any(|x| !x.is_finite()) {
                return Err(non_finite(i, format!("non-finite gradient {d:?}")));
            }
            for (node, w) in h.corners(dims) {
                let slot = &mut grad[node * CHANNELS..(node + 1) * CHANNELS];
                for c in 0..CHANNELS {
                    slot[c] += w * d[c];
                }
            }
        }
    }
    Ok(report)
}

/// One evaluation of the held-out views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    pub iter: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub depth_err_pct: f64,
    /// Mean termination variance over all test rays.
    pub mean_depth_var: f64,
    pub align: (f64, f64),
}

/// Field rendered from one camera with midpoint samples.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: Image,
    pub depth: DepthMap,
    pub depth_var: Vec<f64>,
}

pub fn render_camera(
    field: &VoxelField,
    camera: &Camera,
    near: f64,
    far: f64,
    samples: usize,
) -> RenderedView {
    let (w, h) = (camera.width() as usize, camera.height() as usize);
    let px: Vec<([f64; 3], f64, f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let r = render_pixel(
                field,
                camera,
                (i % w) as f64 + 0.5,
                (i / w) as f64 + 0.5,
                near,
                far,
                samples,
            );
            (r.color, r.depth_mean, r.depth_var)
        })
        .collect();
    RenderedView {
        image: Image::from_pixels(w, h, px.iter().map(|p| p.0).collect()),
        depth: DepthMap::from_values(w, h, px.iter().map(|p| p.1).collect()),
        depth_var: px.iter().map(|p| p.2).collect(),
    }
}

fn render_pixel(
    field: &VoxelField,
    camera: &Camera,
    u: f64,
    v: f64,
    near: f64,
    far: f64,
    k: usize,
) -> RayRender {
    let ray = camera.ray_unchecked(u, v, near, far);
    let samples =
        stratified_samples(&ray, k, SamplingMode::MIDPOINT).expect("sample count validated");
    render_ray(field, &ray, samples)
}

/// Scale and shift mapping rendered depth to reference depth, fitted on the
/// training-view pixels that contain a keypoint.
pub fn fit_alignment(
    field: &VoxelField,
    ds: &SceneDataset,
    near: f64,
    far: f64,
    samples: usize,
) -> AlignParams {
    let pairs: Vec<(f64, f64)> = ds
        .keypoints
        .par_iter()
        .filter_map(|kp| {
            let view = ds.train_view(kp.image_id)?;
            let reference = view.depth.at_pixel_containing(kp.u, kp.v)?;
            let (x, y) = (kp.u.floor() + 0.5, kp.v.floor() + 0.5);
            Some((
                render_pixel(field, &view.camera, x, y, near, far, samples).depth_mean,
                reference,
            ))
        })
        .collect();
    let (src, reference): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    match fit_scale_shift(&src, &reference) {
        Ok(a) => a,
        Err(e) => {
            log::warn!("depth alignment fell back to identity: {e}");
            AlignParams::IDENTITY
        }
    }
}

pub fn evaluate(
    field: &VoxelField,
    ds: &SceneDataset,
    near: f64,
    far: f64,
    samples: usize,
    iter: usize,
) -> Result<MetricRow, TrainError> {
    if ds.test.is_empty() {
        return Err(TrainError::Eval(EvalError::EmptyEvaluation));
    }
    let align = fit_alignment(field, ds, near, far, samples);
    let (mut p, mut s, mut var, mut n_rays) = (0.0, 0.0, 0.0, 0usize);
    let (mut pred, mut reference) = (Vec::new(), Vec::new());
    for view in &ds.test {
        let r = render_camera(field, &view.camera, near, far, samples);
        p += psnr(&r.image, &view.image)?;
        s += ssim(&r.image, &view.image)?;
        var += r.depth_var.iter().sum::<f64>();
        n_rays += r.depth_var.len();
        pred.extend_from_slice(r.depth.values());
        reference.extend_from_slice(view.depth.values());
    }
    let n = ds.test.len() as f64;
    Ok(MetricRow {
        iter,
        psnr: p / n,
        ssim: s / n,
        depth_err_pct: depth_error(&pred, &reference, align)?,
        mean_depth_var: var / n_rays as f64,
        align: (align.a, align.b),
    })
}

/// Stateful optimizer over one dataset.
pub struct Trainer<'a> {
    ds: &'a SceneDataset,
    cfg: TrainConfig,
    pool: RayPool<'a>,
    field: VoxelField,
    adam: AdamState,
    grad: Vec<f64>,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(ds: &'a SceneDataset, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let pool = RayPool::new(ds, &cfg)?;
        let field = VoxelField::new(cfg.grid, ds.bbox_min, ds.bbox_max)?;
        let n = field.params().len();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            ds,
            cfg,
            pool,
            field,
            adam: AdamState::new(n),
            grad: vec![0.0; n],
            rng,
            iteration: 0,
        })
    }

    pub fn field(&self) -> &VoxelField {
        &self.field
    }

    pub fn into_field(self) -> VoxelField {
        self.field
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One optimization step on a fresh batch.
    pub fn step(&mut self) -> Result<LossReport, TrainError> {
        let batch = self.pool.sample(&mut self.rng);
        let k = self.cfg.samples_per_ray;
        let samples: Vec<RaySamples> = batch
            .iter()
            .map(|b| {
                let mut jitter = ChaCha8Rng::seed_from_u64(b.jitter_seed);
                stratified_samples(&b.ray, k, SamplingMode::Stratified(&mut jitter))
                    .expect("sample count validated")
            })
            .collect();
        let report = batch_objective(
            &self.field,
            &batch,
            samples,
            self.cfg.depth_mode,
            self.cfg.lambda_depth,
            &mut self.grad,
        )
        .map_err(|e| e.at_iteration(self.iteration + 1))?;
        adam_step(
            self.field.params_mut(),
            &self.grad,
            &mut self.adam,
            self.cfg.lr,
            self.cfg.betas,
            self.cfg.eps,
        );
        self.iteration += 1;
        Ok(report)
    }

    pub fn evaluate(&self) -> Result<MetricRow, TrainError> {
        let (near, far) = self.cfg.depth_range(self.ds)?;
        evaluate(
            &self.field,
            self.ds,
            near,
            far,
            self.cfg.samples_per_ray,
            self.iteration,
        )
    }

    fn checkpoint(&self) -> Result<(), TrainError> {
        if let Some(dir) = &self.cfg.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(FieldError::Io)?;
            self.field
                .save(&dir.join(format!("checkpoint_{:06}.dsvf", self.iteration)))?;
        }
        Ok(())
    }
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub field: VoxelField,
    pub history: Vec<MetricRow>,
    pub losses: Vec<LossReport>,
}

/// Runs `cfg.iters` steps, evaluating every `eval_every` iterations and after
/// the last one.
pub fn train(ds: &SceneDataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(ds, cfg, |_| {})
}

/// As [`train`], calling `on_eval` with each metric row as it is produced.
pub fn train_with(
    ds: &SceneDataset,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&MetricRow),
) -> Result<TrainOutcome, TrainError> {
    let mut t = Trainer::new(ds, cfg.clone())?;
    let mut history = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iters);
    while t.iteration() < cfg.iters {
        losses.push(t.step()?);
        if t.iteration() % cfg.eval_every == 0 || t.iteration() == cfg.iters {
            let row = t.evaluate()?;
            log::info!(
                "iter {:>6}  loss {:.5}  psnr {:.2}  ssim {:.3}  depth err {:.2}%",
                row.iter,
                losses.last().map_or(f64::NAN, |l| l.total),
                row.psnr,
                row.ssim,
                row.depth_err_pct
            );
            on_eval(&row);
            history.push(row);
            t.checkpoint()?;
        }
    }
    Ok(TrainOutcome {
        field: t.into_field(),
        history,
        losses,
    })
}

/// Mean termination variance over all test rays.
pub fn mean_test_variance(
    field: &VoxelField,
    ds: &SceneDataset,
    near: f64,
    far: f64,
    samples: usize,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in &ds.test {
        let r = render_camera(field, &v.camera, near, far, samples);
        sum += r.depth_var.iter().sum::<f64>();
        n += r.depth_var.len();
    }
    sum / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_dataset, scene_by_name, GenOptions};

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![0.3, -1.0, 2.0];
        let mut s = AdamState::new(3);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0; 3], &mut s, 0.1, [0.9, 0.999], 1e-8);
        }
        assert_eq!(p, vec![0.3, -1.0, 2.0]);
        assert_eq!(s.step, 10);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1, [0.9, 0.999], 1e-12);
        assert!((p[0] - 0.9).abs() < 1e-10);
    }

    #[test]
    fn adam_quadratic_bowl() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        for _ in 0..200 {
            let g = [2.0 * p[0]];
            adam_step(&mut p, &g, &mut s, 0.05, [0.9, 0.999], 1e-8);
        }
        assert!(p[0].abs() < 1e-2, "{}", p[0]);
    }

    #[test]
    #[should_panic(expected = "lengths differ")]
    fn adam_shape_mismatch() {
        adam_step(
            &mut [0.0; 2],
            &[0.0; 3],
            &mut AdamState::new(2),
            0.1,
            [0.9, 0.999],
            1e-8,
        );
    }

    fn tiny_dataset() -> SceneDataset {
        let scene = scene_by_name("sphere").unwrap();
        gen_dataset(
            &scene,
            &GenOptions {
                resolution: 32,
                points_per_view: 64,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn batch_composition() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            rays_per_batch: 10,
            keypoint_ray_fraction: 0.35,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_ray_batch(&ds, &cfg, &mut rng).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.iter().filter(|r| r.depth.is_some()).count(), 3);
        assert!(b[..3].iter().all(|r| r.depth.is_some()));
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_ray_batch(&ds, &cfg, &mut rng2).unwrap(), b);
        let cfg0 = TrainConfig {
            keypoint_ray_fraction: 0.0,
            ..cfg
        };
        assert!(sample_ray_batch(&ds, &cfg0, &mut rng)
            .unwrap()
            .iter()
            .all(|r| r.depth.is_none()));
    }

    #[test]
    fn keypoint_rgb_is_bilinear() {
        let mut ds = tiny_dataset();
        let cam = Camera::new(2.0, 2.0, 1.0, 1.0, 2, 2, &nalgebra::Matrix4::identity()).unwrap();
        let image = Image::from_pixels(2, 2, vec![[0.0; 3], [1.0; 3], [1.0; 3], [0.0; 3]]);
        ds.train = vec![View {
            id: 1,
            camera: cam,
            image,
            depth: DepthMap::from_values(2, 2, vec![1.0; 4]),
        }];
        ds.keypoints = vec![crate::sfm::KeypointDepth {
            image_id: 1,
            u: 1.0,
            v: 1.0,
            depth: 2.0,
            sigma_hat: 0.1,
            point3d_id: 1,
        }];
        let cfg = TrainConfig {
            rays_per_batch: 4,
            keypoint_ray_fraction: 1.0,
            ..Default::default()
        };
        let b = sample_ray_batch(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(b.iter().all(|r| r.rgb == [0.5; 3]));
        ds.keypoints.clear();
        assert!(matches!(
            sample_ray_batch(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn zero_iterations_returns_initial_field() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            iters: 0,
            grid: [8, 8, 8],
            ..Default::default()
        };
        let out = train(&ds, &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(
            out.field,
            VoxelField::new([8, 8, 8], ds.bbox_min, ds.bbox_max).unwrap()
        );
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig {
                lambda_depth: -1.0,
                ..ok.clone()
            },
            TrainConfig {
                keypoint_ray_fraction: 1.5,
                ..ok.clone()
            },
            TrainConfig {
                samples_per_ray: 1,
                ..ok.clone()
            },
            TrainConfig {
                grid: [1, 4, 4],
                ..ok.clone()
            },
            TrainConfig {
                betas: [1.0, 0.9],
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
        let parsed: TrainConfig =
            serde_json::from_str(r#"{"lambda_depth": 0.5, "depth_mode": "mse"}"#).unwrap();
        assert_eq!(parsed.depth_mode, DepthMode::Mse);
        assert_eq!(parsed.iters, 5000);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda": 1}"#).is_err());
    }
}
