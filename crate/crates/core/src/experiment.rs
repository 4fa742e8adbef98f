//! Preset comparisons between depth-supervision variants on synthetic scenes.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    gen_dataset, scene_by_name, DatasetError, GenOptions, SceneDataset, SfmSource,
};
use crate::loss::DepthMode;
use crate::train::{train, MetricRow, TrainConfig, TrainError, TrainOutcome};

/// Training settings of the desk-scale comparisons: a 32^3 grid, 64 samples
/// per ray, and a depth floor of about one voxel so that the Gaussian target
/// stays representable by trilinear density.
pub fn desk_config() -> TrainConfig {
    TrainConfig {
        lambda_depth: 0.3,
        sigma_floor: 0.25,
        samples_per_ray: 64,
        rays_per_batch: 256,
        lr: 0.1,
        grid: [32, 32, 32],
        iters: 5000,
        eval_every: 250,
        ..TrainConfig::default()
    }
}

/// Depth supervision variant of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Kl,
    Mse,
    None,
    Dense,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Kl, Variant::Mse, Variant::None, Variant::Dense];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Kl => "kl",
            Variant::Mse => "mse",
            Variant::None => "none",
            Variant::Dense => "dense",
        }
    }

    /// `base` with this variant's depth mode.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let (depth_mode, dense_depth) = match self {
            Variant::Kl => (DepthMode::Kl, false),
            Variant::Mse => (DepthMode::Mse, false),
            Variant::None => (DepthMode::None, false),
            Variant::Dense => (DepthMode::Kl, true),
        };
        TrainConfig {
            depth_mode,
            dense_depth,
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown depth mode '{s}' (expected kl, mse, none or dense)"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Scene and dataset settings shared by every run of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSetup {
    pub scene: String,
    pub test_views: usize,
    pub resolution: u32,
    /// Standard deviation of the simulated SfM point noise, world units.
    pub sfm_noise: f64,
    pub points_per_view: usize,
}

impl Default for SceneSetup {
    fn default() -> Self {
        Self {
            scene: "sphere-plane".into(),
            test_views: 3,
            resolution: 64,
            sfm_noise: 0.02,
            points_per_view: 256,
        }
    }
}

impl SceneSetup {
    pub fn dataset(&self, views: usize, seed: u64) -> Result<SceneDataset, DatasetError> {
        let scene = scene_by_name(&self.scene)?;
        let sfm = if self.sfm_noise > 0.0 {
            SfmSource::Simulated(self.sfm_noise)
        } else {
            SfmSource::Noiseless
        };
        gen_dataset(
            &scene,
            &GenOptions {
                n_train: views,
                n_test: self.test_views,
                resolution: self.resolution,
                sfm,
                points_per_view: self.points_per_view,
                seed,
                ..Default::default()
            },
        )
    }
}

/// One finished training run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub variant: Variant,
    pub views: usize,
    pub seed: u64,
    pub iters: usize,
    pub history: Vec<MetricRow>,
}

impl RunRecord {
    pub fn last(&self) -> Option<&MetricRow> {
        self.history.last()
    }

    /// First evaluated iteration whose PSNR reaches `threshold`.
    pub fn iterations_to_reach(&self, threshold: f64) -> Option<usize> {
        self.history
            .iter()
            .find(|r| r.psnr >= threshold)
            .map(|r| r.iter)
    }
}

pub fn run_variant(
    ds: &SceneDataset,
    base: &TrainConfig,
    variant: Variant,
    views: usize,
    seed: u64,
) -> Result<(RunRecord, TrainOutcome), ExperimentError> {
    let cfg = TrainConfig {
        seed,
        ..variant.configure(base)
    };
    let out = train(ds, &cfg)?;
    Ok((
        RunRecord {
            variant,
            views,
            seed,
            iters: cfg.iters,
            history: out.history.clone(),
        },
        out,
    ))
}

/// Summary line of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub experiment: String,
    pub views: usize,
    pub final_psnr: f64,
    pub final_ssim: f64,
    pub final_depth_err_pct: f64,
    /// PSNR the depth-free run ends at.
    pub threshold_psnr: f64,
    /// First evaluated iteration reaching `threshold_psnr`; empty if never.
    pub iters_to_threshold: Option<usize>,
    pub total_iters: usize,
}

/// Runs the KL, MSE and depth-free variants on one dataset and tabulates how
/// fast each reaches the depth-free run's final PSNR.
pub fn compare(
    setup: &SceneSetup,
    base: &TrainConfig,
    views: usize,
    seed: u64,
) -> Result<(Vec<CompareRow>, Vec<RunRecord>), ExperimentError> {
    let ds = setup.dataset(views, seed)?;
    let mut runs = Vec::new();
    for v in [Variant::Kl, Variant::Mse, Variant::None] {
        runs.push(run_variant(&ds, base, v, views, seed)?.0);
    }
    let threshold = runs[2].last().map_or(f64::NAN, |r| r.psnr);
    let rows = runs
        .iter()
        .map(|r| {
            let last = r.last().copied();
            CompareRow {
                experiment: r.variant.name().into(),
                views,
                final_psnr: last.map_or(f64::NAN, |l| l.psnr),
                final_ssim: last.map_or(f64::NAN, |l| l.ssim),
                final_depth_err_pct: last.map_or(f64::NAN, |l| l.depth_err_pct),
                threshold_psnr: threshold,
                iters_to_threshold: r.iterations_to_reach(threshold),
                total_iters: r.iters,
            }
        })
        .collect();
    Ok((rows, runs))
}

/// Final metrics of one depth weight in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda_depth: f64,
    pub views: usize,
    pub final_psnr: f64,
    pub final_ssim: f64,
    pub final_depth_err_pct: f64,
}

/// Trains `variant` once per depth weight on the same dataset.
pub fn sweep_lambda(
    setup: &SceneSetup,
    base: &TrainConfig,
    variant: Variant,
    lambdas: &[f64],
    views: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, ExperimentError> {
    let ds = setup.dataset(views, seed)?;
    lambdas
        .iter()
        .map(|&lambda_depth| {
            let cfg = TrainConfig {
                lambda_depth,
                ..base.clone()
            };
            let (rec, _) = run_variant(&ds, &cfg, variant, views, seed)?;
            let last = rec.last().copied();
            Ok(SweepRow {
                lambda_depth,
                views,
                final_psnr: last.map_or(f64::NAN, |l| l.psnr),
                final_ssim: last.map_or(f64::NAN, |l| l.ssim),
                final_depth_err_pct: last.map_or(f64::NAN, |l| l.depth_err_pct),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "lambda_depth",
        "views",
        "final_psnr",
        "final_ssim",
        "final_depth_err_pct",
    ])?;
    for r in rows {
        out.write_record([
            r.lambda_depth.to_string(),
            r.views.to_string(),
            r.final_psnr.to_string(),
            r.final_ssim.to_string(),
            r.final_depth_err_pct.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub const METRICS_HEADER: [&str; 6] = [
    "experiment",
    "views",
    "iter",
    "psnr",
    "ssim",
    "depth_err_pct",
];

/// Metric history rows in the `experiment,views,iter,psnr,ssim,depth_err_pct` layout.
pub fn write_metrics_csv<W: Write>(
    w: W,
    runs: &[(&str, usize, &[MetricRow])],
) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for (name, views, rows) in runs {
        for r in rows.iter() {
            out.write_record([
                name.to_string(),
                views.to_string(),
                r.iter.to_string(),
                r.psnr.to_string(),
                r.ssim.to_string(),
                r.depth_err_pct.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_compare_csv<W: Write>(w: W, rows: &[CompareRow]) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "experiment",
        "views",
        "final_psnr",
        "final_ssim",
        "final_depth_err_pct",
        "threshold_psnr",
        "iters_to_threshold",
        "total_iters",
    ])?;
    for r in rows {
        out.write_record([
            r.experiment.clone(),
            r.views.to_string(),
            r.final_psnr.to_string(),
            r.final_ssim.to_string(),
            r.final_depth_err_pct.to_string(),
            r.threshold_psnr.to_string(),
            r.iters_to_threshold
                .map_or(String::new(), |i| i.to_string()),
            r.total_iters.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("rgbd".parse::<Variant>().is_err());
        let base = TrainConfig::default();
        assert!(Variant::Dense.configure(&base).dense_depth);
        assert_eq!(Variant::None.configure(&base).depth_mode, DepthMode::None);
    }

    #[test]
    fn iterations_to_reach_picks_first_row() {
        let row = |iter, psnr| MetricRow {
            iter,
            psnr,
            ssim: 0.0,
            depth_err_pct: 0.0,
            mean_depth_var: 0.0,
            align: (1.0, 0.0),
        };
        let r = RunRecord {
            variant: Variant::Kl,
            views: 2,
            seed: 0,
            iters: 300,
            history: vec![row(100, 10.0), row(200, 15.0), row(300, 14.0)],
        };
        assert_eq!(r.iterations_to_reach(14.5), Some(200));
        assert_eq!(r.iterations_to_reach(16.0), None);
    }

    #[test]
    fn metrics_csv_layout() {
        let rows = [MetricRow {
            iter: 5,
            psnr: 20.5,
            ssim: 0.5,
            depth_err_pct: 3.25,
            mean_depth_var: 0.0,
            align: (1.0, 0.0),
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[("kl", 2, &rows)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "experiment,views,iter,psnr,ssim,depth_err_pct\nkl,2,5,20.5,0.5,3.25\n"
        );
    }

    #[test]
    fn desk_json_matches_preset() {
        let text = include_str!("../../../configs/desk.json");
        let cfg: TrainConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg, desk_config());
    }
}
