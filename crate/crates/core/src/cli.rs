//! Command-line front end. Exit codes: 0 success, 1 usage, 2 input or parse
//! error, 3 numerical abort.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::camera::Camera;
use crate::dataset::{gen_dataset_with_model, scene_by_name, GenOptions, SceneDataset, SfmSource};
use crate::experiment::{
    compare, desk_config, sweep_lambda, write_compare_csv, write_metrics_csv, write_sweep_csv,
    ExperimentError, SceneSetup, Variant,
};
use crate::field::VoxelField;
use crate::sfm::{
    extract_keypoint_depths, write_keypoints_csv, KeypointOptions, ModelFormat, PoseConvention,
    SfmModel, SigmaScale,
};
use crate::train::{evaluate, render_camera, train_with, TrainConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Input(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Config(_) | TrainError::Loss(_) => CliError::Usage(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "raydepth",
    version,
    about = "Depth-supervised voxel radiance fields on synthetic scenes"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene and write it as a dataset directory.
    Synth(SynthArgs),
    /// Train a field on a dataset.
    Train(TrainArgs),
    /// Render a checkpoint from a camera.
    Render(RenderArgs),
    /// Evaluate a checkpoint on a dataset's test views.
    Eval(EvalArgs),
    /// Convert a COLMAP sparse model into a keypoint depth CSV.
    ColmapExport(ExportArgs),
    /// Train the KL, MSE and depth-free variants and tabulate iterations to a PSNR threshold.
    Compare(CompareArgs),
    /// Train one variant for each of several depth weights and tabulate final metrics.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SfmKind {
    Noiseless,
    Simulated,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Binary,
    Text,
}

impl From<FormatArg> for ModelFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Binary => ModelFormat::Binary,
            FormatArg::Text => ModelFormat::Text,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConventionArg {
    Colmap,
    Opengl,
}

impl From<ConventionArg> for PoseConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Colmap => PoseConvention::Colmap,
            ConventionArg::Opengl => PoseConvention::OpenGl,
        }
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be finite and non-negative, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "sphere-plane")]
    scene: String,
    /// Number of training views.
    #[arg(long, default_value = "2", value_parser = positive_count)]
    views: usize,
    #[arg(long, default_value = "3", value_parser = positive_count)]
    test_views: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value = "64")]
    resolution: u32,
    #[arg(long, value_enum, default_value = "simulated")]
    sfm: SfmKind,
    /// Simulated SfM point noise (world units).
    #[arg(long, default_value = "0.02", value_parser = non_negative)]
    noise: f64,
    /// Read keypoints and training poses from this COLMAP model instead of
    /// simulating. Simulated models are written to `<out>/sparse`.
    #[arg(long)]
    sfm_model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "binary")]
    sfm_format: FormatArg,
    #[arg(long, value_enum, default_value = "colmap")]
    convention: ConventionArg,
    #[arg(long, default_value = "256", value_parser = positive_count)]
    points_per_view: usize,
    #[arg(long, default_value = "0")]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON training configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = non_negative)]
    lambda_depth: Option<f64>,
    #[arg(long)]
    depth_mode: Option<Variant>,
    /// Use only the first N training views.
    #[arg(long, value_parser = positive_count)]
    views: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics.csv, field.dsvf and checkpoints.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Camera JSON (width, height, fx, fy, cx, cy, row-major cam_to_world).
    #[arg(long, conflicts_with_all = ["data", "view"])]
    camera: Option<PathBuf>,
    /// Dataset providing the camera, near and far.
    #[arg(long, requires = "view")]
    data: Option<PathBuf>,
    #[arg(long)]
    view: Option<u32>,
    #[arg(long)]
    near: Option<f64>,
    #[arg(long)]
    far: Option<f64>,
    #[arg(long, default_value = "128")]
    samples: usize,
    /// Output directory for image.ppm and depth.dsdm.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "128")]
    samples: usize,
    /// Experiment label of the CSV row.
    #[arg(long, default_value = "eval")]
    experiment: String,
    /// Iteration recorded in the CSV row.
    #[arg(long, default_value = "0")]
    iter: usize,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "colmap")]
    convention: ConventionArg,
    #[arg(long, default_value = "0.001", value_parser = non_negative)]
    sigma_floor: f64,
    /// Fixed factor from pixel error to depth deviation; depth over focal length if omitted.
    #[arg(long, value_parser = non_negative)]
    sigma_scale: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long, default_value = "2", value_parser = positive_count)]
    views: usize,
    #[arg(long, default_value = "0")]
    seed: u64,
    #[arg(long, default_value = "sphere-plane")]
    scene: String,
    /// JSON training configuration; defaults to the desk-scale preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Directory for compare.csv and metrics.csv; the table also goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated depth weights.
    #[arg(long, value_delimiter = ',', value_parser = non_negative, default_value = "0,0.03,0.1,0.3,1")]
    lambdas: Vec<f64>,
    #[arg(long, default_value = "kl")]
    depth_mode: Variant,
    #[arg(long, default_value = "2", value_parser = positive_count)]
    views: usize,
    #[arg(long, default_value = "0")]
    seed: u64,
    #[arg(long, default_value = "sphere-plane")]
    scene: String,
    /// JSON training configuration; defaults to the desk-scale preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::ColmapExport(a) => export_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let scene = scene_by_name(&a.scene).map_err(|e| CliError::Usage(e.to_string()))?;
    let sfm = match (a.sfm_model, a.sfm) {
        (Some(path), _) => SfmSource::External {
            path,
            format: a.sfm_format.into(),
        },
        (None, SfmKind::Noiseless) => SfmSource::Noiseless,
        (None, SfmKind::Simulated) => SfmSource::Simulated(a.noise),
    };
    let opts = GenOptions {
        n_train: a.views,
        n_test: a.test_views,
        resolution: a.resolution,
        sfm,
        points_per_view: a.points_per_view,
        keypoints: KeypointOptions {
            convention: a.convention.into(),
            ..Default::default()
        },
        seed: a.seed,
    };
    let external = matches!(opts.sfm, SfmSource::External { .. });
    let (ds, model) = gen_dataset_with_model(&scene, &opts).map_err(input)?;
    ds.write(&a.out).map_err(input)?;
    if !external {
        model
            .write(&a.out.join("sparse"), ModelFormat::Binary)
            .map_err(input)?;
    }
    log::info!(
        "wrote {} train / {} test views and {} keypoints to {}",
        ds.train.len(),
        ds.test.len(),
        ds.keypoints.len(),
        a.out.display()
    );
    Ok(())
}

fn load_config(path: Option<&Path>, base: TrainConfig) -> Result<TrainConfig, CliError> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn restrict_views(ds: &mut SceneDataset, n: usize) -> Result<(), CliError> {
    if n > ds.train.len() {
        return Err(CliError::Usage(format!(
            "--views {n} exceeds the dataset's {} training views",
            ds.train.len()
        )));
    }
    ds.train.truncate(n);
    let kept: Vec<u32> = ds.train.iter().map(|v| v.id).collect();
    ds.keypoints.retain(|k| kept.contains(&k.image_id));
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref(), TrainConfig::default())?;
    let mut variant = None;
    if let Some(v) = a.depth_mode {
        cfg = v.configure(&cfg);
        variant = Some(v);
    }
    if let Some(l) = a.lambda_depth {
        cfg.lambda_depth = l;
    }
    if let Some(i) = a.iters {
        cfg.iters = i;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.checkpoint_dir
        .get_or_insert_with(|| a.out.join("checkpoints"));
    cfg.validate()?;
    let mut ds = SceneDataset::read(&a.data).map_err(input)?;
    if let Some(n) = a.views {
        restrict_views(&mut ds, n)?;
    }
    create_dir(&a.out)?;
    let name = variant.map_or_else(
        || {
            if cfg.dense_depth {
                "dense".to_string()
            } else {
                cfg.depth_mode.to_string()
            }
        },
        |v| v.to_string(),
    );
    let out = train_with(&ds, &cfg, |_| {})?;
    write_metrics_csv(
        create_file(&a.out.join("metrics.csv"))?,
        &[(&name, ds.train.len(), &out.history)],
    )
    .map_err(input)?;
    out.field.save(&a.out.join("field.dsvf")).map_err(input)?;
    let cfg_text = serde_json::to_string_pretty(&cfg).map_err(input)?;
    fs::write(a.out.join("config.json"), cfg_text + "\n").map_err(input)?;
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<(), CliError> {
    if a.samples < 2 {
        return Err(CliError::Usage("--samples must be at least 2".into()));
    }
    let field = VoxelField::load(&a.checkpoint).map_err(input)?;
    let (camera, near, far) = match (&a.camera, &a.data, a.view) {
        (Some(path), _, _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let cam: Camera = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let (Some(n), Some(f)) = (a.near, a.far) else {
                return Err(CliError::Usage("--camera needs --near and --far".into()));
            };
            (cam, n, f)
        }
        (None, Some(data), Some(id)) => {
            let ds = SceneDataset::read(data).map_err(input)?;
            let view = ds
                .views()
                .find(|(_, v)| v.id == id)
                .map(|(_, v)| v.camera.clone())
                .ok_or_else(|| CliError::Usage(format!("dataset has no view {id}")))?;
            (view, a.near.unwrap_or(ds.near), a.far.unwrap_or(ds.far))
        }
        _ => {
            return Err(CliError::Usage(
                "give either --camera or --data with --view".into(),
            ))
        }
    };
    if !(near > 0.0 && far > near) {
        return Err(CliError::Usage(format!(
            "need 0 < near < far, got [{near}, {far}]"
        )));
    }
    let r = render_camera(&field, &camera, near, far, a.samples);
    create_dir(&a.out)?;
    r.image.save_ppm(&a.out.join("image.ppm")).map_err(input)?;
    r.depth.save(&a.out.join("depth.dsdm")).map_err(input)?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    if a.samples < 2 {
        return Err(CliError::Usage("--samples must be at least 2".into()));
    }
    let field = VoxelField::load(&a.checkpoint).map_err(input)?;
    let ds = SceneDataset::read(&a.data).map_err(input)?;
    let row = evaluate(&field, &ds, ds.near, ds.far, a.samples, a.iter)?;
    let rows = [(
        a.experiment.as_str(),
        ds.train.len(),
        std::slice::from_ref(&row),
    )];
    match &a.out {
        Some(p) => write_metrics_csv(create_file(p)?, &rows),
        None => write_metrics_csv(std::io::stdout().lock(), &rows),
    }
    .map_err(input)
}

fn export_cmd(a: ExportArgs) -> Result<(), CliError> {
    let model = SfmModel::read(&a.model, a.format.into()).map_err(input)?;
    let opts = KeypointOptions {
        sigma_floor: a.sigma_floor,
        sigma_scale: a
            .sigma_scale
            .map_or(SigmaScale::DepthOverFocal, SigmaScale::Fixed),
        convention: a.convention.into(),
    };
    let mut all = Vec::new();
    let mut ids: Vec<u32> = model.images.keys().copied().collect();
    ids.sort_unstable();
    for id in ids {
        all.extend(extract_keypoint_depths(&model, id, &opts).map_err(input)?);
    }
    let mut w = create_file(&a.out)?;
    write_keypoints_csv(&all, &mut w).map_err(input)?;
    w.flush().map_err(input)
}

fn compare_cmd(a: CompareArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref(), desk_config())?;
    if let Some(i) = a.iters {
        cfg.iters = i;
    }
    if let Some(e) = a.eval_every {
        cfg.eval_every = e;
    }
    cfg.validate()?;
    scene_by_name(&a.scene).map_err(|e| CliError::Usage(e.to_string()))?;
    let setup = SceneSetup {
        scene: a.scene,
        ..Default::default()
    };
    let (rows, runs) = compare(&setup, &cfg, a.views, a.seed).map_err(experiment_error)?;
    write_compare_csv(std::io::stdout().lock(), &rows).map_err(input)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_compare_csv(create_file(&dir.join("compare.csv"))?, &rows).map_err(input)?;
        let hist: Vec<(&str, usize, &[crate::train::MetricRow])> = runs
            .iter()
            .map(|r| (r.variant.name(), r.views, r.history.as_slice()))
            .collect();
        write_metrics_csv(create_file(&dir.join("metrics.csv"))?, &hist).map_err(input)?;
    }
    Ok(())
}

fn experiment_error(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Train(t) => CliError::from(t),
        other => input(other),
    }
}

fn sweep_cmd(a: SweepArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref(), desk_config())?;
    if let Some(i) = a.iters {
        cfg.iters = i;
    }
    cfg.validate()?;
    scene_by_name(&a.scene).map_err(|e| CliError::Usage(e.to_string()))?;
    let setup = SceneSetup {
        scene: a.scene,
        ..Default::default()
    };
    let rows = sweep_lambda(&setup, &cfg, a.depth_mode, &a.lambdas, a.views, a.seed)
        .map_err(experiment_error)?;
    match &a.out {
        Some(p) => write_sweep_csv(create_file(p)?, &rows),
        None => write_sweep_csv(std::io::stdout().lock(), &rows),
    }
    .map_err(input)
}
