//! C ABI over the `raydepth` library.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every call returns an [`RdStatus`]; on
//! failure [`rd_last_error`] describes the problem. Handles are not
//! thread-safe; the last error is kept per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::mem::ManuallyDrop;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::Matrix4;
use raydepth::dataset::{
    gen_dataset, scene_by_name, DatasetError, GenOptions, SceneDataset, SfmSource,
};
use raydepth::field::FieldError;
use raydepth::train::{render_camera, TrainConfig, TrainError, Trainer};
use raydepth::{Camera, VoxelField};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Numerical = 5,
    Panic = 6,
}

/// Dataset split selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdSplit {
    Train = 0,
    Test = 1,
}

/// Pinhole camera; `cam_to_world` is row-major 4x4 and the camera looks
/// along its local -z axis with +y up.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RdCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub cam_to_world: [f64; 16],
}

/// Test-view metrics of a trainer.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RdMetrics {
    pub iteration: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub depth_err_pct: f64,
    pub mean_depth_var: f64,
}

/// Opaque dataset handle.
pub struct RdDataset(SceneDataset);

/// Opaque voxel field handle.
pub struct RdField(VoxelField);

/// Opaque trainer handle. Owns a copy of its dataset.
pub struct RdTrainer {
    trainer: ManuallyDrop<Trainer<'static>>,
    ds: *mut SceneDataset,
}

impl Drop for RdTrainer {
    fn drop(&mut self) {
        // the trainer borrows `ds`, so it goes first
        unsafe {
            ManuallyDrop::drop(&mut self.trainer);
            drop(Box::from_raw(self.ds));
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(RdStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            RdStatus::Panic
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(RdStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(RdStatus::NullPointer, format!("{what} is null"))
}

fn from_dataset(e: DatasetError) -> Failure {
    let status = match e {
        DatasetError::Io { .. } => RdStatus::Io,
        DatasetError::UnknownScene(_) | DatasetError::Invalid(_) => RdStatus::InvalidArgument,
        _ => RdStatus::Parse,
    };
    Failure(status, e.to_string())
}

fn from_field(e: FieldError) -> Failure {
    let status = match e {
        FieldError::Io(_) => RdStatus::Io,
        FieldError::Resolution(_) | FieldError::BoundingBox { .. } => RdStatus::InvalidArgument,
        _ => RdStatus::Parse,
    };
    Failure(status, e.to_string())
}

fn from_train(e: TrainError) -> Failure {
    let status = match e {
        TrainError::NonFinite { .. } => RdStatus::Numerical,
        TrainError::Field(FieldError::Io(_)) => RdStatus::Io,
        _ => RdStatus::InvalidArgument,
    };
    Failure(status, e.to_string())
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Renders a synthetic scene (`"sphere"` or `"sphere-plane"`) into a new
/// dataset. `sfm_noise` is the simulated SfM point noise; 0 gives exact points.
///
/// # Safety
/// `scene` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_dataset_generate(
    scene: *const c_char,
    n_train: u32,
    n_test: u32,
    resolution: u32,
    sfm_noise: f64,
    seed: u64,
    out: *mut *mut RdDataset,
) -> RdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let scene = scene_by_name(str_arg(scene, "scene")?).map_err(from_dataset)?;
        if !(sfm_noise >= 0.0 && sfm_noise.is_finite()) {
            return Err(invalid("sfm_noise must be finite and non-negative"));
        }
        let opts = GenOptions {
            n_train: n_train as usize,
            n_test: n_test as usize,
            resolution,
            sfm: if sfm_noise > 0.0 {
                SfmSource::Simulated(sfm_noise)
            } else {
                SfmSource::Noiseless
            },
            seed,
            ..Default::default()
        };
        *out = boxed(RdDataset(gen_dataset(&scene, &opts).map_err(from_dataset)?));
        Ok(())
    })
}

/// # Safety
/// `dir` must be a NUL-terminated path and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_dataset_load(dir: *const c_char, out: *mut *mut RdDataset) -> RdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let dir = path_arg(dir, "dir")?;
        *out = boxed(RdDataset(SceneDataset::read(&dir).map_err(from_dataset)?));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library and `dir` be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn rd_dataset_save(ds: *const RdDataset, dir: *const c_char) -> RdStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        ds.0.write(&path_arg(dir, "dir")?).map_err(from_dataset)
    })
}

/// Number of views in a split.
///
/// # Safety
/// `ds` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_dataset_view_count(
    ds: *const RdDataset,
    split: RdSplit,
    out: *mut u32,
) -> RdStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let out = out_arg(out, "out")?;
        *out = match split {
            RdSplit::Train => ds.0.train.len(),
            RdSplit::Test => ds.0.test.len(),
        } as u32;
        Ok(())
    })
}

/// Number of keypoint depth targets.
///
/// # Safety
/// `ds` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_dataset_keypoint_count(
    ds: *const RdDataset,
    out: *mut u64,
) -> RdStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(ds, "dataset")?.0.keypoints.len() as u64;
        Ok(())
    })
}

/// Camera and near/far bounds of view `index` in `split`.
///
/// # Safety
/// `ds` must come from this library; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rd_dataset_camera(
    ds: *const RdDataset,
    split: RdSplit,
    index: u32,
    camera: *mut RdCamera,
    near: *mut f64,
    far: *mut f64,
) -> RdStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let views = match split {
            RdSplit::Train => &ds.train,
            RdSplit::Test => &ds.test,
        };
        let view = views.get(index as usize).ok_or_else(|| {
            invalid(format!(
                "view index {index} out of range ({} views)",
                views.len()
            ))
        })?;
        let c = &view.camera;
        let m = c.cam_to_world();
        *out_arg(camera, "camera")? = RdCamera {
            fx: c.fx(),
            fy: c.fy(),
            cx: c.cx(),
            cy: c.cy(),
            width: c.width(),
            height: c.height(),
            cam_to_world: std::array::from_fn(|i| m[(i / 4, i % 4)]),
        };
        *out_arg(near, "near")? = ds.near;
        *out_arg(far, "far")? = ds.far;
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn rd_dataset_free(ds: *mut RdDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Creates a trainer over a copy of `ds`. `config_json` holds training
/// settings as JSON (missing keys take their defaults); null means defaults.
///
/// # Safety
/// `ds` must come from this library, `config_json` be null or NUL-terminated
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_trainer_new(
    ds: *const RdDataset,
    config_json: *const c_char,
    out: *mut *mut RdTrainer,
) -> RdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ds = handle(ds, "dataset")?;
        let cfg: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Failure(RdStatus::Parse, format!("config: {e}")))?
        };
        let owned: *mut SceneDataset = boxed(ds.0.clone());
        // SAFETY: the box outlives the trainer; see `Drop for RdTrainer`
        match Trainer::new(&*owned, cfg) {
            Ok(trainer) => {
                *out = boxed(RdTrainer {
                    trainer: ManuallyDrop::new(trainer),
                    ds: owned,
                });
                Ok(())
            }
            Err(e) => {
                drop(Box::from_raw(owned));
                Err(from_train(e))
            }
        }
    })
}

/// Runs `steps` optimization steps; `last_loss` (nullable) receives the
/// total loss of the final step.
///
/// # Safety
/// `tr` must come from this library; `last_loss` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn rd_trainer_step(
    tr: *mut RdTrainer,
    steps: u32,
    last_loss: *mut f64,
) -> RdStatus {
    guard(|| {
        let tr = tr.as_mut().ok_or_else(|| null("trainer"))?;
        let mut loss = f64::NAN;
        for _ in 0..steps {
            loss = tr.trainer.step().map_err(from_train)?.total;
        }
        if let Some(l) = last_loss.as_mut() {
            *l = loss;
        }
        Ok(())
    })
}

/// # Safety
/// `tr` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_trainer_iteration(tr: *const RdTrainer, out: *mut u64) -> RdStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(tr, "trainer")?.trainer.iteration() as u64;
        Ok(())
    })
}

/// Evaluates the current field on the dataset's test views.
///
/// # Safety
/// `tr` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_trainer_evaluate(
    tr: *const RdTrainer,
    out: *mut RdMetrics,
) -> RdStatus {
    guard(|| {
        let tr = handle(tr, "trainer")?;
        let out = out_arg(out, "out")?;
        let m = tr.trainer.evaluate().map_err(from_train)?;
        *out = RdMetrics {
            iteration: m.iter as u64,
            psnr: m.psnr,
            ssim: m.ssim,
            depth_err_pct: m.depth_err_pct,
            mean_depth_var: m.mean_depth_var,
        };
        Ok(())
    })
}

/// Copies the trainer's current field into a new handle.
///
/// # Safety
/// `tr` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_trainer_field(
    tr: *const RdTrainer,
    out: *mut *mut RdField,
) -> RdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = boxed(RdField(handle(tr, "trainer")?.trainer.field().clone()));
        Ok(())
    })
}

/// # Safety
/// `tr` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn rd_trainer_free(tr: *mut RdTrainer) {
    if !tr.is_null() {
        drop(Box::from_raw(tr));
    }
}

/// # Safety
/// `path` must be a NUL-terminated path and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_field_load(path: *const c_char, out: *mut *mut RdField) -> RdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        *out = boxed(RdField(
            VoxelField::load(&path_arg(path, "path")?).map_err(from_field)?,
        ));
        Ok(())
    })
}

/// # Safety
/// `field` must come from this library and `path` be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn rd_field_save(field: *const RdField, path: *const c_char) -> RdStatus {
    guard(|| {
        handle(field, "field")?
            .0
            .save(&path_arg(path, "path")?)
            .map_err(from_field)
    })
}

/// Grid resolution as three node counts.
///
/// # Safety
/// `field` must come from this library and `dims` point to three values.
#[no_mangle]
pub unsafe extern "C" fn rd_field_dims(field: *const RdField, dims: *mut u64) -> RdStatus {
    guard(|| {
        let d = handle(field, "field")?.0.dims();
        if dims.is_null() {
            return Err(null("dims"));
        }
        for (i, v) in d.iter().enumerate() {
            *dims.add(i) = *v as u64;
        }
        Ok(())
    })
}

/// Renders `camera` with `samples` midpoint samples per ray. `rgb` receives
/// `width * height * 3` values and `depth` (nullable) `width * height`
/// expected depths, both row-major from the top-left pixel.
///
/// # Safety
/// `field` must come from this library, `camera` be valid and the output
/// buffers hold at least the sizes above.
#[no_mangle]
pub unsafe extern "C" fn rd_field_render(
    field: *const RdField,
    camera: *const RdCamera,
    near: f64,
    far: f64,
    samples: u32,
    rgb: *mut f64,
    depth: *mut f64,
) -> RdStatus {
    guard(|| {
        let field = &handle(field, "field")?.0;
        let c = handle(camera, "camera")?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        if samples < 2 {
            return Err(invalid("samples must be at least 2"));
        }
        if !(near > 0.0 && far > near && far.is_finite()) {
            return Err(invalid(format!("need 0 < near < far, got [{near}, {far}]")));
        }
        let m = Matrix4::from_row_slice(&c.cam_to_world);
        let cam = Camera::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height, &m)
            .map_err(|e| invalid(e.to_string()))?;
        let r = render_camera(field, &cam, near, far, samples as usize);
        let n = r.image.pixels().len();
        let rgb = std::slice::from_raw_parts_mut(rgb, n * 3);
        for (dst, src) in rgb.chunks_exact_mut(3).zip(r.image.pixels()) {
            dst.copy_from_slice(src);
        }
        if !depth.is_null() {
            std::slice::from_raw_parts_mut(depth, n).copy_from_slice(r.depth.values());
        }
        Ok(())
    })
}

/// # Safety
/// `field` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn rd_field_free(field: *mut RdField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}
