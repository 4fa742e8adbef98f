//! Synthetic few-view datasets: oracle-rendered views of an analytic scene,
//! keypoint depth supervision and the on-disk layout
//! (`manifest.json`, `images/*.ppm`, `depth/*.dsdm`, `keypoints.csv`).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Camera, CameraError};
use crate::image::{DepthMap, Image, ImageError};
use crate::scene::{oracle_render, AnalyticScene, ArcRig};
use crate::sfm::{
    extract_keypoint_depths, read_keypoints_csv, simulate_sfm, write_keypoints_csv, KeypointDepth,
    KeypointOptions, ModelFormat, SfmError, SfmModel,
};

const MANIFEST: &str = "manifest.json";
const KEYPOINTS: &str = "keypoints.csv";
const FORMAT_TAG: &str = "raydepth-dataset/1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Sfm(#[from] SfmError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("unknown scene '{0}'")]
    UnknownScene(String),
    #[error("invalid request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One posed view with its image and reference depth (0 where nothing is hit).
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub id: u32,
    pub camera: Camera,
    pub image: Image,
    pub depth: DepthMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub scene: String,
    pub train: Vec<View>,
    pub test: Vec<View>,
    pub keypoints: Vec<KeypointDepth>,
    pub near: f64,
    pub far: f64,
    pub bbox_min: Vector3<f64>,
    pub bbox_max: Vector3<f64>,
}

/// Where keypoint supervision comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SfmSource {
    /// Exact surface points.
    Noiseless,
    /// Points perturbed by isotropic Gaussian noise of this standard deviation.
    Simulated(f64),
    /// An existing COLMAP model; its images (in id order) become the training views.
    External { path: PathBuf, format: ModelFormat },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub n_train: usize,
    pub n_test: usize,
    /// Image width and height in pixels.
    pub resolution: u32,
    pub sfm: SfmSource,
    /// Candidate keypoints cast per training view by the simulator.
    pub points_per_view: usize,
    pub keypoints: KeypointOptions,
    pub seed: u64,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            n_train: 2,
            n_test: 3,
            resolution: 64,
            sfm: SfmSource::Noiseless,
            points_per_view: 256,
            keypoints: KeypointOptions::default(),
            seed: 0,
        }
    }
}

fn render_view(scene: &AnalyticScene, id: u32, camera: Camera) -> View {
    let (image, depth) = oracle_render(scene, &camera);
    View {
        id,
        camera,
        image: image.quantized(),
        depth: depth.quantized(),
    }
}

/// Axial depth range of the scene bounding box over all cameras, which the
/// bounding box is assumed to lie in front of.
fn depth_range(
    cameras: &[&Camera],
    bbox_min: &Vector3<f64>,
    bbox_max: &Vector3<f64>,
) -> (f64, f64) {
    let mut near = f64::INFINITY;
    let mut far: f64 = 0.0;
    for cam in cameras {
        for i in 0..8 {
            let corner = Vector3::new(
                if i & 1 == 0 { bbox_min.x } else { bbox_max.x },
                if i & 2 == 0 { bbox_min.y } else { bbox_max.y },
                if i & 4 == 0 { bbox_min.z } else { bbox_max.z },
            );
            let d = cam.project_point_depth(&corner).depth;
            near = near.min(d);
            far = far.max(d);
        }
    }
    (near.max(0.05), far)
}

pub fn gen_dataset(scene: &AnalyticScene, opts: &GenOptions) -> Result<SceneDataset, DatasetError> {
    gen_dataset_with_model(scene, opts).map(|(ds, _)| ds)
}

/// Like [`gen_dataset`], also returning the SfM model the keypoints came from.
pub fn gen_dataset_with_model(
    scene: &AnalyticScene,
    opts: &GenOptions,
) -> Result<(SceneDataset, SfmModel), DatasetError> {
    if opts.n_train == 0 || opts.n_test == 0 || opts.resolution < 2 || opts.points_per_view == 0 {
        return Err(DatasetError::Invalid(
            "view counts, resolution and points per view must be positive".into(),
        ));
    }
    let rig = ArcRig::default();
    let scale = f64::from(opts.resolution) / f64::from(rig.width);

    let (train_cams, model) = match &opts.sfm {
        SfmSource::External { path, format } => {
            let model = SfmModel::read(path, *format)?;
            let mut ids: Vec<u32> = model.images.keys().copied().collect();
            ids.sort_unstable();
            if ids.len() < opts.n_train {
                return Err(DatasetError::Invalid(format!(
                    "model has {} images, {} training views requested",
                    ids.len(),
                    opts.n_train
                )));
            }
            let cams = ids[..opts.n_train]
                .iter()
                .map(|&id| Ok((id, model.image_camera(id, opts.keypoints.convention)?)))
                .collect::<Result<Vec<_>, SfmError>>()?;
            (cams, model)
        }
        source => {
            let cams = rig
                .train_angles(opts.n_train)
                .into_iter()
                .map(|(y, p)| rig.camera_at(y, p, scale))
                .collect::<Result<Vec<_>, _>>()?;
            let noise = match source {
                SfmSource::Simulated(n) => *n,
                _ => 0.0,
            };
            let model = simulate_sfm(scene, &cams, opts.points_per_view, noise, opts.seed);
            ((1..).zip(cams).collect(), model)
        }
    };

    let mut keypoints = Vec::new();
    for (id, _) in &train_cams {
        keypoints.extend(extract_keypoint_depths(&model, *id, &opts.keypoints)?);
    }
    let train: Vec<View> = train_cams
        .into_iter()
        .map(|(id, cam)| render_view(scene, id, cam))
        .collect();
    let first_test = train.iter().map(|v| v.id).max().unwrap_or(0) + 1;
    let test = rig
        .test_angles(opts.n_test)
        .into_iter()
        .zip(first_test..)
        .map(|((y, p), id)| Ok(render_view(scene, id, rig.camera_at(y, p, scale)?)))
        .collect::<Result<Vec<_>, CameraError>>()?;

    let cams: Vec<&Camera> = train.iter().chain(&test).map(|v| &v.camera).collect();
    let (near, far) = depth_range(&cams, &scene.bbox_min, &scene.bbox_max);
    let ds = SceneDataset {
        scene: scene.name.clone(),
        train,
        test,
        keypoints,
        near,
        far,
        bbox_min: scene.bbox_min,
        bbox_max: scene.bbox_max,
    };
    Ok((ds, model))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    scene: String,
    near: f64,
    far: f64,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    keypoints: String,
    views: Vec<ViewEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewEntry {
    id: u32,
    split: Split,
    camera: Camera,
    image: String,
    depth: String,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    }
}

impl SceneDataset {
    pub fn views(&self) -> impl Iterator<Item = (Split, &View)> {
        self.train
            .iter()
            .map(|v| (Split::Train, v))
            .chain(self.test.iter().map(|v| (Split::Test, v)))
    }

    pub fn train_view(&self, id: u32) -> Option<&View> {
        self.train.iter().find(|v| v.id == id)
    }

    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        for sub in ["images", "depth"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io(&p))?;
        }
        let mut views = Vec::new();
        for (split, view) in self.views() {
            let stem = match split {
                Split::Train => format!("train_{:03}", view.id),
                Split::Test => format!("test_{:03}", view.id),
            };
            let image = format!("images/{stem}.ppm");
            let depth = format!("depth/{stem}.dsdm");
            view.image.save_ppm(&dir.join(&image))?;
            view.depth.save(&dir.join(&depth))?;
            views.push(ViewEntry {
                id: view.id,
                split,
                camera: view.camera.clone(),
                image,
                depth,
            });
        }
        let kp_path = dir.join(KEYPOINTS);
        let file = fs::File::create(&kp_path).map_err(io(&kp_path))?;
        write_keypoints_csv(&self.keypoints, std::io::BufWriter::new(file))?;
        let manifest = Manifest {
            format: FORMAT_TAG.into(),
            scene: self.scene.clone(),
            near: self.near,
            far: self.far,
            bbox_min: self.bbox_min.into(),
            bbox_max: self.bbox_max.into(),
            keypoints: KEYPOINTS.into(),
            views,
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        text.push('\n');
        let path = dir.join(MANIFEST);
        fs::write(&path, text).map_err(io(&path))
    }

    pub fn read(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if m.format != FORMAT_TAG {
            return Err(DatasetError::Manifest(format!(
                "unsupported format '{}'",
                m.format
            )));
        }
        if !(m.near > 0.0 && m.far > m.near) {
            return Err(DatasetError::Manifest(format!(
                "invalid depth range [{}, {}]",
                m.near, m.far
            )));
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for e in m.views {
            let image = Image::load_ppm(&dir.join(&e.image))?;
            let depth = DepthMap::load(&dir.join(&e.depth))?;
            let (w, h) = (e.camera.width() as usize, e.camera.height() as usize);
            if image.shape() != (w, h) || (depth.width(), depth.height()) != (w, h) {
                return Err(DatasetError::Manifest(format!(
                    "view {} files do not match its {w}x{h} camera",
                    e.id
                )));
            }
            if depth.values().iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
                return Err(DatasetError::Manifest(format!(
                    "view {} has invalid reference depths",
                    e.id
                )));
            }
            let view = View {
                id: e.id,
                camera: e.camera,
                image,
                depth,
            };
            match e.split {
                Split::Train => train.push(view),
                Split::Test => test.push(view),
            }
        }
        if train.iter().any(|a| test.iter().any(|b| a.id == b.id)) {
            return Err(DatasetError::Manifest(
                "train and test view ids overlap".into(),
            ));
        }
        let kp_path = dir.join(&m.keypoints);
        let keypoints = read_keypoints_csv(fs::File::open(&kp_path).map_err(io(&kp_path))?)?;
        if let Some(k) = keypoints
            .iter()
            .find(|k| !train.iter().any(|v| v.id == k.image_id))
        {
            return Err(DatasetError::Manifest(format!(
                "keypoint references unknown train view {}",
                k.image_id
            )));
        }
        Ok(Self {
            scene: m.scene,
            train,
            test,
            keypoints,
            near: m.near,
            far: m.far,
            bbox_min: m.bbox_min.into(),
            bbox_max: m.bbox_max.into(),
        })
    }
}

pub fn scene_by_name(name: &str) -> Result<AnalyticScene, DatasetError> {
    AnalyticScene::preset(name).ok_or_else(|| DatasetError::UnknownScene(name.into()))
}
