//! Sparse structure-from-motion models in the COLMAP layout, keypoint depth
//! supervision derived from them, and a simulator that produces such models
//! for analytic scenes.

mod binary;
mod simulate;
mod text;

use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{quat_to_rotation, rotation_to_quat, Camera, CameraError};
use crate::loss::DEFAULT_SIGMA_FLOOR;

pub use binary::{read_binary, write_binary};
pub use simulate::simulate_sfm;
pub use text::{read_text, write_text};

/// Sentinel point3D id of an unmatched 2D observation.
pub const INVALID_POINT3D: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum SfmError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}: truncated at byte offset {offset} (needed {needed} more bytes)")]
    Truncated {
        file: String,
        offset: usize,
        needed: usize,
    },
    #[error("{file}: camera {camera_id} has unsupported model id {model_id}")]
    UnknownModel {
        file: String,
        camera_id: u32,
        model_id: i32,
    },
    #[error("{file}: camera {camera_id} has unsupported model '{name}'")]
    UnknownModelName {
        file: String,
        camera_id: u32,
        name: String,
    },
    #[error("{file}:{line}: {message}")]
    Syntax {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}: invalid name string for image {image_id} at byte offset {offset}")]
    BadName {
        file: String,
        image_id: u32,
        offset: usize,
    },
    #[error("{file}: {trailing} trailing bytes after the last record")]
    TrailingBytes { file: String, trailing: usize },
    #[error("dangling reference: {0}")]
    Dangling(String),
    #[error("image {image_id}: {source}")]
    Camera { image_id: u32, source: CameraError },
    #[error("unknown image id {0}")]
    UnknownImage(u32),
    #[error("keypoint file: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CameraModel {
    SimplePinhole,
    Pinhole,
    SimpleRadial,
}

impl CameraModel {
    pub fn id(self) -> i32 {
        match self {
            CameraModel::SimplePinhole => 0,
            CameraModel::Pinhole => 1,
            CameraModel::SimpleRadial => 2,
        }
    }

    pub fn from_id(id: i32) -> Option<Self> {
        match id {
            0 => Some(CameraModel::SimplePinhole),
            1 => Some(CameraModel::Pinhole),
            2 => Some(CameraModel::SimpleRadial),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CameraModel::SimplePinhole => "SIMPLE_PINHOLE",
            CameraModel::Pinhole => "PINHOLE",
            CameraModel::SimpleRadial => "SIMPLE_RADIAL",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            CameraModel::SimplePinhole,
            CameraModel::Pinhole,
            CameraModel::SimpleRadial,
        ]
        .into_iter()
        .find(|m| m.name() == name)
    }

    pub fn param_count(self) -> usize {
        match self {
            CameraModel::SimplePinhole => 3,
            CameraModel::Pinhole => 4,
            CameraModel::SimpleRadial => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfmCamera {
    pub id: u32,
    pub model: CameraModel,
    pub width: u64,
    pub height: u64,
    pub params: Vec<f64>,
}

impl SfmCamera {
    /// `(fx, fy, cx, cy)`; distortion terms are dropped.
    pub fn pinhole(&self) -> (f64, f64, f64, f64) {
        let p = &self.params;
        match self.model {
            CameraModel::SimplePinhole | CameraModel::SimpleRadial => (p[0], p[0], p[1], p[2]),
            CameraModel::Pinhole => (p[0], p[1], p[2], p[3]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
    /// `None` for unmatched observations.
    pub point3d_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfmImage {
    pub id: u32,
    /// World-to-camera rotation as `(w, x, y, z)`.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
    pub points2d: Vec<Point2D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackElement {
    pub image_id: u32,
    pub point2d_idx: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point3D {
    pub id: u64,
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
    /// Mean reprojection error in pixels.
    pub error: f64,
    pub track: Vec<TrackElement>,
}

/// A sparse reconstruction. Maps preserve file order so models serialize
/// back byte for byte.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SfmModel {
    pub cameras: IndexMap<u32, SfmCamera>,
    pub images: IndexMap<u32, SfmImage>,
    pub points3d: IndexMap<u64, Point3D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFormat {
    Binary,
    Text,
}

/// Axis convention of stored poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoseConvention {
    /// COLMAP / OpenCV: camera looks along `+z`, image `y` points down.
    #[default]
    Colmap,
    /// Camera looks along `-z` with `y` up, as [`Camera`] does internally.
    OpenGl,
}

impl SfmModel {
    /// Checks cross references between cameras, images and points.
    pub fn validate(&self) -> Result<(), SfmError> {
        for img in self.images.values() {
            if !self.cameras.contains_key(&img.camera_id) {
                return Err(SfmError::Dangling(format!(
                    "image {} uses missing camera {}",
                    img.id, img.camera_id
                )));
            }
            for (i, p) in img.points2d.iter().enumerate() {
                if let Some(pid) = p.point3d_id {
                    if !self.points3d.contains_key(&pid) {
                        return Err(SfmError::Dangling(format!(
                            "image {} observation {i} references missing point {pid}",
                            img.id
                        )));
                    }
                }
            }
        }
        for pt in self.points3d.values() {
            if !(pt.error >= 0.0) {
                return Err(SfmError::Dangling(format!(
                    "point {} has negative reprojection error",
                    pt.id
                )));
            }
            for el in &pt.track {
                let Some(img) = self.images.get(&el.image_id) else {
                    return Err(SfmError::Dangling(format!(
                        "point {} track references missing image {}",
                        pt.id, el.image_id
                    )));
                };
                if el.point2d_idx as usize >= img.points2d.len() {
                    return Err(SfmError::Dangling(format!(
                        "point {} track references observation {} of image {} which has {}",
                        pt.id,
                        el.point2d_idx,
                        el.image_id,
                        img.points2d.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn image_camera(
        &self,
        image_id: u32,
        convention: PoseConvention,
    ) -> Result<Camera, SfmError> {
        let img = self
            .images
            .get(&image_id)
            .ok_or(SfmError::UnknownImage(image_id))?;
        let cam = self.cameras.get(&img.camera_id).ok_or_else(|| {
            SfmError::Dangling(format!(
                "image {image_id} uses missing camera {}",
                img.camera_id
            ))
        })?;
        if cam.model == CameraModel::SimpleRadial {
            log::warn!(
                "camera {}: ignoring SIMPLE_RADIAL distortion coefficient",
                cam.id
            );
        }
        let (fx, fy, cx, cy) = cam.pinhole();
        let r_wc =
            quat_to_rotation(img.qvec).map_err(|source| SfmError::Camera { image_id, source })?;
        let t = Vector3::from(img.tvec);
        let flip = match convention {
            PoseConvention::Colmap => Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
            PoseConvention::OpenGl => Matrix3::identity(),
        };
        let rotation = r_wc.transpose() * flip;
        let center = -(r_wc.transpose() * t);
        Camera::from_parts(
            fx,
            fy,
            cx,
            cy,
            cam.width as u32,
            cam.height as u32,
            rotation,
            center,
        )
        .map_err(|source| SfmError::Camera { image_id, source })
    }

    pub fn read(dir: &Path, format: ModelFormat) -> Result<Self, SfmError> {
        match format {
            ModelFormat::Binary => read_binary(dir),
            ModelFormat::Text => read_text(dir),
        }
    }

    pub fn write(&self, dir: &Path, format: ModelFormat) -> Result<(), SfmError> {
        match format {
            ModelFormat::Binary => write_binary(self, dir),
            ModelFormat::Text => write_text(self, dir),
        }
    }
}

/// Pose of `camera` expressed as a COLMAP-style `(qvec, tvec)` in `convention`.
pub fn camera_pose(camera: &Camera, convention: PoseConvention) -> ([f64; 4], [f64; 3]) {
    let flip = match convention {
        PoseConvention::Colmap => Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
        PoseConvention::OpenGl => Matrix3::identity(),
    };
    let r_wc = flip * camera.rotation().transpose();
    let t = -(r_wc * camera.center());
    (rotation_to_quat(&r_wc), t.into())
}

/// Depth supervision for one keypoint observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointDepth {
    pub image_id: u32,
    pub u: f64,
    pub v: f64,
    #[serde(rename = "D")]
    pub depth: f64,
    pub sigma_hat: f64,
    pub point3d_id: u64,
}

/// How pixel reprojection error becomes a depth standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaScale {
    /// `sigma_hat = D / f * error_px`.
    DepthOverFocal,
    /// `sigma_hat = factor * error_px`.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointOptions {
    pub sigma_floor: f64,
    pub sigma_scale: SigmaScale,
    pub convention: PoseConvention,
}

impl Default for KeypointOptions {
    fn default() -> Self {
        Self {
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            sigma_scale: SigmaScale::DepthOverFocal,
            convention: PoseConvention::Colmap,
        }
    }
}

/// Keypoint depths for every 3D point observed in `image_id` that projects in
/// front of the camera and inside the image.
pub fn extract_keypoint_depths(
    model: &SfmModel,
    image_id: u32,
    opts: &KeypointOptions,
) -> Result<Vec<KeypointDepth>, SfmError> {
    let img = model
        .images
        .get(&image_id)
        .ok_or(SfmError::UnknownImage(image_id))?;
    let camera = model.image_camera(image_id, opts.convention)?;
    let focal = 0.5 * (camera.fx() + camera.fy());
    let mut out = Vec::new();
    for pt in model.points3d.values() {
        let Some(el) = pt.track.iter().find(|el| el.image_id == image_id) else {
            continue;
        };
        let Some(obs) = img.points2d.get(el.point2d_idx as usize) else {
            return Err(SfmError::Dangling(format!(
                "point {} observation {} missing",
                pt.id, el.point2d_idx
            )));
        };
        let proj = camera.project_point_depth(&Vector3::from(pt.xyz));
        if !proj.in_front
            || !camera.contains_pixel(proj.u, proj.v)
            || !camera.contains_pixel(obs.x, obs.y)
        {
            continue;
        }
        let scale = match opts.sigma_scale {
            SigmaScale::DepthOverFocal => proj.depth / focal,
            SigmaScale::Fixed(s) => s,
        };
        out.push(KeypointDepth {
            image_id,
            u: obs.x,
            v: obs.y,
            depth: proj.depth,
            sigma_hat: (scale * pt.error).max(opts.sigma_floor),
            point3d_id: pt.id,
        });
    }
    Ok(out)
}

pub const KEYPOINT_CSV_HEADER: &str = "image_id,u,v,D,sigma_hat,point3d_id";

pub fn write_keypoints_csv<W: Write>(keypoints: &[KeypointDepth], w: W) -> Result<(), SfmError> {
    let mut wtr = csv::Writer::from_writer(w);
    if keypoints.is_empty() {
        wtr.write_record(KEYPOINT_CSV_HEADER.split(','))?;
    }
    for k in keypoints {
        wtr.serialize(k)?;
    }
    wtr.flush().map_err(|e| SfmError::Csv(e.into()))?;
    Ok(())
}

pub fn read_keypoints_csv<R: std::io::Read>(r: R) -> Result<Vec<KeypointDepth>, SfmError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != KEYPOINT_CSV_HEADER {
        return Err(SfmError::Syntax {
            file: "keypoints".into(),
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    rdr.deserialize()
        .map(|r| r.map_err(SfmError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_model(convention_point_z: f64) -> SfmModel {
        let mut m = SfmModel::default();
        m.cameras.insert(
            1,
            SfmCamera {
                id: 1,
                model: CameraModel::SimplePinhole,
                width: 64,
                height: 48,
                params: vec![20.0, 32.0, 24.0],
            },
        );
        m.images.insert(
            1,
            SfmImage {
                id: 1,
                qvec: [1.0, 0.0, 0.0, 0.0],
                tvec: [0.0; 3],
                camera_id: 1,
                name: "a.png".into(),
                points2d: vec![
                    Point2D {
                        x: 32.0,
                        y: 24.0,
                        point3d_id: Some(7),
                    },
                    Point2D {
                        x: 3.0,
                        y: 4.0,
                        point3d_id: None,
                    },
                ],
            },
        );
        m.points3d.insert(
            7,
            Point3D {
                id: 7,
                xyz: [0.0, 0.0, convention_point_z],
                rgb: [10, 20, 30],
                error: 0.5,
                track: vec![TrackElement {
                    image_id: 1,
                    point2d_idx: 0,
                }],
            },
        );
        m
    }

    #[test]
    fn extract_identity_pose() {
        let gl = KeypointOptions {
            sigma_scale: SigmaScale::Fixed(0.1),
            convention: PoseConvention::OpenGl,
            ..Default::default()
        };
        let k = extract_keypoint_depths(&tiny_model(-2.0), 1, &gl).unwrap();
        assert_eq!(k.len(), 1);
        assert_eq!(
            (k[0].depth, k[0].u, k[0].v, k[0].point3d_id),
            (2.0, 32.0, 24.0, 7)
        );
        assert!((k[0].sigma_hat - 0.05).abs() < 1e-15);
        // the same point in COLMAP's +z-forward convention
        let cm = KeypointOptions {
            sigma_scale: SigmaScale::Fixed(0.1),
            ..Default::default()
        };
        let k = extract_keypoint_depths(&tiny_model(2.0), 1, &cm).unwrap();
        assert_eq!(k[0].depth, 2.0);
        // depth over focal: 2 / 20 * 0.5
        let k = extract_keypoint_depths(&tiny_model(2.0), 1, &KeypointOptions::default()).unwrap();
        assert!((k[0].sigma_hat - 0.05).abs() < 1e-15);
    }

    #[test]
    fn extract_filters() {
        let gl = KeypointOptions {
            convention: PoseConvention::OpenGl,
            ..Default::default()
        };
        assert!(extract_keypoint_depths(&tiny_model(2.0), 1, &gl)
            .unwrap()
            .is_empty());
        let mut m = tiny_model(-2.0);
        m.points3d[0].track.clear();
        assert!(extract_keypoint_depths(&m, 1, &gl).unwrap().is_empty());
        assert!(matches!(
            extract_keypoint_depths(&m, 9, &gl),
            Err(SfmError::UnknownImage(9))
        ));
        let mut m = tiny_model(-2.0);
        m.points3d[0].error = 0.0;
        let k = extract_keypoint_depths(&m, 1, &gl).unwrap();
        assert_eq!(k[0].sigma_hat, DEFAULT_SIGMA_FLOOR);
    }

    #[test]
    fn validation_catches_dangling() {
        assert!(tiny_model(1.0).validate().is_ok());
        let mut m = tiny_model(1.0);
        m.points3d[0].track.push(TrackElement {
            image_id: 5,
            point2d_idx: 0,
        });
        assert!(matches!(m.validate(), Err(SfmError::Dangling(_))));
        let mut m = tiny_model(1.0);
        m.images[0].points2d[1].point3d_id = Some(99);
        assert!(matches!(m.validate(), Err(SfmError::Dangling(_))));
        let mut m = tiny_model(1.0);
        m.images[0].camera_id = 3;
        assert!(matches!(m.validate(), Err(SfmError::Dangling(_))));
    }

    #[test]
    fn pose_conversion_round_trip() {
        let cam = Camera::look_at(
            50.0,
            50.0,
            32.0,
            24.0,
            64,
            48,
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(0.0, 0.0, -4.0),
            Vector3::y(),
        )
        .unwrap();
        for conv in [PoseConvention::Colmap, PoseConvention::OpenGl] {
            let (q, t) = camera_pose(&cam, conv);
            let mut m = tiny_model(1.0);
            m.cameras[0] = SfmCamera {
                id: 1,
                model: CameraModel::Pinhole,
                width: 64,
                height: 48,
                params: vec![50.0, 50.0, 32.0, 24.0],
            };
            m.images[0].qvec = q;
            m.images[0].tvec = t;
            let back = m.image_camera(1, conv).unwrap();
            assert!((back.rotation() - cam.rotation()).amax() < 1e-12);
            assert!((back.center() - cam.center()).amax() < 1e-12);
        }
    }

    #[test]
    fn keypoint_csv_round_trip() {
        let k = vec![
            KeypointDepth {
                image_id: 2,
                u: 1.25,
                v: 0.1 + 0.2,
                depth: 3.5,
                sigma_hat: 0.01,
                point3d_id: 4,
            },
            KeypointDepth {
                image_id: 3,
                u: 10.0,
                v: 7.75,
                depth: 1e-3,
                sigma_hat: 1.0 / 3.0,
                point3d_id: u64::MAX - 1,
            },
        ];
        let mut buf = Vec::new();
        write_keypoints_csv(&k, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("image_id,u,v,D,sigma_hat,point3d_id\n"));
        assert_eq!(read_keypoints_csv(buf.as_slice()).unwrap(), k);
        let mut empty = Vec::new();
        write_keypoints_csv(&[], &mut empty).unwrap();
        assert_eq!(
            String::from_utf8(empty.clone()).unwrap(),
            "image_id,u,v,D,sigma_hat,point3d_id\n"
        );
        assert!(read_keypoints_csv(empty.as_slice()).unwrap().is_empty());
        assert!(read_keypoints_csv(&b"a,b\n1,2\n"[..]).is_err());
    }
}
