use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    camera_pose, CameraModel, Point2D, Point3D, PoseConvention, SfmCamera, SfmImage, SfmModel,
    TrackElement,
};
use crate::camera::Camera;
use crate::scene::AnalyticScene;

/// Relative depth tolerance for deciding that a surface point is the first hit.
const VISIBILITY_TOL: f64 = 1e-6;

fn visible_from(scene: &AnalyticScene, camera: &Camera, x: &Vector3<f64>) -> Option<(f64, f64)> {
    let p = camera.project_point_depth(x);
    if !p.in_front || !camera.contains_pixel(p.u, p.v) {
        return None;
    }
    let ray = camera.ray_unchecked(p.u, p.v, 0.0, f64::INFINITY);
    let hit = scene.intersect_ray(&ray)?;
    ((hit.t - p.depth).abs() <= VISIBILITY_TOL * p.depth).then_some((p.u, p.v))
}

/// Synthetic sparse reconstruction of `scene` seen by `cameras`.
///
/// Every camera casts `n_points` rays through uniformly drawn sub-pixel
/// locations. Each surface hit seen by at least two cameras becomes a 3D
/// point whose observations are its exact projections; the stored position is
/// then perturbed by isotropic Gaussian noise of standard deviation
/// `noise_3d`, and the reprojection error is the mean pixel distance between
/// the observations and the projections of the perturbed point. Poses are
/// stored in the COLMAP convention, one camera record per image.
pub fn simulate_sfm(
    scene: &AnalyticScene,
    cameras: &[Camera],
    n_points: usize,
    noise_3d: f64,
    seed: u64,
) -> SfmModel {
    assert!(n_points >= 1, "n_points must be at least 1");
    assert!(
        noise_3d >= 0.0 && noise_3d.is_finite(),
        "noise_3d must be finite and non-negative"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut model = SfmModel::default();
    for (i, cam) in cameras.iter().enumerate() {
        let id = i as u32 + 1;
        let (qvec, tvec) = camera_pose(cam, PoseConvention::Colmap);
        model.cameras.insert(
            id,
            SfmCamera {
                id,
                model: CameraModel::Pinhole,
                width: u64::from(cam.width()),
                height: u64::from(cam.height()),
                params: vec![cam.fx(), cam.fy(), cam.cx(), cam.cy()],
            },
        );
        model.images.insert(
            id,
            SfmImage {
                id,
                qvec,
                tvec,
                camera_id: id,
                name: format!("view_{i:03}.ppm"),
                points2d: Vec::new(),
            },
        );
    }

    let mut next_id = 1u64;
    for (i, cam) in cameras.iter().enumerate() {
        let mut seen = 0usize;
        for _ in 0..n_points {
            let u = rng.gen::<f64>() * f64::from(cam.width());
            let v = rng.gen::<f64>() * f64::from(cam.height());
            let noise = Vector3::from_fn(|_, _| normal.sample(&mut rng)) * noise_3d;
            let Some(hit) = scene.intersect_ray(&cam.ray_unchecked(u, v, 0.0, f64::INFINITY))
            else {
                continue;
            };
            seen += 1;
            let x = cam.ray_unchecked(u, v, 0.0, f64::INFINITY).at(hit.t);
            let mut obs = Vec::new();
            for (j, other) in cameras.iter().enumerate() {
                if j == i {
                    obs.push((j, u, v));
                } else if let Some((uj, vj)) = visible_from(scene, other, &x) {
                    obs.push((j, uj, vj));
                }
            }
            if obs.len() < 2 {
                continue;
            }
            let noisy = x + noise;
            let mut err = 0.0;
            let mut track = Vec::with_capacity(obs.len());
            for &(j, uj, vj) in &obs {
                let p = cameras[j].project_point_depth(&noisy);
                err += ((p.u - uj).powi(2) + (p.v - vj).powi(2)).sqrt();
                let img = &mut model.images[j];
                track.push(TrackElement {
                    image_id: img.id,
                    point2d_idx: img.points2d.len() as u32,
                });
                img.points2d.push(Point2D {
                    x: uj,
                    y: vj,
                    point3d_id: Some(next_id),
                });
            }
            let rgb = hit.rgb.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
            model.points3d.insert(
                next_id,
                Point3D {
                    id: next_id,
                    xyz: noisy.into(),
                    rgb,
                    error: err / obs.len() as f64,
                    track,
                },
            );
            next_id += 1;
        }
        if seen == 0 {
            log::warn!("camera {i} sees no surface; it contributes no observations");
        }
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ArcRig;
    use crate::sfm::{extract_keypoint_depths, KeypointOptions};

    fn rig_cameras(n: usize) -> (AnalyticScene, Vec<Camera>) {
        let scene = AnalyticScene::preset("sphere-plane").unwrap();
        let rig = ArcRig::default();
        let cams = rig
            .train_angles(n)
            .into_iter()
            .map(|(y, p)| rig.camera_at(y, p, 1.0).unwrap())
            .collect();
        (scene, cams)
    }

    #[test]
    fn noiseless_is_exact() {
        let (scene, cams) = rig_cameras(3);
        let m = simulate_sfm(&scene, &cams, 200, 0.0, 1);
        m.validate().unwrap();
        assert!(m.points3d.len() > 100);
        assert!(m
            .points3d
            .values()
            .all(|p| p.error < 1e-9 && p.track.len() >= 2));
        for (k, cam) in cams.iter().enumerate() {
            let kps =
                extract_keypoint_depths(&m, k as u32 + 1, &KeypointOptions::default()).unwrap();
            assert!(!kps.is_empty());
            for kp in kps {
                let hit = scene
                    .intersect_ray(&cam.make_ray(kp.u, kp.v, 1e-6, 1e6).unwrap())
                    .unwrap();
                assert!((hit.t - kp.depth).abs() < 1e-9, "{} vs {}", hit.t, kp.depth);
            }
        }
    }

    #[test]
    fn error_grows_with_noise() {
        let scene = AnalyticScene::preset("sphere").unwrap();
        let rig = ArcRig::default();
        let cams: Vec<_> = rig
            .train_angles(3)
            .into_iter()
            .map(|(y, p)| rig.camera_at(y, p, 1.0).unwrap())
            .collect();
        let mean = |noise: f64| {
            let m = simulate_sfm(&scene, &cams, 300, noise, 5);
            m.points3d.values().map(|p| p.error).sum::<f64>() / m.points3d.len() as f64
        };
        let e = [mean(0.01), mean(0.03), mean(0.1)];
        assert!(e[0] > 0.0 && e[0] < e[1] && e[1] < e[2], "{e:?}");
    }

    #[test]
    fn deterministic_and_monotone_in_views() {
        let (scene, cams) = rig_cameras(5);
        let a = simulate_sfm(&scene, &cams, 100, 0.02, 9);
        let b = simulate_sfm(&scene, &cams, 100, 0.02, 9);
        assert_eq!(
            crate::sfm::binary::encode_points3d(&a.points3d),
            crate::sfm::binary::encode_points3d(&b.points3d)
        );
        assert_eq!(
            crate::sfm::binary::encode_images(&a.images),
            crate::sfm::binary::encode_images(&b.images)
        );
        let mut last = 0.0;
        for n in [2, 5, 10] {
            let (scene, cams) = rig_cameras(n);
            let m = simulate_sfm(&scene, &cams, 100, 0.0, 3);
            let per_view = (1..=n as u32)
                .map(|id| {
                    extract_keypoint_depths(&m, id, &KeypointOptions::default())
                        .unwrap()
                        .len()
                })
                .sum::<usize>() as f64
                / n as f64;
            assert!(per_view >= last, "{n} views: {per_view} < {last}");
            last = per_view;
        }
    }
}
