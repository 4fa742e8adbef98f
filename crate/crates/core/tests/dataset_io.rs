use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use raydepth::dataset::{gen_dataset, scene_by_name, GenOptions, SceneDataset, SfmSource};
use raydepth::train::{sample_ray_batch, TrainConfig};
use tempfile::tempdir;

fn dataset() -> SceneDataset {
    gen_dataset(
        &scene_by_name("sphere-plane").unwrap(),
        &GenOptions {
            n_train: 3,
            n_test: 2,
            resolution: 20,
            sfm: SfmSource::Simulated(0.05),
            points_per_view: 64,
            seed: 9,
            ..Default::default()
        },
    )
    .unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            let prefix = p.file_name().unwrap().to_string_lossy().into_owned();
            out.extend(
                tree(&p)
                    .into_iter()
                    .map(|(n, b)| (format!("{prefix}/{n}"), b)),
            );
        } else {
            out.push((
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

#[test]
fn write_read_write_is_byte_identical() {
    let ds = dataset();
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    ds.write(a.path()).unwrap();
    let back = SceneDataset::read(a.path()).unwrap();
    assert_eq!(back, ds);
    back.write(b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() >= 12);
    assert_eq!(ta, tb);
}

#[test]
fn corrupted_manifest_is_rejected() {
    let ds = dataset();
    let dir = tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let manifest = dir.path().join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replacen("\"near\"", "\"nearr\"", 1)).unwrap();
    assert!(SceneDataset::read(dir.path()).is_err());
    fs::write(&manifest, &text).unwrap();
    fs::remove_file(dir.path().join("keypoints.csv")).unwrap();
    assert!(SceneDataset::read(dir.path()).is_err());
}

#[test]
fn dense_targets_equal_depth_map_values() {
    let ds = dataset();
    let cfg = TrainConfig {
        dense_depth: true,
        dense_sigma: 0.2,
        rays_per_batch: 200,
        keypoint_ray_fraction: 0.75,
        ..Default::default()
    };
    let batch = sample_ray_batch(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(batch.iter().filter(|r| r.depth.is_some()).count(), 150);
    for r in batch.iter().filter(|r| r.depth.is_some()) {
        let target = r.depth.unwrap();
        assert_eq!(target.sigma_hat, 0.2);
        let view = ds
            .train
            .iter()
            .find(|v| (v.camera.center() - r.ray.origin).norm() < 1e-12)
            .expect("ray starts at a training camera");
        let p = view.camera.project_point_depth(&r.ray.at(target.depth));
        assert!((p.depth - target.depth).abs() < 1e-9);
        // dense rays go through pixel centers
        assert!((p.u.fract() - 0.5).abs() < 1e-6 && (p.v.fract() - 0.5).abs() < 1e-6);
        let d = view.depth.at_pixel_containing(p.u, p.v).unwrap();
        assert_eq!(d, target.depth);
    }
}
