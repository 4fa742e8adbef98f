use std::fs;
use std::path::Path;

use proptest::prelude::*;
use raydepth::scene::{AnalyticScene, ArcRig};
use raydepth::sfm::{
    extract_keypoint_depths, read_binary, read_keypoints_csv, read_text, simulate_sfm,
    write_binary, write_keypoints_csv, write_text, KeypointOptions, ModelFormat, SfmError,
    SfmModel,
};
use tempfile::tempdir;

fn model() -> SfmModel {
    let scene = AnalyticScene::preset("sphere-plane").unwrap();
    let rig = ArcRig::default();
    let cams: Vec<_> = rig
        .train_angles(3)
        .into_iter()
        .map(|(y, p)| rig.camera_at(y, p, 1.0).unwrap())
        .collect();
    simulate_sfm(&scene, &cams, 40, 0.03, 17)
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn binary_round_trip_is_byte_identical() {
    let m = model();
    assert!(!m.points3d.is_empty());
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    write_binary(&m, a.path()).unwrap();
    let back = read_binary(a.path()).unwrap();
    assert_eq!(back, m);
    write_binary(&back, b.path()).unwrap();
    assert_eq!(read_all(a.path()), read_all(b.path()));
}

#[test]
fn text_and_binary_agree() {
    let m = model();
    let (t, b) = (tempdir().unwrap(), tempdir().unwrap());
    write_text(&m, t.path()).unwrap();
    let from_text = read_text(t.path()).unwrap();
    assert_eq!(from_text, m);
    write_binary(&from_text, b.path()).unwrap();
    assert_eq!(SfmModel::read(b.path(), ModelFormat::Binary).unwrap(), m);
    let t2 = tempdir().unwrap();
    write_text(&from_text, t2.path()).unwrap();
    assert_eq!(read_all(t.path()), read_all(t2.path()));
}

#[test]
fn keypoints_survive_both_formats() {
    let m = model();
    let opts = KeypointOptions::default();
    let dir = tempdir().unwrap();
    m.write(dir.path(), ModelFormat::Text).unwrap();
    let back = SfmModel::read(dir.path(), ModelFormat::Text).unwrap();
    for id in m.images.keys() {
        assert_eq!(
            extract_keypoint_depths(&m, *id, &opts).unwrap(),
            extract_keypoint_depths(&back, *id, &opts).unwrap()
        );
    }
    let kps = extract_keypoint_depths(&m, 1, &opts).unwrap();
    let mut buf = Vec::new();
    write_keypoints_csv(&kps, &mut buf).unwrap();
    assert_eq!(read_keypoints_csv(buf.as_slice()).unwrap(), kps);
}

#[test]
fn truncated_binary_files_are_rejected() {
    let m = model();
    let dir = tempdir().unwrap();
    write_binary(&m, dir.path()).unwrap();
    for name in ["cameras.bin", "images.bin", "points3D.bin"] {
        let path = dir.path().join(name);
        let full = fs::read(&path).unwrap();
        for cut in [1, full.len() / 2, full.len() - 1] {
            fs::write(&path, &full[..cut]).unwrap();
            let err = read_binary(dir.path()).unwrap_err();
            assert!(
                matches!(err, SfmError::Truncated { .. }),
                "{name} cut {cut}: {err}"
            );
        }
        fs::write(&path, &full).unwrap();
    }
    let path = dir.path().join("images.bin");
    let mut extra = fs::read(&path).unwrap();
    extra.push(0);
    fs::write(&path, extra).unwrap();
    assert!(matches!(
        read_binary(dir.path()),
        Err(SfmError::TrailingBytes { .. })
    ));
}

#[test]
fn missing_files_and_dangling_tracks_are_rejected() {
    let dir = tempdir().unwrap();
    assert!(matches!(read_binary(dir.path()), Err(SfmError::Io { .. })));
    let mut m = model();
    let first = *m.points3d.keys().next().unwrap();
    m.points3d.get_mut(&first).unwrap().track[0].image_id = 999;
    write_text(&m, dir.path()).unwrap();
    assert!(read_text(dir.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn arbitrary_bytes_never_panic(
        cams in prop::collection::vec(any::<u8>(), 0..96),
        imgs in prop::collection::vec(any::<u8>(), 0..160),
        pts in prop::collection::vec(any::<u8>(), 0..96),
    ) {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("cameras.bin"), cams).unwrap();
        fs::write(dir.path().join("images.bin"), imgs).unwrap();
        fs::write(dir.path().join("points3D.bin"), pts).unwrap();
        let _ = read_binary(dir.path());
    }

    #[test]
    fn arbitrary_text_never_panics(lines in prop::collection::vec("[-0-9a-zA-Z_. #]{0,40}", 0..8)) {
        let dir = tempdir().unwrap();
        let body = lines.join("\n");
        for name in ["cameras.txt", "images.txt", "points3D.txt"] {
            fs::write(dir.path().join(name), &body).unwrap();
        }
        let _ = read_text(dir.path());
    }
}
