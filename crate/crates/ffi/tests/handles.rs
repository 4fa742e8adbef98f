use std::ffi::{CStr, CString};
use std::ptr;

use raydepth_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(rd_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn small_dataset() -> *mut RdDataset {
    let scene = CString::new("sphere").unwrap();
    let mut ds = ptr::null_mut();
    let st = unsafe { rd_dataset_generate(scene.as_ptr(), 2, 1, 16, 0.0, 1, &mut ds) };
    assert_eq!(st, RdStatus::Ok, "{}", last_error());
    assert!(!ds.is_null());
    ds
}

#[test]
fn train_evaluate_render_round_trip() {
    let ds = small_dataset();
    unsafe {
        let mut n = 0;
        assert_eq!(
            rd_dataset_view_count(ds, RdSplit::Train, &mut n),
            RdStatus::Ok
        );
        assert_eq!(n, 2);
        let mut kp = 0;
        assert_eq!(rd_dataset_keypoint_count(ds, &mut kp), RdStatus::Ok);
        assert!(kp > 0);

        let cfg =
            CString::new(r#"{"grid": [8, 8, 8], "samples_per_ray": 16, "rays_per_batch": 32}"#)
                .unwrap();
        let mut tr = ptr::null_mut();
        assert_eq!(
            rd_trainer_new(ds, cfg.as_ptr(), &mut tr),
            RdStatus::Ok,
            "{}",
            last_error()
        );
        // the trainer keeps its own copy of the dataset
        rd_dataset_free(ds);
        let mut loss = 0.0;
        assert_eq!(rd_trainer_step(tr, 5, &mut loss), RdStatus::Ok);
        assert!(loss.is_finite() && loss > 0.0);
        let mut it = 0;
        assert_eq!(rd_trainer_iteration(tr, &mut it), RdStatus::Ok);
        assert_eq!(it, 5);
        let mut m = RdMetrics::default();
        assert_eq!(rd_trainer_evaluate(tr, &mut m), RdStatus::Ok);
        assert_eq!(m.iteration, 5);
        assert!(m.psnr.is_finite());

        let mut field = ptr::null_mut();
        assert_eq!(rd_trainer_field(tr, &mut field), RdStatus::Ok);
        rd_trainer_free(tr);
        let mut dims = [0u64; 3];
        assert_eq!(rd_field_dims(field, dims.as_mut_ptr()), RdStatus::Ok);
        assert_eq!(dims, [8, 8, 8]);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("f.dsvf").to_str().unwrap()).unwrap();
        assert_eq!(rd_field_save(field, path.as_ptr()), RdStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(rd_field_load(path.as_ptr(), &mut loaded), RdStatus::Ok);

        let ds = small_dataset();
        let mut cam = std::mem::zeroed::<RdCamera>();
        let (mut near, mut far) = (0.0, 0.0);
        assert_eq!(
            rd_dataset_camera(ds, RdSplit::Test, 0, &mut cam, &mut near, &mut far),
            RdStatus::Ok
        );
        assert_eq!((cam.width, cam.height), (16, 16));
        let mut rgb = vec![0.0; 16 * 16 * 3];
        let mut depth = vec![0.0; 16 * 16];
        assert_eq!(
            rd_field_render(
                loaded,
                &cam,
                near,
                far,
                16,
                rgb.as_mut_ptr(),
                depth.as_mut_ptr()
            ),
            RdStatus::Ok
        );
        assert!(rgb.iter().all(|c| (0.0..=1.0).contains(c)));
        assert!(depth.iter().all(|d| *d >= near && *d <= far));
        assert_eq!(
            rd_dataset_camera(ds, RdSplit::Test, 7, &mut cam, &mut near, &mut far),
            RdStatus::InvalidArgument
        );
        rd_dataset_free(ds);
        rd_field_free(field);
        rd_field_free(loaded);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut ds = ptr::null_mut();
        let bad = CString::new("teapot").unwrap();
        assert_eq!(
            rd_dataset_generate(bad.as_ptr(), 2, 1, 16, 0.0, 0, &mut ds),
            RdStatus::InvalidArgument
        );
        assert!(ds.is_null());
        assert!(last_error().contains("teapot"));

        assert_eq!(
            rd_dataset_generate(ptr::null(), 2, 1, 16, 0.0, 0, &mut ds),
            RdStatus::NullPointer
        );
        let missing = CString::new("/nonexistent/raydepth").unwrap();
        assert_eq!(rd_dataset_load(missing.as_ptr(), &mut ds), RdStatus::Io);

        let ds = small_dataset();
        assert!(last_error().is_empty());
        let mut tr = ptr::null_mut();
        let cfg = CString::new(r#"{"lr": "fast"}"#).unwrap();
        assert_eq!(rd_trainer_new(ds, cfg.as_ptr(), &mut tr), RdStatus::Parse);
        let cfg = CString::new(r#"{"lambda_depth": -1}"#).unwrap();
        assert_eq!(
            rd_trainer_new(ds, cfg.as_ptr(), &mut tr),
            RdStatus::InvalidArgument
        );
        assert!(tr.is_null());

        let cfg =
            CString::new(r#"{"lr": 1.5e308, "grid": [6, 6, 6], "samples_per_ray": 8}"#).unwrap();
        assert_eq!(rd_trainer_new(ds, cfg.as_ptr(), &mut tr), RdStatus::Ok);
        assert_eq!(
            rd_trainer_step(tr, 50, ptr::null_mut()),
            RdStatus::Numerical
        );
        assert!(last_error().contains("non-finite"));
        rd_trainer_free(tr);

        let mut n = 0;
        assert_eq!(
            rd_dataset_view_count(ptr::null(), RdSplit::Test, &mut n),
            RdStatus::NullPointer
        );
        rd_dataset_free(ds);
        rd_dataset_free(ptr::null_mut());
        let v = CStr::from_ptr(rd_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
