use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use imprint_lab::detector::{Branches, Detector, DetectorConfig, LossWeights};
use imprint_lab::imprint::{FieldProvenance, LaplaceField};
use imprint_lab_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = iml_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_detector() -> Detector {
    let cfg = DetectorConfig {
        noise_dim: 8,
        freq_bands: 8,
        sem_dim: 8,
        nie_width: 4,
        sem_width: 4,
        head_hidden: 8,
        projector_hidden: 8,
        branches: Branches::default(),
        ..DetectorConfig::default()
    };
    Detector::new(cfg, LossWeights::default(), 16, [4, 4, 4], 3).unwrap()
}

#[test]
fn detector_round_trip_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.ckpt");
    let det = small_detector();
    det.save(&path, "test").unwrap();

    let mut h: *mut ImlDetector = ptr::null_mut();
    assert_eq!(unsafe { iml_detector_load(cstr(&path).as_ptr(), &mut h) }, ImlStatus::Ok);
    assert!(iml_last_error_message().is_null());
    assert_eq!(unsafe { iml_detector_resolution(h) }, 16);

    let n = 3;
    let per = 3 * 16 * 16;
    let pixels: Vec<f32> = (0..n * per).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    let mut probs = vec![f64::NAN; n];
    let st = unsafe { iml_detector_predict(h, pixels.as_ptr(), n, 16, probs.as_mut_ptr()) };
    assert_eq!(st, ImlStatus::Ok);

    let images: Vec<_> = pixels
        .chunks(per)
        .map(|px| imprint_lab::corpus::Image::new("x", imprint_lab::corpus::Label::Real, None, 16, px.to_vec()).unwrap())
        .collect();
    let refs: Vec<_> = images.iter().collect();
    assert_eq!(probs, det.predict_proba(&refs).unwrap());
    unsafe { iml_detector_free(h) };
}

#[test]
fn predict_reports_shape_and_range_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.ckpt");
    small_detector().save(&path, "test").unwrap();
    let mut h: *mut ImlDetector = ptr::null_mut();
    assert_eq!(unsafe { iml_detector_load(cstr(&path).as_ptr(), &mut h) }, ImlStatus::Ok);

    let px = vec![0.5f32; 3 * 32 * 32];
    let mut out = [0.0];
    assert_eq!(unsafe { iml_detector_predict(h, px.as_ptr(), 1, 32, out.as_mut_ptr()) }, ImlStatus::Shape);
    assert!(last_error().contains("32"));

    let bad = vec![2.0f32; 3 * 16 * 16];
    assert_eq!(
        unsafe { iml_detector_predict(h, bad.as_ptr(), 1, 16, out.as_mut_ptr()) },
        ImlStatus::Precondition
    );
    assert_eq!(
        unsafe { iml_detector_predict(ptr::null(), px.as_ptr(), 1, 16, out.as_mut_ptr()) },
        ImlStatus::NullPointer
    );
    unsafe { iml_detector_free(h) };
}

#[test]
fn load_errors_carry_codes_and_messages() {
    let mut h: *mut ImlDetector = ptr::null_mut();
    let missing = CString::new("/nonexistent/det.ckpt").unwrap();
    assert_eq!(unsafe { iml_detector_load(missing.as_ptr(), &mut h) }, ImlStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/det.ckpt"));

    assert_eq!(unsafe { iml_detector_load(ptr::null(), &mut h) }, ImlStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(unsafe { iml_detector_load(cstr(&junk).as_ptr(), &mut h) }, ImlStatus::Format);

    // A field file is not a detector.
    let fp = dir.path().join("f.field");
    unit_field().save(&fp, "test").unwrap();
    assert_eq!(unsafe { iml_detector_load(cstr(&fp).as_ptr(), &mut h) }, ImlStatus::Format);
    unsafe { iml_detector_free(ptr::null_mut()) };
}

fn unit_field() -> LaplaceField {
    let prov = FieldProvenance {
        n: 10,
        source_generators: vec!["gen-a".into()],
        epsilon: 1e-6,
    };
    LaplaceField::new([1, 2, 2], vec![0.0, 1.0, -1.0, 0.5], vec![1.0, 0.5, 2.0, 1e-6], prov).unwrap()
}

#[test]
fn field_sampling_is_seeded_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.field");
    unit_field().save(&path, "test").unwrap();
    let mut f: *mut ImlField = ptr::null_mut();
    assert_eq!(unsafe { iml_field_load(cstr(&path).as_ptr(), &mut f) }, ImlStatus::Ok);

    let mut shape = [0usize; 3];
    assert_eq!(unsafe { iml_field_shape(f, shape.as_mut_ptr()) }, ImlStatus::Ok);
    assert_eq!(shape, [1, 2, 2]);

    let mut a = vec![0.0; 8];
    let mut b = vec![0.0; 8];
    assert_eq!(unsafe { iml_field_sample(f, 7, 2, a.as_mut_ptr(), a.len()) }, ImlStatus::Ok);
    assert_eq!(unsafe { iml_field_sample(f, 7, 2, b.as_mut_ptr(), b.len()) }, ImlStatus::Ok);
    assert_eq!(a, b);
    assert_ne!(a[..4], a[4..]);
    // The floored element barely moves.
    assert!((a[3] - 0.5).abs() < 1e-4 && (a[7] - 0.5).abs() < 1e-4);

    let mut small = vec![0.0; 7];
    assert_eq!(
        unsafe { iml_field_sample(f, 7, 2, small.as_mut_ptr(), small.len()) },
        ImlStatus::InvalidArgument
    );
    unsafe { iml_field_free(f) };
}

#[test]
fn version_and_threshold() {
    let v = unsafe { CStr::from_ptr(iml_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    assert_eq!(iml_decision_threshold(), 0.5);
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/imprint_lab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "iml_detector_load",
        "iml_detector_predict",
        "iml_detector_free",
        "iml_field_sample",
        "iml_last_error_message",
        "IML_STATUS_OK",
        "typedef struct ImlDetector ImlDetector",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    match Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).status() {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
