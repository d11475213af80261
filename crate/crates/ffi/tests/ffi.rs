use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use mammoview::model::{build_single_view, save_archive, ArchiveMeta, BuildOptions, ModelSpec, SingleViewInit};
use mammoview::raster::Raster;
use mammoview_ffi::*;

fn scores(s: &[f64], y: &[u8]) -> *mut MvScores {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { mv_scores_new(s.as_ptr(), y.as_ptr(), s.len(), &mut out) }, MvStatus::Ok);
    out
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { mv_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn z_test_reproduces_reference_p_values() {
    let mut out = MvZTestResult::default();
    assert_eq!(unsafe { mv_z_test(0.8325, 0.0171, 0.8313, 0.0172, 0.5, &mut out) }, MvStatus::Ok);
    assert!((out.p_one_tailed - 0.4721).abs() < 5e-4);
    assert_eq!(unsafe { mv_z_test(0.8325, 0.0171, 0.8033, 0.0183, 0.5, &mut out) }, MvStatus::Ok);
    assert!((out.p_one_tailed - 0.0499).abs() < 5e-4);
    assert_eq!(unsafe { mv_z_test(0.8, 0.0, 0.7, 0.01, 0.5, &mut out) }, MvStatus::ZeroVariance);
}

#[test]
fn auc_and_delong_through_handles() {
    let y = [1u8, 1, 1, 0, 0, 0];
    let a = scores(&[0.9, 0.8, 0.4, 0.5, 0.2, 0.1], &y);
    let b = scores(&[0.6, 0.5, 0.5, 0.5, 0.3, 0.7], &y);
    let mut r = MvAucReport::default();
    assert_eq!(unsafe { mv_auc_report(a, &mut r) }, MvStatus::Ok);
    assert!((r.auc - 8.0 / 9.0).abs() < 1e-12);
    assert_eq!((r.n_pos, r.n_neg), (3, 3));

    let mut d = MvDelongResult::default();
    assert_eq!(unsafe { mv_delong(a, a, &mut d) }, MvStatus::Ok);
    assert!(d.zero_difference && !d.z_defined);
    assert_eq!(d.p_one_tailed, 0.5);
    assert_eq!(unsafe { mv_delong(a, b, &mut d) }, MvStatus::Ok);
    assert!(d.z_defined && d.auc1 > d.auc2 && d.p_one_tailed < 0.5);

    let short = scores(&[0.2, 0.7], &[0, 1]);
    assert_eq!(unsafe { mv_delong(a, short, &mut d) }, MvStatus::UnpairedScoreSets);
    unsafe {
        mv_scores_free(a);
        mv_scores_free(b);
        mv_scores_free(short);
        mv_scores_free(ptr::null_mut());
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut out = ptr::null_mut();
    let s = [0.5, 0.7];
    let one_class = scores(&s, &[1, 1]);
    let mut r = MvAucReport::default();
    assert_eq!(unsafe { mv_auc_report(one_class, &mut r) }, MvStatus::DegenerateLabels);
    assert!(last_error().contains("both classes"));
    unsafe { mv_scores_free(one_class) };
    assert_eq!(unsafe { mv_scores_new(ptr::null(), [1u8, 0].as_ptr(), 2, &mut out) }, MvStatus::NullPointer);
    assert!(out.is_null());
    assert!(last_error().contains("scores"));
    assert_eq!(unsafe { mv_scores_new(s.as_ptr(), [1u8, 2].as_ptr(), 2, &mut out) }, MvStatus::InvalidArgument);

    let mut se = 0.0;
    assert_eq!(unsafe { mv_hanley_mcneil_se(0.5, 10, 10, &mut se) }, MvStatus::Ok);
    assert!((se - 0.132288).abs() < 1e-6);
    assert_eq!(unsafe { mv_last_error(ptr::null_mut(), 0) }, 0);
    assert_eq!(unsafe { mv_hanley_mcneil_se(1.5, 10, 10, &mut se) }, MvStatus::InvalidArgument);

    let mut tiny = vec![0 as c_char; 4];
    let full = unsafe { mv_last_error(tiny.as_mut_ptr(), tiny.len()) };
    assert!(full > 4);
    assert_eq!(unsafe { CStr::from_ptr(tiny.as_ptr()) }.to_bytes().len(), 3);
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(mv_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_round_trip_matches_library_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::whole_image("tiny-mbconv", (96, 80));
    let (model, _) = build_single_view(&spec, SingleViewInit::FromPretrained, &BuildOptions::random(7)).unwrap();
    let path = dir.path().join("best.safetensors");
    let meta = ArchiveMeta { spec: spec.clone(), source_run: "test".into(), epoch: 0, val_metric: 0.5, seed: 7 };
    save_archive(&model, &path, &meta).unwrap();

    let img: Vec<f32> = (0..96 * 80).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    let want = model.predict_images(&[Raster::from_vec(96, 80, img.clone()).unwrap()]).unwrap()[0];

    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mv_model_load(c.as_ptr(), &mut m) }, MvStatus::Ok);
    let mut k = 0;
    assert_eq!(unsafe { mv_model_n_classes(m, &mut k) }, MvStatus::Ok);
    assert_eq!(k, 1);
    let mut p = 0.0;
    assert_eq!(unsafe { mv_model_predict(m, img.as_ptr(), 96, 80, &mut p) }, MvStatus::Ok);
    assert!((p - want).abs() < 1e-6, "{p} vs {want}");
    assert!((0.0..=1.0).contains(&p));
    // wrong head for pair / patch prediction
    assert_eq!(unsafe { mv_model_predict_pair(m, img.as_ptr(), img.as_ptr(), 96, 80, &mut p) }, MvStatus::InvalidArgument);
    let mut probs = [0.0; 5];
    assert_eq!(unsafe { mv_model_predict_patch(m, img.as_ptr(), 96, 80, probs.as_mut_ptr(), 5) }, MvStatus::InvalidArgument);
    assert_eq!(unsafe { mv_model_predict(m, img.as_ptr(), 0, 80, &mut p) }, MvStatus::InvalidArgument);
    unsafe { mv_model_free(m) };

    let missing = CString::new(dir.path().join("nope.safetensors").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mv_model_load(missing.as_ptr(), &mut m) }, MvStatus::Io);
    assert!(m.is_null());
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/mammoview.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for f in exports {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
}

/// Compiles `tests/c/smoke.c` against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler, skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libmammoview_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let status = std::process::Command::new(cc)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")), "{text}");
    let p: f64 = text.split_whitespace().last().unwrap().parse().unwrap();
    assert!((p - 0.0499).abs() <= 5e-4, "{text}");
}
