use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use cutclust::pipeline::synth_blobs;
use cutclust_ffi::*;

const SMALL: &str = r#"{"pretrain_epochs": 30, "train_epochs": 30, "layers": [32, 4]}"#;

fn last_error() -> String {
    let p = cc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config(k: usize) -> *mut CcConfig {
    let json = CString::new(SMALL).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { cc_config_from_json(json.as_ptr(), &mut cfg) }, CcStatus::Ok);
    assert_eq!(unsafe { cc_config_set_k(cfg, k) }, CcStatus::Ok);
    cfg
}

fn dense(n: usize, genes: usize, k: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let (x, labels) = synth_blobs(n, genes, k, 25.0, 0.0, seed).unwrap();
    (x.values().iter().copied().collect(), labels)
}

#[test]
fn full_round_trip() {
    let (n, genes, k) = (60, 12, 3);
    let (data, truth) = dense(n, genes, k, 4);
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(cc_matrix_from_dense(data.as_ptr(), n, genes, &mut m), CcStatus::Ok);
        let (mut rows, mut cols) = (0, 0);
        assert_eq!(cc_matrix_shape(m, &mut rows, &mut cols), CcStatus::Ok);
        assert_eq!((rows, cols), (n, genes));

        let cfg = small_config(k);
        assert_eq!(cc_config_set_seed(cfg, 7), CcStatus::Ok);
        let mut res = ptr::null_mut();
        assert_eq!(cc_run(m, cfg, truth.as_ptr(), truth.len(), &mut res), CcStatus::Ok, "{}", last_error());
        assert!(cc_last_error().is_null());

        let (mut cells, mut kk, mut dim) = (0, 0, 0);
        assert_eq!(cc_result_shape(res, &mut cells, &mut kk, &mut dim), CcStatus::Ok);
        assert_eq!((cells, kk, dim), (n, k, 4));

        let mut labels = vec![usize::MAX; n];
        assert_eq!(cc_result_labels(res, labels.as_mut_ptr(), n), CcStatus::Ok);
        assert!(labels.iter().all(|&l| l < k));

        let mut emb = vec![f64::NAN; n * dim];
        assert_eq!(cc_result_embedding(res, emb.as_mut_ptr(), emb.len()), CcStatus::Ok);
        assert!(emb.iter().all(|v| v.is_finite()));

        let mut q = vec![f64::NAN; n * k];
        assert_eq!(cc_result_soft_assignments(res, q.as_mut_ptr(), q.len()), CcStatus::Ok);
        for row in q.chunks(k) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        let mut metrics = CcMetrics::default();
        assert_eq!(cc_result_metrics(res, &mut metrics), CcStatus::Ok);
        assert!((0.0..=1.0).contains(&metrics.acc));
        assert!(metrics.ari <= 1.0);

        let dir = tempfile::tempdir().unwrap();
        let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(cc_result_write(res, cdir.as_ptr()), CcStatus::Ok);
        for f in ["assignments.csv", "embedding.csv", "losses.csv", "metrics.json", "checkpoint.bin"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }

        cc_result_free(res);
        cc_config_free(cfg);
        cc_matrix_free(m);
    }
}

#[test]
fn load_from_file_and_run_without_truth() {
    let (n, genes, k) = (40, 10, 2);
    let (x, _) = synth_blobs(n, genes, k, 25.0, 0.0, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    x.write_csv(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(cc_matrix_load(cpath.as_ptr(), &mut m), CcStatus::Ok, "{}", last_error());
        let cfg = small_config(k);
        let mut res = ptr::null_mut();
        assert_eq!(cc_run(m, cfg, ptr::null(), 0, &mut res), CcStatus::Ok, "{}", last_error());
        let mut metrics = CcMetrics::default();
        assert_eq!(cc_result_metrics(res, &mut metrics), CcStatus::DataError);
        assert!(last_error().contains("truth"));
        cc_result_free(res);
        cc_config_free(cfg);
        cc_matrix_free(m);
    }
}

#[test]
fn status_codes_match_error_classes() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let bad = CString::new(r#"{"no_such_key": 1}"#).unwrap();
        assert_eq!(cc_config_from_json(bad.as_ptr(), &mut cfg), CcStatus::ConfigError);
        assert!(cfg.is_null());
        assert!(last_error().contains("no_such_key"));

        let missing = CString::new("/nonexistent/matrix.csv").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(cc_matrix_load(missing.as_ptr(), &mut m), CcStatus::DataError);

        let negative = [1.0, -2.0, 3.0, 4.0];
        assert_eq!(cc_matrix_from_dense(negative.as_ptr(), 2, 2, &mut m), CcStatus::DataError);

        assert_eq!(cc_matrix_load(ptr::null(), &mut m), CcStatus::InvalidArgument);
        assert_eq!(cc_matrix_shape(ptr::null(), ptr::null_mut(), ptr::null_mut()), CcStatus::InvalidArgument);

        let cfg = cc_config_new();
        assert_eq!(cc_config_set_k(cfg, 1), CcStatus::ConfigError);
        cc_config_free(cfg);

        // numeric codes line up with the CLI exit codes
        assert_eq!(CcStatus::ConfigError as i32, 2);
        assert_eq!(CcStatus::DataError as i32, 3);
        assert_eq!(CcStatus::NumericalError as i32, 4);
    }
}

#[test]
fn truth_length_mismatch_is_a_data_error() {
    let (data, truth) = dense(20, 6, 2, 3);
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(cc_matrix_from_dense(data.as_ptr(), 20, 6, &mut m), CcStatus::Ok);
        let cfg = small_config(2);
        let mut res = ptr::null_mut();
        assert_eq!(cc_run(m, cfg, truth.as_ptr(), 19, &mut res), CcStatus::DataError);
        assert!(res.is_null());
        cc_config_free(cfg);
        cc_matrix_free(m);
    }
}

#[test]
fn wrong_buffer_length_is_rejected() {
    let (data, _) = dense(30, 8, 2, 5);
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(cc_matrix_from_dense(data.as_ptr(), 30, 8, &mut m), CcStatus::Ok);
        let cfg = small_config(2);
        let mut res = ptr::null_mut();
        assert_eq!(cc_run(m, cfg, ptr::null(), 0, &mut res), CcStatus::Ok);
        let mut labels = vec![0usize; 29];
        assert_eq!(cc_result_labels(res, labels.as_mut_ptr(), 29), CcStatus::InvalidArgument);
        assert!(last_error().contains("30"));
        cc_result_free(res);
        cc_config_free(cfg);
        cc_matrix_free(m);
    }
}

#[test]
fn config_json_round_trip() {
    unsafe {
        let cfg = cc_config_new();
        assert_eq!(cc_config_set_seed(cfg, 99), CcStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(cc_config_to_json(cfg, &mut s), CcStatus::Ok);
        let text = CStr::from_ptr(s).to_str().unwrap().to_string();
        cc_string_free(s);
        assert!(text.contains("\"seed\": 99"));

        let c = CString::new(text).unwrap();
        let mut back = ptr::null_mut();
        assert_eq!(cc_config_from_json(c.as_ptr(), &mut back), CcStatus::Ok);
        cc_config_free(back);
        cc_config_free(cfg);
        cc_config_free(ptr::null_mut());
        cc_matrix_free(ptr::null_mut());
        cc_result_free(ptr::null_mut());
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(cc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/cutclust.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["cc_run", "cc_result_labels", "cc_last_error", "CC_STATUS_NUMERICAL_ERROR = 4"] {
        assert!(text.contains(sym), "{sym}");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, header]).output()
        else {
            eprintln!("{compiler} not available, skipping");
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c_program_links_and_runs() {
    // deps/<test binary> → the profile directory holding the static library
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libcutclust_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let manifest = env!("CARGO_MANIFEST_DIR");
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let Ok(out) = Command::new("cc")
        .arg(format!("{manifest}/examples/smoke.c"))
        .arg(format!("-I{manifest}/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
    else {
        eprintln!("cc not available, skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("acc="), "{stdout}");
    assert!(stdout.contains("k=1 -> status 2"), "{stdout}");
}
