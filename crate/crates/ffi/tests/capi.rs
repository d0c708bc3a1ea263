use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ndarray::Array2;
use pwp_core::experiment::{sweep_observation, ExperimentConfig};
use pwp_core::poisson::sample_poisson;
use pwp_ffi::*;

const SMALL_IR: &str = "task = ir\nsize = 16\ncounts = 10\ngrid = 0.5,20,4\nmc_samples = 4\nseeds = 3\n";

fn last_error() -> String {
    let p = pwp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn config(text: &str) -> *mut PwpConfig {
    let c = CString::new(text).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pwp_config_parse(c.as_ptr(), &mut out) }, PwpStatus::Ok);
    assert!(!out.is_null());
    out
}

fn simulate(cfg: *const PwpConfig, seed: u64) -> *mut PwpProblem {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pwp_problem_simulate(cfg, seed, &mut out) }, PwpStatus::Ok);
    out
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(pwp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_errors_map_to_status_codes() {
    let bad = CString::new("nonsense = 1").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pwp_config_parse(bad.as_ptr(), &mut out) }, PwpStatus::InvalidConfig);
    assert!(out.is_null());
    assert!(last_error().contains("nonsense"));

    let cfg = config("");
    let (k, v) = (CString::new("tol").unwrap(), CString::new("-1").unwrap());
    assert_eq!(unsafe { pwp_config_set(cfg, k.as_ptr(), v.as_ptr()) }, PwpStatus::InvalidConfig);
    let v = CString::new("1e-5").unwrap();
    assert_eq!(unsafe { pwp_config_set(cfg, k.as_ptr(), v.as_ptr()) }, PwpStatus::Ok);
    assert!(pwp_last_error().is_null());

    let ct = CString::new("task = ct\nx_update = exact_fft").unwrap();
    assert_eq!(unsafe { pwp_config_parse(ct.as_ptr(), &mut out) }, PwpStatus::InvalidConfig);
    unsafe { pwp_config_free(cfg) };
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pwp_config_parse(ptr::null(), &mut out) }, PwpStatus::NullPointer);
    assert!(last_error().contains("text"));
    let empty = CString::new("").unwrap();
    assert_eq!(unsafe { pwp_config_parse(empty.as_ptr(), ptr::null_mut()) }, PwpStatus::NullPointer);
    assert_eq!(unsafe { pwp_problem_simulate(ptr::null(), 0, &mut ptr::null_mut()) }, PwpStatus::NullPointer);
    let (mut r, mut c) = (0, 0);
    assert_eq!(unsafe { pwp_problem_image_shape(ptr::null(), &mut r, &mut c) }, PwpStatus::NullPointer);
    assert_eq!(unsafe { pwp_sweep_len(ptr::null()) }, 0);
    unsafe {
        pwp_config_free(ptr::null_mut());
        pwp_problem_free(ptr::null_mut());
        pwp_sweep_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_per_thread() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pwp_config_parse(ptr::null(), &mut out) }, PwpStatus::NullPointer);
    let other = std::thread::spawn(|| pwp_last_error().is_null()).join().unwrap();
    assert!(other);
    assert!(!pwp_last_error().is_null());
}

#[test]
fn problem_shapes_and_counts() {
    let cfg = config(SMALL_IR);
    let p = simulate(cfg, 3);
    let (mut r, mut c) = (0, 0);
    assert_eq!(unsafe { pwp_problem_image_shape(p, &mut r, &mut c) }, PwpStatus::Ok);
    assert_eq!((r, c), (16, 16));
    assert_eq!(unsafe { pwp_problem_measurement_shape(p, &mut r, &mut c) }, PwpStatus::Ok);
    assert_eq!((r, c), (16, 16));

    let mut small = vec![0u64; 10];
    assert_eq!(unsafe { pwp_problem_counts(p, small.as_mut_ptr(), small.len()) }, PwpStatus::BufferTooSmall);
    let mut counts = vec![0u64; 256];
    assert_eq!(unsafe { pwp_problem_counts(p, counts.as_mut_ptr(), counts.len()) }, PwpStatus::Ok);

    let core = ExperimentConfig::parse(SMALL_IR).unwrap();
    let model = core.build_model().unwrap();
    let lambda = model.lambda(&(&core.truth().unwrap() * core.scale())).unwrap();
    let want = sample_poisson(lambda.view(), 3).unwrap();
    assert_eq!(counts, want.iter().copied().collect::<Vec<_>>());

    let mut q = ptr::null_mut();
    assert_eq!(unsafe { pwp_problem_from_counts(cfg, counts.as_ptr(), 16, 15, 3, &mut q) }, PwpStatus::InvalidArgument);
    assert!(last_error().contains("16x15"));
    assert_eq!(unsafe { pwp_problem_from_counts(cfg, counts.as_ptr(), 16, 16, 3, &mut q) }, PwpStatus::Ok);
    let mut back = vec![0u64; 256];
    assert_eq!(unsafe { pwp_problem_counts(q, back.as_mut_ptr(), back.len()) }, PwpStatus::Ok);
    assert_eq!(back, counts);
    unsafe {
        pwp_problem_free(q);
        pwp_problem_free(p);
        pwp_config_free(cfg);
    }
}

#[test]
fn solve_returns_nonnegative_image() {
    let cfg = config(SMALL_IR);
    let p = simulate(cfg, 3);
    let mut x = vec![f64::NAN; 256];
    let mut info = PwpSolveInfo::default();
    assert_eq!(unsafe { pwp_solve(p, cfg, 2.0, x.as_mut_ptr(), x.len(), &mut info) }, PwpStatus::Ok);
    assert!(x.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(info.iterations > 1);
    assert!(info.beta > 0.0);
    assert_eq!(unsafe { pwp_solve(p, cfg, 2.0, x.as_mut_ptr(), 255, ptr::null_mut()) }, PwpStatus::BufferTooSmall);
    assert_eq!(unsafe { pwp_solve(p, cfg, -1.0, x.as_mut_ptr(), x.len(), ptr::null_mut()) }, PwpStatus::InvalidArgument);
    unsafe {
        pwp_problem_free(p);
        pwp_config_free(cfg);
    }
}

#[test]
fn sweep_matches_core() {
    let cfg = config(SMALL_IR);
    let p = simulate(cfg, 3);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { pwp_sweep_run(p, cfg, true, &mut s) }, PwpStatus::Ok);
    let n = unsafe { pwp_sweep_len(s) };
    assert_eq!(n, 4);

    let core = ExperimentConfig::parse(SMALL_IR).unwrap();
    let model = core.build_model().unwrap();
    let truth = core.truth().unwrap();
    let lambda = model.lambda(&(&truth * core.scale())).unwrap();
    let y = sample_poisson(lambda.view(), 3).unwrap();
    let want = sweep_observation(&core, &model, &truth, 3, &y, false).unwrap();

    for i in 0..n {
        let mut rec = PwpRecord::default();
        assert_eq!(unsafe { pwp_sweep_record(s, i, &mut rec) }, PwpStatus::Ok);
        let w = &want.records[i];
        assert_eq!(rec.mu, w.mu);
        assert_eq!(rec.whiteness, w.w);
        assert_eq!(rec.discrepancy, w.d);
        assert_eq!(rec.mc_delta, w.mc_delta);
        assert_eq!(rec.snr, w.snr.unwrap());
        assert_eq!(rec.iterations, w.iterations);
        let mut img = vec![0.0; 256];
        assert_eq!(unsafe { pwp_sweep_image(s, i, img.as_mut_ptr(), img.len()) }, PwpStatus::Ok);
        assert_eq!(Array2::from_shape_vec((16, 16), img).unwrap(), w.x_star);
    }
    let mut rec = PwpRecord::default();
    assert_eq!(unsafe { pwp_sweep_record(s, n, &mut rec) }, PwpStatus::InvalidArgument);

    for (st, sel) in [PwpStrategy::Pwp, PwpStrategy::Adp, PwpStrategy::Mcdp].into_iter().zip(&want.selections) {
        let mut idx = usize::MAX;
        assert_eq!(unsafe { pwp_sweep_selected(s, st, &mut idx) }, PwpStatus::Ok);
        assert_eq!(idx, sel.index);
    }
    unsafe {
        pwp_sweep_free(s);
        pwp_problem_free(p);
        pwp_config_free(cfg);
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/pwp.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "pwp_version",
        "pwp_last_error",
        "pwp_config_parse",
        "pwp_config_set",
        "pwp_config_free",
        "pwp_problem_simulate",
        "pwp_problem_from_counts",
        "pwp_problem_free",
        "pwp_problem_image_shape",
        "pwp_problem_measurement_shape",
        "pwp_problem_counts",
        "pwp_solve",
        "pwp_sweep_run",
        "pwp_sweep_free",
        "pwp_sweep_len",
        "pwp_sweep_record",
        "pwp_sweep_image",
        "pwp_sweep_selected",
        "typedef struct PwpConfig PwpConfig;",
        "PWP_STATUS_PANIC = 8",
    ] {
        assert!(h.contains(name), "missing {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"pwp.h\"\nint main(void) {\n  PwpConfig *c = 0;\n  PwpStatus s = pwp_config_parse(\"\", &c);\n  pwp_config_free(c);\n  return s == PWP_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
