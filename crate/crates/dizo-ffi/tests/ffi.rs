//! Exercises the C ABI through the exported symbols.

use std::ffi::CString;
use std::ptr;

use dizo_ffi::*;

fn train_config(steps: u64, lr: f64, seed: u64) -> DizoTrainConfig {
    DizoTrainConfig {
        steps,
        lr,
        lr_linear_decay: false,
        eps: 1e-3,
        q: 1,
        batch_size: 8,
        seed,
        eval_every: 25,
    }
}

fn projection(tau: f64, kappa: u64) -> DizoProjectionConfig {
    DizoProjectionConfig {
        tau,
        kappa,
        eps: 0.1,
        inner_iters: 10,
        inner_lr: 0.3,
        anchor_q8: false,
    }
}

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { dizo_last_error(buf.as_mut_ptr() as *mut _, buf.len()) };
    String::from_utf8_lossy(&buf[..n.min(255)]).into_owned()
}

#[test]
fn version_is_a_static_string() {
    let ptr = dizo_version();
    assert!(!ptr.is_null());
    let version = unsafe { std::ffi::CStr::from_ptr(ptr) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn quadratic_run_round_trip() {
    let mut oracle: *mut DizoOracle = ptr::null_mut();
    let status = dizo_oracle_quadratic(8, 1000, 0.0, 0, &mut oracle);
    assert_eq!(status, DizoStatus::Ok);
    assert!(!oracle.is_null());

    let mut dim = 0u64;
    assert_eq!(
        unsafe { dizo_oracle_total_dim(oracle, &mut dim) },
        DizoStatus::Ok
    );
    assert_eq!(dim, 32);

    let config = train_config(200, 1e-2, 7);
    let mut run: *mut DizoRun = ptr::null_mut();
    assert_eq!(
        unsafe { dizo_run_zo_sgd(oracle, &config, &mut run) },
        DizoStatus::Ok
    );

    let mut count = 0usize;
    assert_eq!(
        unsafe { dizo_run_record_count(run, &mut count) },
        DizoStatus::Ok
    );
    assert!(count >= 2);

    let mut first = DizoRecord {
        iteration: 99,
        loss_clean: 0.0,
        loss_probe: 0.0,
        lr: 0.0,
        step_movement: 0.0,
        stability_slack: 0.0,
    };
    assert_eq!(unsafe { dizo_run_record(run, 0, &mut first) }, DizoStatus::Ok);
    assert_eq!(first.iteration, 0);

    let mut final_loss = f64::NAN;
    assert_eq!(
        unsafe { dizo_run_final_loss(run, &mut final_loss) },
        DizoStatus::Ok
    );
    assert!(final_loss.is_finite() && final_loss < first.loss_clean);

    let mut passes = 0u64;
    assert_eq!(
        unsafe { dizo_run_forward_passes(run, &mut passes) },
        DizoStatus::Ok
    );
    assert_eq!(passes, 400);

    let mut aborted = true;
    assert_eq!(unsafe { dizo_run_aborted(run, &mut aborted) }, DizoStatus::Ok);
    assert!(!aborted);

    unsafe {
        dizo_run_free(run);
        dizo_oracle_free(oracle);
    }
}

#[test]
fn projected_run_with_never_triggering_cycle_matches_baseline() {
    let mut oracle: *mut DizoOracle = ptr::null_mut();
    assert_eq!(
        dizo_oracle_quadratic(8, 1000, 0.0, 0, &mut oracle),
        DizoStatus::Ok
    );
    let config = train_config(150, 1e-2, 3);

    let mut zo: *mut DizoRun = ptr::null_mut();
    assert_eq!(
        unsafe { dizo_run_zo_sgd(oracle, &config, &mut zo) },
        DizoStatus::Ok
    );
    let mut dz: *mut DizoRun = ptr::null_mut();
    let proj = projection(0.2, 151);
    assert_eq!(
        unsafe { dizo_run_dizo(oracle, &config, &proj, &mut dz) },
        DizoStatus::Ok
    );

    let mut zo_final = 0.0;
    let mut dz_final = 0.0;
    unsafe {
        dizo_run_final_loss(zo, &mut zo_final);
        dizo_run_final_loss(dz, &mut dz_final);
    }
    assert_eq!(zo_final.to_bits(), dz_final.to_bits());

    unsafe {
        dizo_run_free(zo);
        dizo_run_free(dz);
        dizo_oracle_free(oracle);
    }
}

#[test]
fn projected_run_stays_stable_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut oracle: *mut DizoOracle = ptr::null_mut();
    assert_eq!(
        dizo_oracle_mlp_blobs(2, 8, 3, 1000, 10, 16, 4.0, 7, &mut oracle),
        DizoStatus::Ok
    );
    let config = train_config(120, 5e-3, 5);
    let proj = DizoProjectionConfig {
        inner_lr: 0.1,
        ..projection(0.2, 40)
    };
    let mut run: *mut DizoRun = ptr::null_mut();
    assert_eq!(
        unsafe { dizo_run_dizo(oracle, &config, &proj, &mut run) },
        DizoStatus::Ok
    );

    let mut violations = 99u64;
    assert_eq!(
        unsafe { dizo_run_stability_violations(run, &mut violations) },
        DizoStatus::Ok
    );
    assert_eq!(violations, 0);

    let csv = CString::new(dir.path().join("run.csv").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { dizo_run_write_csv(run, csv.as_ptr()) },
        DizoStatus::Ok
    );
    let ckpt = CString::new(dir.path().join("run.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { dizo_run_save_checkpoint(run, ckpt.as_ptr()) },
        DizoStatus::Ok
    );
    let text = std::fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert!(text.starts_with("iter,loss_clean,loss_probe,lr,step_movement,stability_slack"));
    assert!(text.lines().next().unwrap().contains("projmag."));
    assert!(dizo_core::checkpoint::load_params(&dir.path().join("run.ckpt")).is_ok());

    unsafe {
        dizo_run_free(run);
        dizo_oracle_free(oracle);
    }
}

#[test]
fn null_and_invalid_arguments_set_errors() {
    let config = train_config(10, 1e-2, 1);
    let mut run: *mut DizoRun = ptr::null_mut();
    assert_eq!(
        unsafe { dizo_run_zo_sgd(ptr::null(), &config, &mut run) },
        DizoStatus::NullPointer
    );
    assert!(last_error().contains("null"));

    let mut oracle: *mut DizoOracle = ptr::null_mut();
    assert_eq!(
        dizo_oracle_logistic_blobs(1, 2, 1, 4, 8, 4.0, 1, &mut oracle),
        DizoStatus::InvalidArgument
    );

    assert_eq!(dizo_oracle_quadratic(8, 1, 0.0, 0, &mut oracle), DizoStatus::Ok);
    let bad = DizoTrainConfig {
        steps: 0,
        ..train_config(10, 1e-2, 1)
    };
    assert_eq!(
        unsafe { dizo_run_zo_sgd(oracle, &bad, &mut run) },
        DizoStatus::ConfigError
    );
    assert!(last_error().contains("steps"), "{}", last_error());

    let bad_proj = DizoProjectionConfig {
        tau: 1.5,
        ..projection(0.2, 10)
    };
    let config = train_config(10, 1e-2, 1);
    assert_eq!(
        unsafe { dizo_run_dizo(oracle, &config, &bad_proj, &mut run) },
        DizoStatus::ConfigError
    );
    assert!(last_error().contains("tau"), "{}", last_error());

    let mut rec = DizoRecord {
        iteration: 0,
        loss_clean: 0.0,
        loss_probe: 0.0,
        lr: 0.0,
        step_movement: 0.0,
        stability_slack: 0.0,
    };
    let mut ok_run: *mut DizoRun = ptr::null_mut();
    assert_eq!(
        unsafe { dizo_run_zo_sgd(oracle, &config, &mut ok_run) },
        DizoStatus::Ok
    );
    assert_eq!(
        unsafe { dizo_run_record(ok_run, 10_000, &mut rec) },
        DizoStatus::InvalidArgument
    );

    unsafe {
        dizo_run_free(ok_run);
        dizo_oracle_free(oracle);
    }
}

#[test]
fn generated_header_exists_with_expected_symbols() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("dizo.h");
    let text = std::fs::read_to_string(&header).expect("cbindgen header");
    for symbol in [
        "DizoStatus",
        "DizoTrainConfig",
        "DizoProjectionConfig",
        "dizo_oracle_quadratic",
        "dizo_run_dizo",
        "dizo_run_record",
        "dizo_last_error",
        "dizo_run_free",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
}
