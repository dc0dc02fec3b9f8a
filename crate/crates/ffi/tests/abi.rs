use std::ffi::{c_char, CStr, CString};
use std::ptr;

use nlwtori_ffi::*;

const REF: &str = "model.m = 1\nmodel.f = 1\nmodel.tangential = 1\nmodel.n_space = 8\nfrequency.amplitudes = 5e-3\n";

fn last_error() -> String {
    let mut need = 0usize;
    unsafe {
        nlw_last_error(ptr::null_mut(), 0, &mut need);
        let mut buf = vec![0 as c_char; need];
        assert_eq!(nlw_last_error(buf.as_mut_ptr(), need, &mut need), NlwStatus::Ok);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn parse(text: &str) -> (NlwStatus, *mut NlwConfig) {
    let c = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let st = unsafe { nlw_config_parse(c.as_ptr(), &mut cfg) };
    (st, cfg)
}

#[test]
fn solve_roundtrip() {
    let (st, cfg) = parse(REF);
    assert_eq!(st, NlwStatus::Ok);
    let mut sol = ptr::null_mut();
    unsafe {
        assert_eq!(nlw_solve(cfg, &mut sol), NlwStatus::Ok);
        let (mut fp, mut tr) = (1.0, 1.0);
        assert_eq!(nlw_solution_residual(sol, &mut fp, &mut tr), NlwStatus::Ok);
        assert!(fp < 1e-12 && tr < 1e-12);
        let mut d = 0usize;
        let mut w = [0.0f64; 1];
        assert_eq!(nlw_solution_omega(sol, ptr::null_mut(), 0, &mut d), NlwStatus::BufferTooSmall);
        assert_eq!(d, 1);
        assert_eq!(nlw_solution_omega(sol, w.as_mut_ptr(), 1, &mut d), NlwStatus::Ok);
        let mu = 2f64.sqrt();
        let shift = 9.0 / (32.0 * std::f64::consts::PI) * 25e-6;
        assert!((w[0] - mu - shift).abs() < 1e-15);
        let mut need = 0usize;
        assert_eq!(nlw_solution_json(sol, ptr::null_mut(), 0, &mut need), NlwStatus::BufferTooSmall);
        let mut buf = vec![0 as c_char; need];
        assert_eq!(nlw_solution_json(sol, buf.as_mut_ptr(), need, &mut need), NlwStatus::Ok);
        let text = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        let v: serde_json::Value = serde_json::from_str(text).unwrap();
        assert!(v.get("z").is_some());
        nlw_solution_free(sol);
        nlw_config_free(cfg);
    }
}

#[test]
fn error_codes() {
    let (st, cfg) = parse("model.m = 1\nmodel.bogus = 2\n");
    assert_eq!(st, NlwStatus::Config);
    assert!(cfg.is_null());
    let msg = last_error();
    assert!(msg.contains("model.bogus"), "{msg}");

    let (st, cfg) = parse(&format!("{REF}frequency.omega = 2.2360679774997896964\n"));
    assert_eq!(st, NlwStatus::Ok);
    let mut sol = ptr::null_mut();
    unsafe {
        assert_eq!(nlw_solve(cfg, &mut sol), NlwStatus::Inadmissible);
        assert!(sol.is_null());
        assert!(last_error().contains("q = [1]"));
        assert_eq!(nlw_solve(ptr::null(), &mut sol), NlwStatus::NullPointer);
        nlw_config_free(cfg);
        nlw_config_free(ptr::null_mut());
        nlw_solution_free(ptr::null_mut());
    }
}

#[test]
fn gbar_matches_closed_form() {
    let set = [1i32, 2];
    let mut g = [0.0f64; 4];
    assert_eq!(unsafe { nlw_gbar(set.as_ptr(), 2, 1.0, g.as_mut_ptr()) }, NlwStatus::Ok);
    let pi = std::f64::consts::PI;
    assert!((g[0] - 9.0 / (32.0 * pi)).abs() < 1e-15);
    assert!((g[1] - 3.0 / (4.0 * pi * 10f64.sqrt())).abs() < 1e-15);
    let dup = [1i32, -1];
    assert_eq!(unsafe { nlw_gbar(dup.as_ptr(), 2, 1.0, g.as_mut_ptr()) }, NlwStatus::Config);
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/nlwtori.h")).unwrap();
    for name in ["nlw_config_parse", "nlw_solve", "nlw_solution_free", "nlw_last_error", "NLW_STATUS_INADMISSIBLE", "typedef struct NlwSolution"] {
        assert!(h.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let h = concat!(env!("CARGO_MANIFEST_DIR"), "/include/nlwtori.h");
    let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c", h]).output() else {
        eprintln!("no C compiler, skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
