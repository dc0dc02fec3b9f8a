//! C ABI over the nlwtori solver. Handles are opaque; every call returns an `NlwStatus`
//! and the message of the last failure on the calling thread is kept for
//! `nlw_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nlwtori::birkhoff::gbar_matrix;
use nlwtori::cli::{build_model, screen_frequency, solve_model};
use nlwtori::config::RunConfig;
use nlwtori::verification::TorusSolution;
use nlwtori::Error;

/// Status codes; the positive ones match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlwStatus {
    Ok = 0,
    Failure = 1,
    Inadmissible = 2,
    NoConvergence = 3,
    Config = 64,
    NullPointer = -1,
    BufferTooSmall = -2,
    Panic = -3,
}

pub struct NlwConfig {
    inner: RunConfig,
}

pub struct NlwSolution {
    inner: TorusSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> NlwStatus {
    match e.exit_code() {
        2 => NlwStatus::Inadmissible,
        3 => NlwStatus::NoConvergence,
        64 => NlwStatus::Config,
        _ => NlwStatus::Failure,
    }
}

fn guard<F: FnOnce() -> Result<(), NlwStatus>>(f: F) -> NlwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NlwStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside nlwtori".into());
            NlwStatus::Panic
        }
    }
}

fn fail(e: Error) -> NlwStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null() -> NlwStatus {
    set_error("null pointer argument".into());
    NlwStatus::NullPointer
}

/// Copies `s` NUL-terminated into `buf`; `needed` receives the size including the NUL.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), NlwStatus> {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        set_error(format!("buffer of {len} bytes, need {}", s.len() + 1));
        return Err(NlwStatus::BufferTooSmall);
    }
    ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Parses configuration text (`key = value` lines).
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nlw_config_parse(text: *const c_char, out: *mut *mut NlwConfig) -> NlwStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return Err(null());
        }
        *out = ptr::null_mut();
        let s = CStr::from_ptr(text).to_str().map_err(|_| fail(Error::Config("config text is not UTF-8".into())))?;
        let cfg = RunConfig::parse(s).map_err(fail)?;
        *out = Box::into_raw(Box::new(NlwConfig { inner: cfg }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from `nlw_config_parse` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn nlw_config_free(cfg: *mut NlwConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Screens the frequency and runs the coupled solve.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nlw_solve(cfg: *const NlwConfig, out: *mut *mut NlwSolution) -> NlwStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return Err(null());
        }
        *out = ptr::null_mut();
        let cfg = &(*cfg).inner;
        let model = build_model(cfg, &cfg.frequency.amplitudes).map_err(fail)?;
        screen_frequency(cfg, &model.omega).map_err(fail)?;
        let sol = solve_model(cfg, &model).map_err(fail)?;
        *out = Box::into_raw(Box::new(NlwSolution { inner: TorusSolution::from_coupled(&model, &sol) }));
        Ok(())
    })
}

/// # Safety
/// `sol` must come from `nlw_solve` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn nlw_solution_free(sol: *mut NlwSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Fixed-point and tangential residuals stored with the solution.
///
/// # Safety
/// `sol` must be a live solution handle; `fp` and `tangential` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nlw_solution_residual(sol: *const NlwSolution, fp: *mut f64, tangential: *mut f64) -> NlwStatus {
    guard(|| {
        if sol.is_null() || fp.is_null() || tangential.is_null() {
            return Err(null());
        }
        let r = &(*sol).inner.residual;
        *fp = r.fp;
        *tangential = r.tangential;
        Ok(())
    })
}

/// Writes the d tangential frequencies into `buf` (capacity `len`); `d` receives the count.
///
/// # Safety
/// `sol` must be a live handle, `buf` valid for `len` doubles, `d` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nlw_solution_omega(sol: *const NlwSolution, buf: *mut f64, len: usize, d: *mut usize) -> NlwStatus {
    guard(|| {
        if sol.is_null() || d.is_null() {
            return Err(null());
        }
        let w = &(*sol).inner.omega;
        *d = w.len();
        if buf.is_null() || len < w.len() {
            set_error(format!("buffer of {len} doubles, need {}", w.len()));
            return Err(NlwStatus::BufferTooSmall);
        }
        ptr::copy_nonoverlapping(w.as_ptr(), buf, w.len());
        Ok(())
    })
}

/// Serializes the solution as JSON into `buf`. Call with a null `buf` to learn `needed`.
///
/// # Safety
/// `sol` must be a live handle, `buf` null or valid for `len` bytes, `needed` null or valid.
#[no_mangle]
pub unsafe extern "C" fn nlw_solution_json(sol: *const NlwSolution, buf: *mut c_char, len: usize, needed: *mut usize) -> NlwStatus {
    guard(|| {
        if sol.is_null() {
            return Err(null());
        }
        let s = (*sol).inner.to_json().to_string();
        copy_out(&s, buf, len, needed)
    })
}

/// Normal-form coefficients gbar (row-major n x n) for tangential indices `set`.
///
/// # Safety
/// `set` valid for `n` ints and `out` for `n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn nlw_gbar(set: *const i32, n: usize, m: f64, out: *mut f64) -> NlwStatus {
    guard(|| {
        if set.is_null() || out.is_null() {
            return Err(null());
        }
        let idx = std::slice::from_raw_parts(set, n).to_vec();
        let cfg = nlwtori::nlw_model::NlwConfig::new(m, vec![1.0], idx.clone(), idx.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(1))
            .map_err(fail)?;
        let g = gbar_matrix(&cfg.tangential_set, cfg.m);
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                *out.add(i * n + j) = *v;
            }
        }
        Ok(())
    })
}

/// Message of the last failure on this thread.
///
/// # Safety
/// `buf` null or valid for `len` bytes, `needed` null or valid.
#[no_mangle]
pub unsafe extern "C" fn nlw_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> NlwStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    let status = match copy_out(&msg, buf, len, needed) {
        Ok(()) => NlwStatus::Ok,
        Err(s) => s,
    };
    // a sizing call must not replace the message it is sizing
    set_error(msg);
    status
}
