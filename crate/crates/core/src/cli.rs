//! Batch commands behind the `nlwtori` binary. Each command writes its artifacts plus a
//! `record.json` (config echo and input hash) into the output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::birkhoff::normal_form;
use crate::config::{content_hash, RunConfig};
use crate::diophantine::{measure_estimate, measure_slope, nlw_clusters, omega_star_member, write_csv, DiophantineParams};
use crate::error::{Error, Result};
use crate::mode_space::{dense_weighted_norm, C64};
use crate::nlw_model::RescaledNlw;
use crate::rg_core::{loglog_slope, RgParams};
use crate::tangential_kam::{coupled_solve, CoupledParams, CoupledSolution};
use crate::verification::{
    fd_taylor, frequency_shift, lindstedt_expand, residual_fp, tangential_residual, torus_pde_residual, TorusSolution,
};

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub levels: Option<usize>,
    pub quiet: bool,
}

/// 17 significant digits.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, v)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Config(format!("output dir {}: {e}", out.display())))
}

fn apply(cfg: &mut RunConfig, ov: &Overrides) {
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(l) = ov.levels {
        cfg.solver.levels = l;
        cfg.measure.levels = l;
    }
}

fn record(out: &Path, command: &str, cfg: &RunConfig, extra: &[&[u8]]) -> Result<String> {
    let seed = cfg.seed.to_le_bytes();
    let levels = cfg.solver.levels.to_le_bytes();
    let mut parts: Vec<&[u8]> = vec![command.as_bytes(), cfg.text.as_bytes(), &seed, &levels];
    parts.extend_from_slice(extra);
    let hash = content_hash(&parts);
    write_json(
        &out.join("record.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "input_hash": hash,
            "seed": cfg.seed,
            "levels": cfg.solver.levels,
            "config_text": cfg.text,
            "config": cfg,
        }),
    )?;
    Ok(hash)
}

pub fn coupled_params(cfg: &RunConfig) -> CoupledParams {
    let s = &cfg.solver;
    CoupledParams {
        tol: s.tol,
        max_iter: s.max_iter,
        rg: RgParams { eta: s.eta, levels: s.levels, order: s.order, s: s.s, ..RgParams::default() },
        ..CoupledParams::default()
    }
}

pub fn build_model(cfg: &RunConfig, amps: &[f64]) -> Result<RescaledNlw> {
    let s = &cfg.solver;
    let m = RescaledNlw::new(&cfg.model, s.q_max, s.kmax, amps, s.delta, s.lambda)?;
    Ok(match &cfg.frequency.omega {
        Some(w) => m.with_omega(w),
        None => m,
    })
}

/// Screens omega against the unperturbed clusters over the whole cap box; error carries the witness.
pub fn screen_frequency(cfg: &RunConfig, omega: &[f64]) -> Result<Value> {
    let f = &cfg.frequency;
    if !(f.k > 0.0) {
        return Ok(json!({ "screened": false }));
    }
    let mut prm = DiophantineParams::new(f.k, omega.iter().map(|&w| (w, w)).collect(), 2);
    prm.eta = cfg.solver.eta;
    prm.q_cap = f.q_cap;
    if let Some(nu) = f.nu {
        prm.nu = nu;
    }
    let top: f64 = omega.iter().map(|w| w.abs()).sum::<f64>() * f.q_cap as f64;
    let kmax = top.ceil() as usize + 2;
    let set = nlw_clusters(&cfg.model, kmax);
    let m = omega_star_member(omega, &[set.clone(), set], &prm);
    match m.witness {
        None => Ok(json!({ "screened": true, "K": f.k, "nu": prm.nu, "q_cap": prm.q_cap })),
        Some(w) => Err(Error::Inadmissible(format!(
            "q = {:?} against {:?}: distance {} <= K|q|^-nu = {}",
            w.q,
            w.target,
            fmt_f(w.distance),
            fmt_f(w.bound)
        ))),
    }
}

pub fn solve_model(cfg: &RunConfig, model: &RescaledNlw) -> Result<CoupledSolution> {
    let mut prm = coupled_params(cfg);
    if model.lambda == 0.0 {
        // the zero torus is already the fixed point after one level
        prm.rg.levels = 1;
    }
    coupled_solve(model, &prm)
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveSummary {
    pub levels: usize,
    pub iterations: usize,
    pub residual_fp: f64,
    pub tangential_residual: f64,
    pub omega: Vec<f64>,
}

pub fn cmd_solve(cfg: &RunConfig, out: &Path, ov: &Overrides) -> Result<SolveSummary> {
    let mut cfg = cfg.clone();
    apply(&mut cfg, ov);
    prepare(out)?;
    record(out, "solve", &cfg, &[])?;
    let model = build_model(&cfg, &cfg.frequency.amplitudes.clone())?;
    if let Err(e) = screen_frequency(&cfg, &model.omega) {
        write_json(&out.join("witness.json"), &json!({ "omega": model.omega, "witness": e.to_string() }))?;
        return Err(e);
    }
    let sol = solve_model(&cfg, &model)?;
    let torus = TorusSolution::from_coupled(&model, &sol);
    write_json(&out.join("solution.json"), &torus.to_json())?;
    write_json(
        &out.join("diagnostics.json"),
        &json!({
            "coupled": {
                "iterations": sol.iterations,
                "changes": sol.changes,
                "rates": sol.rates,
                "tangential_residual": sol.tangential_residual,
                "zero_mode_residual": sol.zero_mode_residual,
                "normal_residual": sol.normal_residual,
            },
            "levels": sol.rg.diagnostics,
        }),
    )?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(out.join("residual.csv"))?;
    w.write_record(["level", "z_norm", "z_change", "residual_fp", "limit_identity", "limit_scale", "gamma_norm"])?;
    let t = &model.trunc;
    for d in &sol.rg.diagnostics {
        let fp = sol.rg.history.get(d.n).map(|z| residual_fp(&model, &sol.tan, z)).unwrap_or(f64::NAN);
        let zn = sol.rg.history.get(d.n).map(|z| dense_weighted_norm(t, z, cfg.solver.s)).unwrap_or(f64::NAN);
        w.write_record([
            d.n.to_string(),
            fmt_f(zn),
            fmt_f(d.dz_norm),
            fmt_f(fp),
            fmt_f(d.ayn1),
            fmt_f(d.ayn1_scale),
            fmt_f(d.gamma_norm),
        ])?;
    }
    w.flush()?;
    let summary = SolveSummary {
        levels: sol.rg.diagnostics.len(),
        iterations: sol.iterations,
        residual_fp: torus.residual.fp,
        tangential_residual: torus.residual.tangential,
        omega: model.omega.clone(),
    };
    let tol = cfg.solver.residual_tol;
    if !(torus.residual.fp <= tol && torus.residual.tangential <= tol) {
        return Err(Error::NoConvergence(format!(
            "residual fp {} tangential {} above solver.residual_tol {}",
            fmt_f(torus.residual.fp),
            fmt_f(torus.residual.tangential),
            fmt_f(tol)
        )));
    }
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureSummary {
    pub slope: Option<f64>,
    pub rows: usize,
}

pub fn cmd_measure(cfg: &RunConfig, out: &Path, ov: &Overrides) -> Result<MeasureSummary> {
    let mut cfg = cfg.clone();
    apply(&mut cfg, ov);
    prepare(out)?;
    let hash = record(out, "measure", &cfg, &[])?;
    let m = &cfg.measure;
    let kmax_grid = m.k_grid.iter().cloned().fold(0.0, f64::max);
    let mut prm = DiophantineParams::new(kmax_grid, m.omega_box.clone(), m.levels);
    prm.eta = cfg.solver.eta;
    prm.q_cap = m.q_cap;
    if let Some(nu) = cfg.frequency.nu {
        prm.nu = nu;
    }
    let history = vec![nlw_clusters(&cfg.model, m.kmax); m.levels + 1];
    let rows = measure_estimate(&prm, &history, &m.k_grid, m.samples, cfg.seed)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    fs::write(out.join("measure.csv"), &buf)?;
    let slope = measure_slope(&rows);
    write_json(
        &out.join("measure_summary.json"),
        &json!({ "slope": slope.map(fmt_f), "nu": prm.nu, "samples": m.samples, "input_hash": hash }),
    )?;
    Ok(MeasureSummary { slope, rows: rows.len() })
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

fn check(name: &str, value: f64, bound: f64, detail: String) -> Check {
    Check { name: name.into(), pass: value <= bound, value, bound, detail }
}

fn flat(s: &CoupledSolution) -> Vec<C64> {
    s.tan.phi.iter().chain(&s.tan.j).chain(&s.z).copied().collect()
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn cmd_verify(cfg: &RunConfig, solution: &Path, out: &Path, ov: &Overrides) -> Result<Vec<Check>> {
    let mut cfg = cfg.clone();
    apply(&mut cfg, ov);
    let bytes = fs::read(solution).map_err(|e| Error::Artifact(format!("{}: {e}", solution.display())))?;
    prepare(out)?;
    record(out, "verify", &cfg, &[&bytes])?;
    let sol = TorusSolution::from_json(&serde_json::from_slice(&bytes)?)?;
    let model = sol.model()?;
    let v = &cfg.verify;
    let mut checks = Vec::new();

    let fp = residual_fp(&model, &sol.tan, &sol.z);
    checks.push(check("residual_fp", fp, v.tol_fp, "weighted norm of K0 z - w0(z)".into()));
    let (tf, zero) = tangential_residual(&model, &sol.tan, &sol.z);
    let tr = tf.max(zero);
    checks.push(check("tangential_residual", tr, v.tol_fp, "tangential equations and zero mode".into()));

    // pde residual against C a^3 over the amplitude sweep
    let centres = [0.37, 1.9, 3.3, 5.8, 8.1];
    let mut sups = Vec::new();
    let mut worst_ratio = 0.0f64;
    let mut detail = String::new();
    let mut sweep = cfg.clone();
    sweep.model = sol.cfg.clone();
    sweep.solver.q_max = sol.q_max;
    sweep.solver.kmax = sol.kmax;
    sweep.frequency.omega = None;
    for &a in &v.amplitudes {
        let amps = vec![a; sol.cfg.d()];
        let m = build_model(&sweep, &amps)?;
        let s = solve_model(&sweep, &m)?;
        let r = torus_pde_residual(&m, &s.tan, &s.z, v.nx, &centres, v.pde_dt)?;
        worst_ratio = worst_ratio.max(r.sup / a.powi(3));
        detail.push_str(&format!("a={} sup={} fd={}{}; ", fmt_f(a), fmt_f(r.sup), fmt_f(r.fd_error), if r.flagged { " (stencil-limited)" } else { "" }));
        sups.push(r.sup);
    }
    if sups.iter().all(|&s| s > 0.0) && sups.len() >= 2 {
        detail.push_str(&format!("slope={}", fmt_f(loglog_slope(&v.amplitudes, &sups))));
    }
    checks.push(check("pde_residual_sweep", worst_ratio, v.pde_c, detail));

    let fs = frequency_shift(&model, &sol.tan);
    let scale = fs.measured.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    checks.push(check(
        "frequency_shift",
        fs.remainder,
        v.freq_tol * scale,
        format!("measured {:?} predicted {:?}", fs.measured, fs.predicted),
    ));

    if v.lindstedt_order > 0 {
        let ls = lindstedt_expand(v.lindstedt_order, &model)?;
        let h = v.lindstedt_h;
        let prm = coupled_params(&cfg);
        let run = |l: f64| coupled_solve(&model.with_lambda(l), &prm).map(|s| flat(&s));
        let (a, b, c, d) = (run(-2.0 * h)?, run(-h)?, run(h)?, run(2.0 * h)?);
        let fd = fd_taylor(&a, &b, &c, &d, h);
        let mut worst = 0.0f64;
        let mut detail = String::new();
        for k in 1..=v.lindstedt_order {
            let l = ls.flat(k);
            let diff: Vec<C64> = fd[k - 1].iter().zip(&l).map(|(x, y)| x - y).collect();
            let rel = norm(&diff) / norm(&l).max(1e-300);
            let rel = if norm(&l) == 0.0 { norm(&diff) } else { rel };
            detail.push_str(&format!("order {k}: {}; ", fmt_f(rel)));
            worst = worst.max(rel);
        }
        checks.push(check("lindstedt_match", worst, v.lindstedt_tol, detail));
    }

    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    write_json(
        &out.join("verify_report.json"),
        &json!({ "solution": solution.display().to_string(), "pass": failed.is_empty(), "checks": checks }),
    )?;
    if !failed.is_empty() {
        return Err(Error::Invariant(format!("verify checks failed: {}", failed.join(", "))));
    }
    Ok(checks)
}

pub fn cmd_normal_form(cfg: &RunConfig, out: &Path, ov: &Overrides) -> Result<Value> {
    let mut cfg = cfg.clone();
    apply(&mut cfg, ov);
    prepare(out)?;
    record(out, "normal-form", &cfg, &[])?;
    let nf = normal_form(&cfg.model)?;
    let quartic = crate::birkhoff::quartic_hd(&cfg.model);
    let transformed = nf.transformed_quartic(&quartic);
    let mut nonresonant = 0.0f64;
    let mut resonant = Vec::new();
    for t in &transformed {
        if t.alpha == t.beta {
            resonant.push(json!({ "alpha": t.alpha, "beta": t.beta, "re": t.coef.re, "im": t.coef.im }));
        } else {
            nonresonant = nonresonant.max(t.coef.norm());
        }
    }
    let amps = &cfg.frequency.amplitudes;
    let z: Vec<C64> = amps.iter().enumerate().map(|(i, &a)| C64::from_polar(a, 0.7 * (i + 1) as f64)).collect();
    let report = json!({
        "mu": nf.mu,
        "gbar": nf.gbar,
        "min_divisor": nf.min_divisor,
        "divisor_ratio": nf.divisor_ratio,
        "nonresonant_max": nonresonant,
        "resonant": resonant,
        "symplectic_defect": nf.symplectic_defect(&z),
        "remainder_estimate": nf.remainder_estimate(&cfg.model, amps, 16, cfg.seed),
    });
    write_json(&out.join("normal_form.json"), &report)?;
    Ok(report)
}

/// Output directory from the flag, else from `output.dir`.
pub fn resolve_out(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.out.clone()).ok_or_else(|| Error::Config("no output directory: pass --out or set output.dir".into()))
}
