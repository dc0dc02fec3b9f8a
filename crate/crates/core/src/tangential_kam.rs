//! Tangential equation [[0, D], [-D, g]] (Phi, J) = -V(Phi, J, Z) with D = omega.d_phi,
//! and the alternating fixed point between it and the normal equation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mode_space::{dense_weighted_norm, TangentialMap, Truncation, C64};
use crate::nlw_model::RescaledNlw;
use crate::rg_core::{rg_solve, NlwNormal, RgOutcome, RgParams};

#[derive(Clone, Debug)]
pub struct TangentialParams {
    pub tol: f64,
    pub max_iter: usize,
    pub min_divisor: f64,
}

impl Default for TangentialParams {
    fn default() -> Self {
        Self { tol: 1e-13, max_iter: 30, min_divisor: 1e-12 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TangentialReport {
    pub iterations: usize,
    pub residual: f64,
    /// |V_phi(0)|: the dropped average of the angle equation
    pub zero_mode_residual: f64,
    pub history: Vec<f64>,
}

fn c0() -> C64 {
    C64::new(0.0, 0.0)
}

/// Solves the linear per-mode problem [[0, D], [-D, g]] (Phi, J) = -(vphi, vi) with the
/// gauge Phi(0) = 0; layouts idx * d + i.
pub fn solve_linear_tangential(
    t: &Truncation,
    omega: &[f64],
    g: &[Vec<f64>],
    vphi: &[C64],
    vi: &[C64],
    min_divisor: f64,
) -> Result<TangentialMap> {
    let d = t.d;
    let mut out = TangentialMap::zeros(t);
    for idx in 0..t.n_modes() {
        let wq = t.omega_dot(omega, idx);
        let gm = DMatrix::from_fn(d, d, |a, b| C64::new(g[a][b], 0.0));
        if idx == t.zero_index() {
            let rhs = DVector::from_fn(d, |a, _| -vi[idx * d + a]);
            let j = gm.lu().solve(&rhs).ok_or_else(|| Error::Config("twist matrix is singular".into()))?;
            for a in 0..d {
                out.j[idx * d + a] = j[a];
            }
            continue;
        }
        if wq.abs() < min_divisor {
            return Err(Error::SmallDivisor(format!("omega.q = {wq:e} at q = {:?}", t.q_of(idx))));
        }
        let dq = C64::new(0.0, -wq);
        for a in 0..d {
            // D J = -vphi
            out.j[idx * d + a] = -vphi[idx * d + a] / dq;
        }
        for a in 0..d {
            // -D Phi + g J = -vi
            let gj: C64 = (0..d).map(|b| out.j[idx * d + b] * g[a][b]).sum();
            out.phi[idx * d + a] = (vi[idx * d + a] + gj) / dq;
        }
    }
    Ok(out)
}

/// F(Y) = L Y + V(Y, Z) in the row layout idx * 2d + (a | d + a); the q = 0 angle rows
/// are replaced by the gauge condition Phi(0) = 0.
fn tangential_residual(model: &RescaledNlw, tan: &TangentialMap, z: &[C64]) -> (Vec<C64>, f64) {
    let t = &model.trunc;
    let d = t.d;
    let g = model.twist();
    let v = model.eval_c(tan, z);
    let mut f = vec![c0(); t.n_modes() * 2 * d];
    let mut zero_res: f64 = 0.0;
    for idx in 0..t.n_modes() {
        let wq = t.omega_dot(&model.omega, idx);
        let dq = C64::new(0.0, -wq);
        for a in 0..d {
            let r = idx * 2 * d;
            if idx == t.zero_index() {
                f[r + a] = tan.phi[idx * d + a];
                zero_res = zero_res.max(v.vphi[idx * d + a].norm());
            } else {
                f[r + a] = dq * tan.j[idx * d + a] + v.vphi[idx * d + a];
            }
            let gj: C64 = (0..d).map(|b| tan.j[idx * d + b] * g[a][b]).sum();
            f[r + d + a] = -dq * tan.phi[idx * d + a] + gj + v.vi[idx * d + a];
        }
    }
    (f, zero_res)
}

fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Newton iteration for (Phi, J) at fixed normal data z, starting from `init`.
pub fn solve_tangential(model: &RescaledNlw, z: &[C64], init: Option<&TangentialMap>, prm: &TangentialParams) -> Result<(TangentialMap, TangentialReport)> {
    let t = &model.trunc;
    let d = t.d;
    let nm = t.n_modes();
    let nv = 2 * d;
    let g = model.twist();
    for idx in 0..nm {
        let wq = t.omega_dot(&model.omega, idx);
        if idx != t.zero_index() && wq.abs() < prm.min_divisor {
            return Err(Error::SmallDivisor(format!("omega.q = {wq:e} at q = {:?}", t.q_of(idx))));
        }
    }
    let mut tan = init.cloned().unwrap_or_else(|| TangentialMap::zeros(t));
    let (mut f, mut zero_res) = tangential_residual(model, &tan, z);
    let scale0 = {
        let v = model.eval_c(&TangentialMap::zeros(t), z);
        vec_norm(&v.vphi).max(vec_norm(&v.vi))
    };
    let mut history = vec![vec_norm(&f)];
    let mut it = 0;
    while vec_norm(&f) > prm.tol * scale0 && vec_norm(&f) > 0.0 {
        if it >= prm.max_iter {
            return Err(Error::NoConvergence(format!("tangential Newton stalled at residual {:e}", vec_norm(&f))));
        }
        it += 1;
        let (kern, big) = model.tangential_derivative(&tan, z);
        let n = nm * nv;
        let mut jac = DMatrix::<C64>::zeros(n, n);
        for idx in 0..nm {
            let q = t.q_of(idx);
            let wq = t.omega_dot(&model.omega, idx);
            let dq = C64::new(0.0, -wq);
            let zero = idx == t.zero_index();
            for a in 0..d {
                let rp = idx * nv + a;
                let ri = idx * nv + d + a;
                if zero {
                    jac[(rp, idx * nv + a)] = C64::new(1.0, 0.0);
                } else {
                    jac[(rp, idx * nv + d + a)] += dq;
                }
                jac[(ri, idx * nv + a)] -= dq;
                for b in 0..d {
                    jac[(ri, idx * nv + d + b)] += C64::new(g[a][b], 0.0);
                }
            }
            for jdx in 0..nm {
                let qp = t.q_of(jdx);
                let diff: Vec<i32> = q.iter().zip(&qp).map(|(a, b)| a - b).collect();
                let kd = big.index_of(&diff).unwrap();
                for r in 0..nv {
                    if zero && r < d {
                        continue;
                    }
                    for c in 0..nv {
                        jac[(idx * nv + r, jdx * nv + c)] += kern[kd * nv * nv + r * nv + c];
                    }
                }
            }
        }
        let rhs = DVector::from_iterator(n, f.iter().map(|v| -v));
        let step = jac.lu().solve(&rhs).ok_or_else(|| Error::NoConvergence("singular tangential Jacobian".into()))?;
        for idx in 0..nm {
            for a in 0..d {
                tan.phi[idx * d + a] += step[idx * nv + a];
                tan.j[idx * d + a] += step[idx * nv + d + a];
            }
        }
        tan.realify();
        let prev = vec_norm(&f);
        (f, zero_res) = tangential_residual(model, &tan, z);
        history.push(vec_norm(&f));
        if vec_norm(&f) >= prev && vec_norm(&f) <= 1e3 * prm.tol * scale0 {
            break;
        }
    }
    let residual = vec_norm(&f);
    Ok((tan, TangentialReport { iterations: it, residual, zero_mode_residual: zero_res, history }))
}

#[derive(Clone, Debug)]
pub struct CoupledParams {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub rg: RgParams,
    pub tangential: TangentialParams,
}

impl Default for CoupledParams {
    fn default() -> Self {
        Self { tol: 1e-14, max_iter: 40, damping: 1.0, rg: RgParams::default(), tangential: TangentialParams::default() }
    }
}

#[derive(Clone, Debug)]
pub struct CoupledSolution {
    pub tan: TangentialMap,
    pub z: Vec<C64>,
    pub rg: RgOutcome,
    pub iterations: usize,
    pub changes: Vec<f64>,
    pub rates: Vec<f64>,
    pub tangential_residual: f64,
    pub zero_mode_residual: f64,
    pub normal_residual: f64,
}

/// Alternates Y <- Y_s(Z), Z <- Z_s(Y) until the joint change is below tol.
pub fn coupled_solve(model: &RescaledNlw, prm: &CoupledParams) -> Result<CoupledSolution> {
    let t = &model.trunc;
    let nz = t.n_modes() * t.block_dim();
    let mut z = vec![c0(); nz];
    let mut tan = TangentialMap::zeros(t);
    let mut changes: Vec<f64> = Vec::new();
    let mut rates = Vec::new();
    let mut rg_out;
    let mut it = 0;
    loop {
        it += 1;
        let (tan_new, _) = solve_tangential(model, &z, Some(&tan), &prm.tangential)?;
        rg_out = rg_solve(&NlwNormal { model, tan: &tan_new }, &prm.rg)?;
        let mut z_new = rg_out.z.clone();
        if prm.damping != 1.0 {
            for (a, b) in z_new.iter_mut().zip(&z) {
                *a = *b + (*a - *b) * prm.damping;
            }
        }
        let dz = dense_weighted_norm(t, &z_new.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>(), prm.rg.s);
        let dy: f64 = tan_new.phi.iter().zip(&tan.phi).chain(tan_new.j.iter().zip(&tan.j)).map(|(a, b)| (a - b).norm()).sum();
        let size = dense_weighted_norm(t, &z_new, prm.rg.s) + tan_new.norm();
        let change = dz + dy;
        if let Some(&last) = changes.last() {
            if last > 0.0 {
                rates.push(change / last);
            }
        }
        changes.push(change);
        z = z_new;
        tan = tan_new;
        if change <= prm.tol * size || change == 0.0 {
            break;
        }
        if changes.len() >= 3 && change > changes[changes.len() - 2] && change > changes[0] {
            return Err(Error::NoConvergence(format!("coupled iteration diverges (change {change:e}); reduce lambda")));
        }
        if it >= prm.max_iter {
            return Err(Error::NoConvergence(format!("coupled iteration: change {change:e} after {it} iterations")));
        }
    }
    let (f, zero_res) = tangential_residual(model, &tan, &z);
    let normal_residual = rg_out.diagnostics.last().map(|d| d.residual).unwrap_or(0.0);
    Ok(CoupledSolution {
        tan,
        z,
        rg: rg_out,
        iterations: it,
        changes,
        rates,
        tangential_residual: vec_norm(&f),
        zero_mode_residual: zero_res,
        normal_residual,
    })
}
