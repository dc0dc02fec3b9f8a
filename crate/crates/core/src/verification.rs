//! Independent checks of a computed torus: fixed-point residuals, the Lindstedt series,
//! the reconstructed field u(x, t), its PDE residual and direct integration of the mode ODEs.
//!
//! Nothing here calls the renormalization iteration.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rustfft::FftPlanner;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::jet::{MonoTable, Tps};
use crate::mode_space::{dense_weighted_norm, TangentialMap, Truncation, C64};
use crate::nlw_model::{basis_value, gradient_g, hamiltonian, space_modes, NlwConfig, RescaledNlw};
use crate::tangential_kam::CoupledSolution;

fn c0() -> C64 {
    C64::new(0.0, 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualRecord {
    pub fp: f64,
    pub tangential: f64,
    pub zero_mode: f64,
}

/// Everything needed to rebuild and check one torus.
#[derive(Clone, Debug)]
pub struct TorusSolution {
    pub cfg: NlwConfig,
    pub q_max: i32,
    pub kmax: usize,
    pub amps: Vec<f64>,
    pub delta: f64,
    pub lambda: f64,
    pub omega: Vec<f64>,
    pub tan: TangentialMap,
    pub z: Vec<C64>,
    /// renormalized normal frequencies per block k (eigenvalues of the final mu~)
    pub mu_normal: Vec<Vec<f64>>,
    pub residual: ResidualRecord,
}

fn cvec_json(v: &[C64]) -> serde_json::Value {
    json!({ "re": v.iter().map(|c| c.re).collect::<Vec<_>>(), "im": v.iter().map(|c| c.im).collect::<Vec<_>>() })
}

fn cvec_from(v: &serde_json::Value, what: &str) -> Result<Vec<C64>> {
    let re: Vec<f64> = serde_json::from_value(v["re"].clone()).map_err(|_| Error::Artifact(format!("{what}: re")))?;
    let im: Vec<f64> = serde_json::from_value(v["im"].clone()).map_err(|_| Error::Artifact(format!("{what}: im")))?;
    if re.len() != im.len() {
        return Err(Error::Artifact(format!("{what}: re/im lengths differ")));
    }
    Ok(re.into_iter().zip(im).map(|(a, b)| C64::new(a, b)).collect())
}

impl TorusSolution {
    pub fn from_coupled(model: &RescaledNlw, sol: &CoupledSolution) -> Self {
        let mu_normal = sol
            .rg
            .mu2
            .iter()
            .map(|m| {
                if m.nrows() == 0 {
                    return Vec::new();
                }
                let mut e: Vec<f64> = m.clone().symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
                e.sort_by(f64::total_cmp);
                e
            })
            .collect();
        let mut out = Self {
            cfg: model.cfg.clone(),
            q_max: model.trunc.q_max,
            kmax: model.trunc.kmax,
            amps: model.amps.clone(),
            delta: model.delta,
            lambda: model.lambda,
            omega: model.omega.clone(),
            tan: sol.tan.clone(),
            z: sol.z.clone(),
            mu_normal,
            residual: ResidualRecord { fp: 0.0, tangential: 0.0, zero_mode: 0.0 },
        };
        out.residual = residuals(model, &out.tan, &out.z);
        out
    }

    /// The zero torus of the unperturbed problem.
    pub fn zero(model: &RescaledNlw) -> Self {
        let t = &model.trunc;
        let mu_normal = model.mu_normal.iter().enumerate().map(|(k, &m)| vec![m; t.mults[k]]).collect();
        let tan = TangentialMap::zeros(t);
        let z = vec![c0(); t.n_modes() * t.block_dim()];
        let residual = residuals(model, &tan, &z);
        Self {
            cfg: model.cfg.clone(),
            q_max: t.q_max,
            kmax: t.kmax,
            amps: model.amps.clone(),
            delta: model.delta,
            lambda: model.lambda,
            omega: model.omega.clone(),
            tan,
            z,
            mu_normal,
            residual,
        }
    }

    pub fn model(&self) -> Result<RescaledNlw> {
        Ok(RescaledNlw::new(&self.cfg, self.q_max, self.kmax, &self.amps, Some(self.delta), Some(self.lambda))?.with_omega(&self.omega))
    }

    pub fn recompute(&self) -> Result<ResidualRecord> {
        Ok(residuals(&self.model()?, &self.tan, &self.z))
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "config": self.cfg,
            "q_max": self.q_max,
            "kmax": self.kmax,
            "amplitudes": self.amps,
            "delta": self.delta,
            "lambda": self.lambda,
            "omega": self.omega,
            "tangential": self.tan.to_json(),
            "z": cvec_json(&self.z),
            "mu_normal": self.mu_normal,
            "residual": self.residual,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let get = |k: &str| -> Result<serde_json::Value> {
            v.get(k).cloned().ok_or_else(|| Error::Artifact(format!("solution: missing {k}")))
        };
        let bad = |k: &str| Error::Artifact(format!("solution: bad {k}"));
        let cfg: NlwConfig = serde_json::from_value(get("config")?).map_err(|_| bad("config"))?;
        let q_max: i32 = serde_json::from_value(get("q_max")?).map_err(|_| bad("q_max"))?;
        let kmax: usize = serde_json::from_value(get("kmax")?).map_err(|_| bad("kmax"))?;
        let trunc = crate::nlw_model::truncation(&cfg, q_max, kmax)?;
        let z = cvec_from(&get("z")?, "z")?;
        if z.len() != trunc.n_modes() * trunc.block_dim() {
            return Err(bad("z length"));
        }
        let r = get("residual")?;
        let num = |k: &str| r[k].as_f64().ok_or_else(|| bad(k));
        Ok(Self {
            tan: TangentialMap::from_json(&trunc, &get("tangential")?)?,
            cfg,
            q_max,
            kmax,
            amps: serde_json::from_value(get("amplitudes")?).map_err(|_| bad("amplitudes"))?,
            delta: get("delta")?.as_f64().ok_or_else(|| bad("delta"))?,
            lambda: get("lambda")?.as_f64().ok_or_else(|| bad("lambda"))?,
            omega: serde_json::from_value(get("omega")?).map_err(|_| bad("omega"))?,
            z,
            mu_normal: serde_json::from_value(get("mu_normal")?).map_err(|_| bad("mu_normal"))?,
            residual: ResidualRecord { fp: num("fp")?, tangential: num("tangential")?, zero_mode: num("zero_mode")? },
        })
    }
}

fn residuals(model: &RescaledNlw, tan: &TangentialMap, z: &[C64]) -> ResidualRecord {
    let (tangential, zero_mode) = tangential_residual(model, tan, z);
    ResidualRecord { fp: residual_fp(model, tan, z), tangential, zero_mode }
}

fn k0_apply(t: &Truncation, omega: &[f64], mu: &[f64], z: &[C64]) -> Vec<C64> {
    let nd = t.block_dim();
    let mut out = vec![c0(); z.len()];
    for idx in 0..t.n_modes() {
        let wq = t.omega_dot(omega, idx);
        for k in t.normal_modes() {
            let off = t.block_offset(k);
            for i in 0..t.mults[k] {
                let c = idx * nd + off + i;
                out[c] = z[c] * (wq * wq - mu[k] * mu[k]);
            }
        }
    }
    out
}

/// Weighted norm of K0 z - w0(z).
pub fn residual_fp(model: &RescaledNlw, tan: &TangentialMap, z: &[C64]) -> f64 {
    let t = &model.trunc;
    let kz = k0_apply(t, &model.omega, &model.mu_normal, z);
    let w = model.w0(tan, z);
    let r: Vec<C64> = kz.iter().zip(&w).map(|(a, b)| a - b).collect();
    dense_weighted_norm(t, &r, 2.0)
}

/// Euclidean norm of the tangential equations (D J + V_phi, -D Phi + g J + V_I, gauge
/// Phi(0) = 0) and the dropped average |V_phi(0)|.
pub fn tangential_residual(model: &RescaledNlw, tan: &TangentialMap, z: &[C64]) -> (f64, f64) {
    let t = &model.trunc;
    let d = t.d;
    let g = model.twist();
    let out = model.eval_c(tan, z);
    let z0 = t.zero_index();
    let mut acc = 0.0;
    let mut zero = 0.0;
    for idx in 0..t.n_modes() {
        let dq = C64::new(0.0, -t.omega_dot(&model.omega, idx));
        for a in 0..d {
            let r = idx * d + a;
            let gj: C64 = (0..d).map(|b| tan.j[idx * d + b] * g[a][b]).sum();
            let ang = if idx == z0 { tan.phi[r] } else { dq * tan.j[r] + out.vphi[r] };
            if idx == z0 {
                zero += out.vphi[r].norm_sqr();
            }
            let act = -dq * tan.phi[r] + gj + out.vi[r];
            acc += ang.norm_sqr() + act.norm_sqr();
        }
    }
    (acc.sqrt(), zero.sqrt())
}

/// lambda-Taylor coefficients (index = order, 0..=p) of the torus.
#[derive(Clone, Debug)]
pub struct LindstedtSeries {
    pub phi: Vec<Vec<C64>>,
    pub j: Vec<Vec<C64>>,
    pub z: Vec<Vec<C64>>,
}

impl LindstedtSeries {
    /// (phi, j, z) of order k concatenated.
    pub fn flat(&self, k: usize) -> Vec<C64> {
        self.phi[k].iter().chain(&self.j[k]).chain(&self.z[k]).copied().collect()
    }
}

fn order_index(table: &MonoTable, k: usize) -> usize {
    table.index_of(&vec![0; k]).expect("order within table")
}

/// Term-by-term solution of the tangential and normal equations in powers of lambda,
/// with the same gauge as the solver (Phi(0) = 0, g J(0) = -V_I(0)).
pub fn lindstedt_expand(p: usize, model: &RescaledNlw) -> Result<LindstedtSeries> {
    if p == 0 || p > 4 {
        return Err(Error::JetOrder(p));
    }
    let t = &model.trunc;
    let d = t.d;
    let nd = t.block_dim();
    let unit = model.with_lambda(1.0);
    let table = MonoTable::new(1, p);
    let g = model.twist();
    let gm = DMatrix::from_fn(d, d, |a, b| g[a][b]);
    let ginv = gm.clone().try_inverse().ok_or_else(|| Error::Config("twist matrix is singular".into()))?;
    let mut phi = vec![Tps::zero(&table); t.n_modes() * d];
    let mut jj = vec![Tps::zero(&table); t.n_modes() * d];
    let mut z = vec![Tps::zero(&table); t.n_modes() * nd];
    let z0 = t.zero_index();
    for k in 1..=p {
        // lambda V(X) at order k is V(X) at order k - 1
        let out = unit.eval(&phi, &jj, &z);
        let src = order_index(&table, k - 1);
        let dst = order_index(&table, k);
        for idx in 0..t.n_modes() {
            let wq = t.omega_dot(&model.omega, idx);
            if idx == z0 {
                for a in 0..d {
                    let v: C64 = (0..d).map(|b| -out.vi[idx * d + b].c[src] * ginv[(a, b)]).sum();
                    jj[idx * d + a].c[dst] = v;
                }
            } else {
                if wq.abs() < 1e-13 {
                    return Err(Error::SmallDivisor(format!("omega.q vanishes at q = {:?}", t.q_of(idx))));
                }
                let dq = C64::new(0.0, -wq);
                for a in 0..d {
                    jj[idx * d + a].c[dst] = -out.vphi[idx * d + a].c[src] / dq;
                }
                for a in 0..d {
                    let gj: C64 = (0..d).map(|b| jj[idx * d + b].c[dst] * g[a][b]).sum();
                    phi[idx * d + a].c[dst] = (out.vi[idx * d + a].c[src] + gj) / dq;
                }
            }
            for kk in t.normal_modes() {
                let den = wq * wq - model.mu_normal[kk] * model.mu_normal[kk];
                let off = t.block_offset(kk);
                for i in 0..t.mults[kk] {
                    let c = idx * nd + off + i;
                    let rhs = out.w[c].c[src];
                    if den.abs() < 1e-13 {
                        if rhs.norm() == 0.0 {
                            continue;
                        }
                        return Err(Error::SmallDivisor(format!("K0 vanishes at q = {:?}, k = {kk}", t.q_of(idx))));
                    }
                    z[c].c[dst] = rhs / den;
                }
            }
        }
    }
    let take = |v: &[Tps]| -> Vec<Vec<C64>> { (0..=p).map(|k| v.iter().map(|x| x.c[order_index(&table, k)]).collect()).collect() };
    Ok(LindstedtSeries { phi: take(&phi), j: take(&jj), z: take(&z) })
}

/// Taylor coefficients 1..=3 at 0 of a map with f(0) = 0 from its values at -2h, -h, h, 2h.
pub fn fd_taylor(fm2: &[C64], fm1: &[C64], fp1: &[C64], fp2: &[C64], h: f64) -> [Vec<C64>; 3] {
    let n = fm2.len();
    let c1 = (0..n).map(|i| (8.0 * (fp1[i] - fm1[i]) - (fp2[i] - fm2[i])) / (12.0 * h)).collect();
    let c2 = (0..n).map(|i| (16.0 * (fp1[i] + fm1[i]) - (fp2[i] + fm2[i])) / (24.0 * h * h)).collect();
    let c3 = (0..n).map(|i| (fp2[i] - fm2[i] - 2.0 * (fp1[i] - fm1[i])) / (12.0 * h * h * h)).collect();
    [c1, c2, c3]
}

fn fourier_at(t: &Truncation, v: &[C64], lanes: usize, lane: usize, psi: &[f64]) -> C64 {
    let mut acc = c0();
    for idx in 0..t.n_modes() {
        let ph: f64 = t.q_of(idx).iter().zip(psi).map(|(&q, p)| q as f64 * p).sum();
        acc += C64::from_polar(1.0, -ph) * v[idx * lanes + lane];
    }
    acc
}

/// Physical mode coordinates q_n, n = -N..=N, at the torus point psi.
pub fn physical_modes(model: &RescaledNlw, tan: &TangentialMap, z: &[C64], psi: &[f64]) -> Vec<f64> {
    let t = &model.trunc;
    let d = t.d;
    let nd = t.block_dim();
    let n = model.cfg.n_space as i32;
    let mut q = vec![0.0; (2 * n + 1) as usize];
    let d4 = model.delta.powi(4);
    let mut zz = Vec::with_capacity(d);
    let mut zb = Vec::with_capacity(d);
    for a in 0..d {
        let theta = psi[a] + fourier_at(t, &tan.phi, d, a, psi).re;
        let rho = (model.amps[a] * model.amps[a] + d4 * fourier_at(t, &tan.j, d, a, psi).re).sqrt();
        zz.push(C64::from_polar(rho, -theta));
        zb.push(C64::from_polar(rho, theta));
    }
    let (zeta, zetab) = model.nf.transform(&zz, &zb);
    for (a, &m) in model.cfg.tangential_set.iter().enumerate() {
        q[(m + n) as usize] = (zeta[a] + zetab[a]).re / (2.0 * model.nf.mu[a]).sqrt();
    }
    for (c, &m) in model.coord_mode.iter().enumerate() {
        q[(m + n) as usize] = model.delta * model.delta * fourier_at(t, z, nd, c, psi).re;
    }
    q
}

/// (q, dq/dt) along the orbit psi = omega t; the velocity by a sixth-order central difference.
pub fn physical_state(model: &RescaledNlw, tan: &TangentialMap, z: &[C64], time: f64) -> (Vec<f64>, Vec<f64>) {
    let at = |s: f64| physical_modes(model, tan, z, &model.omega.iter().map(|w| w * s).collect::<Vec<_>>());
    let h = 1e-3;
    let q = at(time);
    let (p1, m1, p2, m2, p3, m3) = (at(time + h), at(time - h), at(time + 2.0 * h), at(time - 2.0 * h), at(time + 3.0 * h), at(time - 3.0 * h));
    let p = (0..q.len()).map(|i| (45.0 * (p1[i] - m1[i]) - 9.0 * (p2[i] - m2[i]) + (p3[i] - m3[i])) / (60.0 * h)).collect();
    (q, p)
}

/// u(x, t) = sum_n q_n(omega t) psi_n(x).
pub fn reconstruct_u(model: &RescaledNlw, tan: &TangentialMap, z: &[C64], xs: &[f64], time: f64) -> Vec<f64> {
    let psi: Vec<f64> = model.omega.iter().map(|w| w * time).collect();
    let q = physical_modes(model, tan, z, &psi);
    field(&q, model.cfg.n_space, xs)
}

fn field(q: &[f64], n_space: usize, xs: &[f64]) -> Vec<f64> {
    let modes = space_modes(n_space);
    xs.iter().map(|&x| q.iter().zip(&modes).map(|(v, &m)| v * basis_value(m, x)).sum()).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PdeResidual {
    pub sup: f64,
    /// Richardson estimate of the time-stencil error
    pub fd_error: f64,
    /// sup |u| over the data
    pub signal: f64,
    pub flagged: bool,
}

fn second_dx(u: &[f64]) -> Vec<f64> {
    let m = u.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<C64> = u.iter().map(|&v| C64::new(v, 0.0)).collect();
    planner.plan_fft_forward(m).process(&mut buf);
    for (i, b) in buf.iter_mut().enumerate() {
        let k = if i <= m / 2 { i as f64 } else { i as f64 - m as f64 };
        let k = if m % 2 == 0 && i == m / 2 { 0.0 } else { k };
        *b *= -k * k / m as f64;
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

/// Sup of u_tt - u_xx + m u + f(u) at the centre of every time window. Each window holds 9
/// equally spaced samples u[j][l] (step dt) on a uniform periodic x grid; u_tt uses a
/// fourth-order stencil, compared against the same stencil at step 2 dt for the error
/// estimate.
pub fn pde_residual(windows: &[Vec<Vec<f64>>], dt: f64, m: f64, f_coeffs: &[f64]) -> Result<PdeResidual> {
    let mut sup = 0.0f64;
    let mut fd = 0.0f64;
    let mut signal = 0.0f64;
    let f = |u: f64| -> f64 {
        let mut p = u * u * u;
        let mut acc = 0.0;
        for c in f_coeffs {
            acc += c * p;
            p *= u;
        }
        acc
    };
    for w in windows {
        if w.len() != 9 {
            return Err(Error::Mismatch("time window must hold 9 samples".into()));
        }
        let u = &w[4];
        let uxx = second_dx(u);
        for l in 0..u.len() {
            let s = |j: usize| w[j][l];
            let utt = (-s(6) + 16.0 * s(5) - 30.0 * s(4) + 16.0 * s(3) - s(2)) / (12.0 * dt * dt);
            let utt2 = (-s(8) + 16.0 * s(6) - 30.0 * s(4) + 16.0 * s(2) - s(0)) / (48.0 * dt * dt);
            let r = utt - uxx[l] + m * u[l] + f(u[l]);
            sup = sup.max(r.abs());
            fd = fd.max((utt - utt2).abs() / 15.0);
            signal = signal.max(u[l].abs());
        }
    }
    Ok(PdeResidual { sup, fd_error: fd, signal, flagged: fd > 0.1 * sup })
}

/// pde_residual of the reconstructed torus at times t0 in `centres`.
pub fn torus_pde_residual(model: &RescaledNlw, tan: &TangentialMap, z: &[C64], nx: usize, centres: &[f64], dt: f64) -> Result<PdeResidual> {
    let xs: Vec<f64> = (0..nx).map(|l| 2.0 * PI * l as f64 / nx as f64).collect();
    let windows: Vec<Vec<Vec<f64>>> =
        centres.iter().map(|&c| (0..9).map(|j| reconstruct_u(model, tan, z, &xs, c + (j as f64 - 4.0) * dt)).collect()).collect();
    pde_residual(&windows, dt, model.cfg.m, &model.cfg.f_coeffs)
}

/// Sup over a torus grid of M^d points and all modes of q_n'' + (n^2 + m) q_n + dG/dq_n, with
/// q_n'' = (omega . d_psi)^2 q_n taken spectrally. Free of any time stencil, so it shows the
/// truncation error of the torus itself.
pub fn torus_modal_residual(model: &RescaledNlw, tan: &TangentialMap, z: &[C64], m: usize) -> Result<f64> {
    let d = model.d();
    let npts = m.pow(d as u32);
    let coords = |mut j: usize| -> Vec<usize> {
        let mut c = vec![0; d];
        for v in c.iter_mut().rev() {
            *v = j % m;
            j /= m;
        }
        c
    };
    let qs: Vec<Vec<f64>> = (0..npts)
        .map(|j| physical_modes(model, tan, z, &coords(j).iter().map(|&c| 2.0 * PI * c as f64 / m as f64).collect::<Vec<_>>()))
        .collect();
    let modes = space_modes(model.cfg.n_space);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let along = |buf: &mut Vec<C64>, axis: usize, plan: &std::sync::Arc<dyn rustfft::Fft<f64>>| {
        let stride = m.pow((d - 1 - axis) as u32);
        let mut line = vec![c0(); m];
        for start in 0..npts {
            if (start / stride) % m != 0 {
                continue;
            }
            for (l, v) in line.iter_mut().enumerate() {
                *v = buf[start + l * stride];
            }
            plan.process(&mut line);
            for (l, v) in line.iter().enumerate() {
                buf[start + l * stride] = *v;
            }
        }
    };
    let mut worst = 0.0f64;
    let mut qtt = vec![vec![0.0; modes.len()]; npts];
    for i in 0..modes.len() {
        let mut buf: Vec<C64> = qs.iter().map(|q| C64::new(q[i], 0.0)).collect();
        for a in 0..d {
            along(&mut buf, a, &fwd);
        }
        for (j, b) in buf.iter_mut().enumerate() {
            let c = coords(j);
            if c.iter().any(|&k| m % 2 == 0 && k == m / 2) {
                *b = c0();
                continue;
            }
            let wk: f64 = c.iter().zip(&model.omega).map(|(&k, w)| w * if k <= m / 2 { k as f64 } else { k as f64 - m as f64 }).sum();
            *b *= -wk * wk / npts as f64;
        }
        for a in 0..d {
            along(&mut buf, a, &inv);
        }
        for j in 0..npts {
            qtt[j][i] = buf[j].re;
        }
    }
    for j in 0..npts {
        let g = gradient_g(&model.cfg, &qs[j], f64::INFINITY)?;
        for (i, &n) in modes.iter().enumerate() {
            let r = qtt[j][i] + ((n * n) as f64 + model.cfg.m) * qs[j][i] + g[i];
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    /// |fitted linear trend of E over [0, T]| / |E(0)|
    pub energy_drift: f64,
    pub max_energy_error: f64,
}

/// Drift-kick-drift integration of q'' = -mu_n^2 q_n - dG/dq_n over the modes -N..=N.
pub fn integrate_direct(cfg: &NlwConfig, q0: &[f64], p0: &[f64], t_end: f64, dt: f64, record_every: usize) -> Result<Trajectory> {
    let modes = space_modes(cfg.n_space);
    if q0.len() != modes.len() || p0.len() != modes.len() {
        return Err(Error::Mismatch(format!("expected {} mode coordinates", modes.len())));
    }
    let mu2: Vec<f64> = modes.iter().map(|&n| (n * n) as f64 + cfg.m).collect();
    let mu_max = mu2.iter().fold(0.0f64, |a, &b| a.max(b)).sqrt();
    if !(dt > 0.0) || dt * mu_max >= 2.0 {
        return Err(Error::Unstable(format!("dt * mu_max = {} must lie in (0, 2)", dt * mu_max)));
    }
    let steps = (t_end / dt).round() as usize;
    let every = record_every.max(1);
    let (mut q, mut p) = (q0.to_vec(), p0.to_vec());
    let e0 = hamiltonian(cfg, &q, &p);
    let mut tr = Trajectory { t: vec![0.0], q: vec![q.clone()], energy: vec![e0], energy_drift: 0.0, max_energy_error: 0.0 };
    for s in 1..=steps {
        for (a, b) in q.iter_mut().zip(&p) {
            *a += 0.5 * dt * b;
        }
        let g = gradient_g(cfg, &q, f64::INFINITY)?;
        for i in 0..q.len() {
            p[i] -= dt * (mu2[i] * q[i] + g[i]);
        }
        for (a, b) in q.iter_mut().zip(&p) {
            *a += 0.5 * dt * b;
        }
        if s % every == 0 || s == steps {
            tr.t.push(s as f64 * dt);
            tr.q.push(q.clone());
            tr.energy.push(hamiltonian(cfg, &q, &p));
        }
    }
    let scale = e0.abs().max(f64::MIN_POSITIVE);
    tr.max_energy_error = tr.energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / scale;
    let n = tr.t.len() as f64;
    let mt = tr.t.iter().sum::<f64>() / n;
    let me = tr.energy.iter().sum::<f64>() / n;
    let sxy: f64 = tr.t.iter().zip(&tr.energy).map(|(t, e)| (t - mt) * (e - me)).sum();
    let sxx: f64 = tr.t.iter().map(|t| (t - mt).powi(2)).sum();
    if sxx > 0.0 {
        tr.energy_drift = (sxy / sxx * t_end).abs() / scale;
    }
    Ok(tr)
}

/// Angular frequency from the upward zero crossings of a sampled signal.
pub fn zero_crossing_frequency(t: &[f64], x: &[f64]) -> Option<f64> {
    let mut cross = Vec::new();
    for i in 1..x.len() {
        if x[i - 1] < 0.0 && x[i] >= 0.0 {
            let s = x[i - 1] / (x[i - 1] - x[i]);
            cross.push(t[i - 1] + s * (t[i] - t[i - 1]));
        }
    }
    if cross.len() < 2 {
        return None;
    }
    Some(2.0 * PI * (cross.len() - 1) as f64 / (cross[cross.len() - 1] - cross[0]))
}

/// Max over recorded times of max_n |q_direct - q_torus(omega t)|.
pub fn orbit_deviation(model: &RescaledNlw, tan: &TangentialMap, z: &[C64], tr: &Trajectory) -> Vec<f64> {
    tr.t.iter()
        .zip(&tr.q)
        .map(|(&s, q)| {
            let psi: Vec<f64> = model.omega.iter().map(|w| w * s).collect();
            let qt = physical_modes(model, tan, z, &psi);
            q.iter().zip(&qt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FrequencyShift {
    /// first harmonic of zeta_i along the torus
    pub a_eff: Vec<f64>,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
    pub remainder: f64,
}

/// omega - mu against gbar a_eff^2, with a_eff the amplitude of the e^{-i psi_i} harmonic of
/// the physical complex coordinate zeta_i.
pub fn frequency_shift(model: &RescaledNlw, tan: &TangentialMap) -> FrequencyShift {
    let t = &model.trunc;
    let d = t.d;
    let m = 4 * t.q_max as usize + 8;
    let npts = m.pow(d as u32);
    let d4 = model.delta.powi(4);
    let mut harm = vec![c0(); d];
    for j in 0..npts {
        let mut r = j;
        let mut psi = vec![0.0; d];
        for p in psi.iter_mut().rev() {
            *p = 2.0 * PI * (r % m) as f64 / m as f64;
            r /= m;
        }
        let mut zz = Vec::with_capacity(d);
        let mut zb = Vec::with_capacity(d);
        for a in 0..d {
            let theta = psi[a] + fourier_at(t, &tan.phi, d, a, &psi).re;
            let rho = (model.amps[a] * model.amps[a] + d4 * fourier_at(t, &tan.j, d, a, &psi).re).sqrt();
            zz.push(C64::from_polar(rho, -theta));
            zb.push(C64::from_polar(rho, theta));
        }
        let (zeta, _) = model.nf.transform(&zz, &zb);
        for a in 0..d {
            harm[a] += zeta[a] * C64::from_polar(1.0, psi[a]) / npts as f64;
        }
    }
    let a_eff: Vec<f64> = harm.iter().map(|h| h.norm()).collect();
    let measured: Vec<f64> = (0..d).map(|a| model.omega[a] - model.nf.mu[a]).collect();
    let predicted: Vec<f64> = (0..d).map(|a| (0..d).map(|b| model.nf.gbar[a][b] * a_eff[b] * a_eff[b]).sum()).collect();
    let remainder = measured.iter().zip(&predicted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    FrequencyShift { a_eff, measured, predicted, remainder }
}
