//! Multiscale renormalization of the normal equation K0 z = w0(z).
//!
//! Levels run n = 0, 1, ...; level 0 carries the bare spectrum (one cluster per k,
//! P_0 = 1). Step n -> n+1 extracts A_n, re-clusters, solves R_{n+1} as a jet on the
//! active coordinates of level n+1 and composes w_{n+1} = w~_n(z + R_{n+1}(z)).

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jet::{JetFunctional, MonoTable, Scalar, Tps};
use crate::mode_space::{dense_weighted_norm, spectral_norm, DiagonalKernel, KernelTag, TangentialMap, Truncation, C64};
use crate::nlw_model::RescaledNlw;

/// Normal-equation data the iteration needs from a model.
pub trait NormalModel {
    fn trunc(&self) -> &Truncation;
    fn omega(&self) -> &[f64];
    /// normal frequency of block k
    fn mu(&self) -> &[f64];
    fn w0(&self, z: &[C64]) -> Vec<C64>;
    fn w0_tps(&self, z: &[Tps]) -> Vec<Tps>;
}

/// The NLW normal equation with the tangential data frozen.
pub struct NlwNormal<'a> {
    pub model: &'a RescaledNlw,
    pub tan: &'a TangentialMap,
}

impl NormalModel for NlwNormal<'_> {
    fn trunc(&self) -> &Truncation {
        &self.model.trunc
    }
    fn omega(&self) -> &[f64] {
        &self.model.omega
    }
    fn mu(&self) -> &[f64] {
        &self.model.mu_normal
    }
    fn w0(&self, z: &[C64]) -> Vec<C64> {
        self.model.w0(self.tan, z)
    }
    fn w0_tps(&self, z: &[Tps]) -> Vec<Tps> {
        self.model.w0_tps(self.tan, z)
    }
}

/// Synthetic normal equation: w0(z)_c = lambda (f_c + l_c z_c + b z_c^3), with l real and
/// q-independent. Used for exercising the iteration on prescribed spectra.
#[derive(Clone, Debug)]
pub struct ToyModel {
    pub trunc: Truncation,
    pub omega: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: f64,
    pub forcing: Vec<C64>,
    /// per block coordinate
    pub diag: Vec<f64>,
    pub cubic: f64,
}

impl ToyModel {
    fn nd(&self) -> usize {
        self.trunc.block_dim()
    }
}

impl NormalModel for ToyModel {
    fn trunc(&self) -> &Truncation {
        &self.trunc
    }
    fn omega(&self) -> &[f64] {
        &self.omega
    }
    fn mu(&self) -> &[f64] {
        &self.mu
    }
    fn w0(&self, z: &[C64]) -> Vec<C64> {
        let nd = self.nd();
        z.iter()
            .enumerate()
            .map(|(r, &v)| self.lambda * (self.forcing[r] + self.diag[r % nd] * v + self.cubic * v * v * v))
            .collect()
    }
    fn w0_tps(&self, z: &[Tps]) -> Vec<Tps> {
        let nd = self.nd();
        z.iter()
            .enumerate()
            .map(|(r, v)| {
                let cube = v.mul(v).mul(v).scale_re(self.cubic);
                v.scale_re(self.diag[r % nd]).add(&cube).add_c(self.forcing[r]).scale_re(self.lambda)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RgParams {
    pub eta: f64,
    pub levels: usize,
    pub order: usize,
    pub tol_r: f64,
    pub picard_max: usize,
    pub contraction_max: f64,
    pub cond_max: f64,
    pub s: f64,
}

impl Default for RgParams {
    fn default() -> Self {
        Self { eta: 0.5, levels: 6, order: 2, tol_r: 1e-15, picard_max: 200, contraction_max: 0.5, cond_max: 1e12, s: 2.0 }
    }
}

impl RgParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta = {} must lie in (0,1)", self.eta)));
        }
        if self.order == 0 || self.order > 4 {
            return Err(Error::JetOrder(self.order));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Cluster {
    pub k: usize,
    pub i: usize,
    pub eigenvalues: Vec<f64>,
    pub interval: (f64, f64),
    pub center: f64,
    #[serde(skip)]
    pub basis: DMatrix<C64>,
    pub parent: Option<usize>,
}

impl Cluster {
    pub fn projector(&self) -> DMatrix<C64> {
        &self.basis * self.basis.adjoint()
    }

    /// Distance from x to the interval hull.
    pub fn dist(&self, x: f64) -> f64 {
        (self.interval.0 - x).max(x - self.interval.1).max(0.0)
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterLevel {
    pub n: usize,
    pub eta: f64,
    pub clusters: Vec<Cluster>,
}

impl ClusterLevel {
    pub fn scale(&self) -> f64 {
        self.eta.powi(self.n as i32)
    }

    pub fn of_k(&self, k: usize) -> impl Iterator<Item = (usize, &Cluster)> {
        self.clusters.iter().enumerate().filter(move |(_, c)| c.k == k)
    }
}

/// Maximal split of a sorted spectrum: a new group starts exactly when the gap to the
/// previous eigenvalue exceeds eta^n.
pub fn cluster_decompose(spectrum: &[f64], eta: f64, n: usize) -> Vec<Vec<usize>> {
    let h = eta.powi(n as i32);
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &x) in spectrum.iter().enumerate() {
        match out.last_mut() {
            Some(g) if x - spectrum[*g.last().unwrap()] <= h => g.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

fn fix_phase(v: &mut DMatrix<C64>) {
    for j in 0..v.ncols() {
        let mut best = 0;
        for i in 0..v.nrows() {
            if v[(i, j)].norm() > v[(best, j)].norm() + 1e-14 {
                best = i;
            }
        }
        let p = v[(best, j)];
        if p.norm() > 0.0 {
            let f = p.conj() / p.norm();
            for i in 0..v.nrows() {
                v[(i, j)] *= f;
            }
        }
    }
}

/// Ascending eigen-decomposition of a hermitian matrix with deterministic phases.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], DMatrix::zeros(0, 0));
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let e = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| e.eigenvalues[a].partial_cmp(&e.eigenvalues[b]).unwrap());
    let vals = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let mut vecs = DMatrix::from_fn(n, n, |r, c| e.eigenvectors[(r, order[c])]);
    fix_phase(&mut vecs);
    (vals, vecs)
}

/// Clusters of sigma(mu~) at level n, refining the parent clusters when given.
pub fn cluster_level(t: &Truncation, mu2: &[DMatrix<C64>], parents: Option<&ClusterLevel>, eta: f64, n: usize) -> Result<ClusterLevel> {
    let mut clusters = Vec::new();
    for k in t.normal_modes() {
        let dk = t.mults[k];
        let mut i = 0;
        let groups: Vec<(Option<usize>, DMatrix<C64>)> = match parents {
            None => vec![(None, DMatrix::identity(dk, dk))],
            Some(p) => p.of_k(k).map(|(j, c)| (Some(j), c.basis.clone())).collect(),
        };
        for (parent, v) in groups {
            let restricted = v.adjoint() * &mu2[k] * &v;
            let (vals, vecs) = hermitian_eigen(&restricted);
            if let Some(&lo) = vals.first() {
                if lo <= 0.0 {
                    return Err(Error::Invariant(format!("mu~^2 not positive definite at k = {k} (eigenvalue {lo:e})")));
                }
            }
            let freqs: Vec<f64> = vals.iter().map(|x| x.sqrt()).collect();
            for g in cluster_decompose(&freqs, eta, n) {
                let cols: Vec<_> = g.iter().map(|&c| vecs.column(c).into_owned()).collect();
                let local = DMatrix::from_columns(&cols);
                let mut basis = &v * local;
                fix_phase(&mut basis);
                let ev: Vec<f64> = g.iter().map(|&c| freqs[c]).collect();
                let interval = (ev[0], *ev.last().unwrap());
                clusters.push(Cluster { k, i, eigenvalues: ev, interval, center: 0.5 * (interval.0 + interval.1), basis, parent });
                i += 1;
            }
        }
    }
    let level = ClusterLevel { n, eta, clusters };
    let h = level.scale();
    for (a, ca) in level.clusters.iter().enumerate() {
        for cb in level.clusters.iter().skip(a + 1).filter(|c| c.k == ca.k) {
            let gap = (cb.interval.0 - ca.interval.1).max(ca.interval.0 - cb.interval.1);
            if gap <= h {
                return Err(Error::Invariant(format!("sibling clusters at k = {} closer than eta^{n}: gap {gap:e}", ca.k)));
            }
        }
    }
    Ok(level)
}

/// S_c = {q : d(|omega.q|, C_c) < eta^n / 4} for every cluster.
pub fn resonant_sets(t: &Truncation, omega: &[f64], level: &ClusterLevel) -> Result<Vec<Vec<usize>>> {
    let h = level.scale();
    let mut sets = vec![Vec::new(); level.clusters.len()];
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    for idx in 0..t.n_modes() {
        let x = t.omega_dot(omega, idx).abs();
        for (c, cl) in level.clusters.iter().enumerate() {
            if cl.dist(x) < 0.25 * h {
                if let Some(&o) = owner.get(&(idx, cl.k)) {
                    return Err(Error::Invariant(format!(
                        "resonant sets of clusters {o} and {c} overlap at q = {:?}",
                        t.q_of(idx)
                    )));
                }
                owner.insert((idx, cl.k), c);
                sets[c].push(idx);
            }
        }
    }
    Ok(sets)
}

/// Smooth cutoff: 1 within eta^n/8 of the cluster hull, 0 beyond eta^n/4, cubic smoothstep between.
pub fn cutoff(kappa: f64, interval: (f64, f64), eta: f64, n: usize) -> f64 {
    let h = eta.powi(n as i32) / 8.0;
    let x = kappa.abs();
    let d = (interval.0 - x).max(x - interval.1).max(0.0);
    if d <= h {
        1.0
    } else if d >= 2.0 * h {
        0.0
    } else {
        let u = (d - h) / h;
        1.0 - u * u * (3.0 - 2.0 * u)
    }
}

#[derive(Clone, Debug)]
pub struct Projectors {
    pub p: DiagonalKernel,
    pub q: DiagonalKernel,
    pub phat: DiagonalKernel,
}

fn signed(m: &DMatrix<C64>, kappa: f64) -> DMatrix<C64> {
    if kappa < 0.0 {
        m.map(|c| c.conj())
    } else {
        m.clone()
    }
}

/// P_n(kappa) restricted to block k.
fn p_block(level: &ClusterLevel, k: usize, dk: usize, kappa: f64) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(dk, dk);
    for (_, c) in level.of_k(k) {
        let chi = cutoff(kappa, c.interval, level.eta, level.n);
        if chi > 0.0 {
            out += signed(&c.projector(), kappa) * C64::new(chi, 0.0);
        }
    }
    out
}

pub fn build_projectors(t: &Truncation, omega: &[f64], level: &ClusterLevel, sets: &[Vec<usize>]) -> Projectors {
    let mut p = DiagonalKernel::zeros(t, KernelTag::Projector);
    let mut phat = DiagonalKernel::zeros(t, KernelTag::Projector);
    for idx in 0..t.n_modes() {
        let kappa = t.omega_dot(omega, idx);
        for k in t.normal_modes() {
            p.blocks[idx][k] = p_block(level, k, t.mults[k], kappa);
        }
    }
    for (c, set) in sets.iter().enumerate() {
        let cl = &level.clusters[c];
        for &idx in set {
            let kappa = t.omega_dot(omega, idx);
            phat.blocks[idx][cl.k] += signed(&cl.projector(), kappa);
        }
    }
    let q = one_minus(&p);
    Projectors { p, q, phat }
}

fn one_minus(p: &DiagonalKernel) -> DiagonalKernel {
    let mut q = p.clone();
    for b in q.blocks.iter_mut() {
        for m in b.iter_mut() {
            let n = m.nrows();
            *m = DMatrix::identity(n, n) - &*m;
        }
    }
    q
}

/// max over q, k of |P_n P_{n-1} - P_n| and |P_{n-1} P_n - P_n|.
pub fn composition_defect(pn: &DiagonalKernel, pm: &DiagonalKernel) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, b) in pn.blocks.iter().zip(&pm.blocks) {
        for (x, y) in a.iter().zip(b) {
            if x.nrows() > 0 {
                worst = worst.max((x * y - x).norm()).max((y * x - x).norm());
            }
        }
    }
    worst
}

/// Orthogonality defect of the cluster projectors: |P_i P_j - delta_ij P_i| and the
/// completeness |sum_i P_i - 1| per k.
pub fn projector_defect(t: &Truncation, level: &ClusterLevel) -> f64 {
    let mut worst: f64 = 0.0;
    for k in t.normal_modes() {
        let dk = t.mults[k];
        let mut sum = DMatrix::<C64>::zeros(dk, dk);
        let ps: Vec<_> = level.of_k(k).map(|(_, c)| c.projector()).collect();
        for (i, pi) in ps.iter().enumerate() {
            sum += pi;
            for (j, pj) in ps.iter().enumerate() {
                let want = if i == j { pi.clone() } else { DMatrix::zeros(dk, dk) };
                worst = worst.max((pi * pj - want).norm());
            }
        }
        worst = worst.max((sum - DMatrix::identity(dk, dk)).norm());
    }
    worst
}

/// Containment defect of each cluster projector in its parent: |P^n P^{n-1}_parent - P^n|.
pub fn nesting_defect(level: &ClusterLevel, parents: &ClusterLevel) -> f64 {
    level
        .clusters
        .iter()
        .filter_map(|c| c.parent.map(|p| (c, &parents.clusters[p])))
        .map(|(c, p)| {
            let a = c.projector();
            (&a * p.projector() - &a).norm()
        })
        .fold(0.0, f64::max)
}

/// Gamma block: K^{-1} M on the range of M = Q P_prev.
pub fn gamma_block(kn: &DMatrix<C64>, m: &DMatrix<C64>, cond_max: f64) -> std::result::Result<DMatrix<C64>, f64> {
    let n = m.nrows();
    if m.norm() < 1e-300 {
        return Ok(DMatrix::zeros(n, n));
    }
    if n == 1 {
        let k = kn[(0, 0)];
        if k.norm() == 0.0 {
            return Err(f64::INFINITY);
        }
        return Ok(m / k);
    }
    let (vals, vecs) = hermitian_eigen(m);
    let top = vals.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let cols: Vec<_> = (0..n).filter(|&i| vals[i].abs() > 1e-14 * top).map(|i| vecs.column(i).into_owned()).collect();
    let v = DMatrix::from_columns(&cols);
    let kr = v.adjoint() * kn * &v;
    let sv = kr.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !(cond <= cond_max) || sv.min() == 0.0 {
        return Err(cond);
    }
    let inv = kr.try_inverse().ok_or(f64::INFINITY)?;
    Ok(&v * inv * v.adjoint() * m)
}

/// Gamma_n = K_n^{-1} Q_n P_{n-1}, blockwise.
pub fn gamma_operator(kn: &DiagonalKernel, qn: &DiagonalKernel, p_prev: &DiagonalKernel, cond_max: f64) -> Result<DiagonalKernel> {
    let t = &kn.trunc;
    let mut g = DiagonalKernel::zeros(t, KernelTag::Gamma);
    for idx in 0..t.n_modes() {
        for k in t.normal_modes() {
            let m = &qn.blocks[idx][k] * &p_prev.blocks[idx][k];
            g.blocks[idx][k] = gamma_block(&kn.blocks[idx][k], &m, cond_max).map_err(|cond| {
                Error::NearSingular(format!("q = {:?}, k = {k}: condition number {cond:e}", t.q_of(idx)))
            })?;
        }
    }
    Ok(g)
}

/// A_n(q): a_n for omega.q > 0, its conjugate for omega.q < 0, the real part at omega.q = 0.
pub fn a_kernel(t: &Truncation, omega: &[f64], a: &[DMatrix<C64>]) -> DiagonalKernel {
    let mut out = DiagonalKernel::zeros(t, KernelTag::An);
    for idx in 0..t.n_modes() {
        let kappa = t.omega_dot(omega, idx);
        for k in t.normal_modes() {
            out.blocks[idx][k] = if kappa > 0.0 {
                a[k].clone()
            } else if kappa < 0.0 {
                a[k].map(|c| c.conj())
            } else {
                a[k].map(|c| C64::new(c.re, 0.0))
            };
        }
    }
    out
}

pub fn kernel_mul(a: &DiagonalKernel, b: &DiagonalKernel, tag: KernelTag) -> DiagonalKernel {
    let mut out = a.clone();
    out.tag = tag;
    for (o, (x, y)) in out.blocks.iter_mut().zip(a.blocks.iter().zip(&b.blocks)) {
        for (m, (p, q)) in o.iter_mut().zip(x.iter().zip(y)) {
            *m = p * q;
        }
    }
    out
}

pub fn kernel_sub(a: &DiagonalKernel, b: &DiagonalKernel) -> DiagonalKernel {
    let mut out = a.clone();
    for (o, x) in out.blocks.iter_mut().zip(&b.blocks) {
        for (m, p) in o.iter_mut().zip(x) {
            *m -= p;
        }
    }
    out
}

pub fn kernel_add(a: &DiagonalKernel, b: &DiagonalKernel) -> DiagonalKernel {
    let mut out = a.clone();
    for (o, x) in out.blocks.iter_mut().zip(&b.blocks) {
        for (m, p) in o.iter_mut().zip(x) {
            *m += p;
        }
    }
    out
}

/// Dense vector version of a diagonal kernel application.
pub fn apply_dense(op: &DiagonalKernel, z: &[C64]) -> Vec<C64> {
    let t = &op.trunc;
    let nd = t.block_dim();
    let mut out = vec![C64::new(0.0, 0.0); z.len()];
    for idx in 0..t.n_modes() {
        for k in t.normal_modes() {
            let off = idx * nd + t.block_offset(k);
            let b = &op.blocks[idx][k];
            for r in 0..t.mults[k] {
                out[off + r] = (0..t.mults[k]).map(|c| b[(r, c)] * z[off + c]).sum();
            }
        }
    }
    out
}

fn apply_tps(op: &DiagonalKernel, z: &[Tps], rows: &[usize]) -> Vec<Tps> {
    let t = &op.trunc;
    let nd = t.block_dim();
    let proto = &z[0];
    rows.iter()
        .map(|&r| {
            let (idx, c) = (r / nd, r % nd);
            let (k, i) = t.block_coord(c);
            let off = idx * nd + t.block_offset(k);
            let b = &op.blocks[idx][k];
            let mut acc = proto.zero_like();
            for j in 0..t.mults[k] {
                let v = b[(i, j)];
                if v.norm() != 0.0 {
                    acc.add_assign_scaled(&z[off + j], v);
                }
            }
            acc
        })
        .collect()
}

/// Dense coordinates touched by a kernel (nonzero block rows).
fn kernel_support(op: &DiagonalKernel) -> Vec<usize> {
    let t = &op.trunc;
    let nd = t.block_dim();
    let mut out = Vec::new();
    for idx in 0..t.n_modes() {
        for k in t.normal_modes() {
            if op.blocks[idx][k].norm() > 0.0 {
                let off = idx * nd + t.block_offset(k);
                out.extend(off..off + t.mults[k]);
            }
        }
    }
    out
}

/// Dense coordinates of the resonant blocks (q in S_c, all of block k).
fn active_coords(t: &Truncation, level: &ClusterLevel, sets: &[Vec<usize>]) -> Vec<usize> {
    let nd = t.block_dim();
    let mut out: Vec<usize> = Vec::new();
    for (c, set) in sets.iter().enumerate() {
        let k = level.clusters[c].k;
        for &idx in set {
            let off = idx * nd + t.block_offset(k);
            out.extend(off..off + t.mults[k]);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Weighted block l^1 operator norm: max over column blocks of sum_rows (w_r / w_c) |L_rc|.
pub fn weighted_block_norm(t: &Truncation, rows: &[usize], cols: &[usize], lin: impl Fn(usize, usize) -> C64, s: f64) -> f64 {
    let nd = t.block_dim();
    let group = |cs: &[usize]| {
        let mut g: Vec<((usize, usize), Vec<usize>)> = Vec::new();
        for (pos, &c) in cs.iter().enumerate() {
            let key = (c / nd, t.block_coord(c % nd).0);
            match g.last_mut() {
                Some((k, v)) if *k == key => v.push(pos),
                _ => g.push((key, vec![pos])),
            }
        }
        g
    };
    let rg = group(rows);
    let cg = group(cols);
    let mut best: f64 = 0.0;
    for ((_, kc), cpos) in &cg {
        let wc = Truncation::weight(*kc, s);
        let mut acc = 0.0;
        for ((_, kr), rpos) in &rg {
            let m = DMatrix::from_fn(rpos.len(), cpos.len(), |i, j| lin(rpos[i], cpos[j]));
            if m.norm() > 0.0 {
                acc += Truncation::weight(*kr, s) / wc * spectral_norm_rect(&m);
            }
        }
        best = best.max(acc);
    }
    best
}

fn spectral_norm_rect(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == m.ncols() {
        spectral_norm(m)
    } else {
        m.clone().svd(false, false).singular_values.max()
    }
}

/// Current effective map: the model itself at level 0, a jet afterwards.
#[derive(Clone, Debug)]
enum EffectiveMap {
    Model,
    Jet(JetFunctional),
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelDiagnostics {
    pub n: usize,
    pub clusters: Vec<Cluster>,
    pub set_sizes: Vec<usize>,
    pub active: usize,
    pub gamma_norm: f64,
    pub contraction: f64,
    pub picard_iterations: usize,
    pub a_norm: f64,
    pub a_hermiticity_raw: f64,
    pub a_hermiticity: f64,
    pub mu2_min_eigenvalue: f64,
    pub cluster_drift: f64,
    pub composition_defect: f64,
    pub projector_defect: f64,
    pub nesting_defect: f64,
    pub symm1: f64,
    pub symm2: f64,
    pub w_const_norm: f64,
    pub dw_norm: f64,
    pub dz_norm: f64,
    pub z_norm: f64,
    pub residual: f64,
    pub ayn1: f64,
    pub ayn1_scale: f64,
}

#[derive(Clone, Debug)]
pub struct RgOutcome {
    pub z: Vec<C64>,
    pub history: Vec<Vec<C64>>,
    pub diagnostics: Vec<LevelDiagnostics>,
    pub levels: Vec<ClusterLevel>,
    pub mu2: Vec<DMatrix<C64>>,
}

/// Iteration state. Index m of the per-level vectors refers to level m.
pub struct RgRun<'a, M: NormalModel> {
    pub model: &'a M,
    pub params: RgParams,
    pub n: usize,
    pub levels: Vec<ClusterLevel>,
    pub sets: Vec<Vec<Vec<usize>>>,
    pub p: Vec<DiagonalKernel>,
    pub a: Vec<DiagonalKernel>,
    pub a_blocks: Vec<Vec<DMatrix<C64>>>,
    pub kn: DiagonalKernel,
    pub k0: DiagonalKernel,
    pub mu2: Vec<DMatrix<C64>>,
    pub gammas: Vec<DiagonalKernel>,
    pub r: Vec<JetFunctional>,
    pub z: Vec<Vec<C64>>,
    pub diagnostics: Vec<LevelDiagnostics>,
    active: Vec<usize>,
    w: EffectiveMap,
}

fn c0() -> C64 {
    C64::new(0.0, 0.0)
}

impl<'a, M: NormalModel> RgRun<'a, M> {
    pub fn new(model: &'a M, params: RgParams) -> Result<Self> {
        params.validate()?;
        let t = model.trunc().clone();
        let omega = model.omega().to_vec();
        let mu = model.mu();
        let mu2: Vec<DMatrix<C64>> =
            t.mults.iter().enumerate().map(|(k, &m)| DMatrix::identity(m, m) * C64::new(mu[k] * mu[k], 0.0)).collect();
        let level0 = cluster_level(&t, &mu2, None, params.eta, 0)?;
        let sets0 = resonant_sets(&t, &omega, &level0)?;
        let active = active_coords(&t, &level0, &sets0);
        let k0 = DiagonalKernel::k0(&t, &omega, mu);
        let n_dense = t.n_modes() * t.block_dim();
        Ok(Self {
            model,
            params,
            n: 0,
            levels: vec![level0],
            sets: vec![sets0],
            p: vec![DiagonalKernel::identity(&t, KernelTag::Projector)],
            a: Vec::new(),
            a_blocks: Vec::new(),
            kn: k0.clone(),
            k0,
            mu2,
            gammas: Vec::new(),
            r: Vec::new(),
            z: vec![vec![c0(); n_dense]],
            diagnostics: Vec::new(),
            active,
            w: EffectiveMap::Model,
        })
    }

    fn t(&self) -> &Truncation {
        self.model.trunc()
    }

    fn n_dense(&self) -> usize {
        self.t().n_modes() * self.t().block_dim()
    }

    /// w~_n(x) rows for dense Tps arguments x (entries outside the inputs are ignored for jets).
    fn eval_wtilde(&self, x: &[Tps], rows: &[usize]) -> Vec<Tps> {
        let raw: Vec<Tps> = match &self.w {
            EffectiveMap::Model => {
                let full = self.model.w0_tps(x);
                rows.iter().map(|&r| full[r].clone()).collect()
            }
            EffectiveMap::Jet(j) => {
                let args: Vec<Tps> = j.inputs.iter().map(|&c| x[c].clone()).collect();
                let pos: HashMap<usize, usize> = j.outputs.iter().enumerate().map(|(i, &c)| (c, i)).collect();
                let out = if args.is_empty() { j.rows.iter().map(|r| Tps::constant(&x[0].table, r.c[0])).collect() } else { j.compose(&args) };
                rows.iter().map(|r| pos.get(r).map(|&i| out[i].clone()).unwrap_or_else(|| x[0].zero_like())).collect()
            }
        };
        match self.a.get(self.n) {
            Some(a) => {
                let ax = apply_tps(a, x, rows);
                raw.iter().zip(&ax).map(|(w, v)| w.sub(v)).collect()
            }
            None => raw,
        }
    }

    /// Linear part of w_n (before A subtraction) at 0 on the given coordinates.
    fn linear_part(&self, cols: &[usize], rows: &[usize]) -> DMatrix<C64> {
        let n = self.n_dense();
        match &self.w {
            EffectiveMap::Model => {
                let table = MonoTable::new(cols.len(), 1);
                let mut x = vec![Tps::zero(&table); n];
                for (i, &c) in cols.iter().enumerate() {
                    x[c] = Tps::var(&table, i, c0());
                }
                let y = self.model.w0_tps(&x);
                DMatrix::from_fn(rows.len(), cols.len(), |r, c| y[rows[r]].c[1 + c])
            }
            EffectiveMap::Jet(j) => {
                let pin: HashMap<usize, usize> = j.inputs.iter().enumerate().map(|(i, &c)| (c, i)).collect();
                let pout: HashMap<usize, usize> = j.outputs.iter().enumerate().map(|(i, &c)| (c, i)).collect();
                DMatrix::from_fn(rows.len(), cols.len(), |r, c| match (pout.get(&rows[r]), pin.get(&cols[c])) {
                    (Some(&a), Some(&b)) => j.linear(a, b),
                    _ => c0(),
                })
            }
        }
    }

    fn w_constant_norm(&self) -> f64 {
        let t = self.t();
        let rows: Vec<usize> = self.active.clone();
        let table = MonoTable::new(0, 0);
        let x = vec![Tps::zero(&table); self.n_dense()];
        let mut dense = vec![c0(); self.n_dense()];
        let raw = match &self.w {
            EffectiveMap::Model => self.model.w0_tps(&x).iter().map(|v| v.c[0]).collect::<Vec<_>>(),
            EffectiveMap::Jet(j) => {
                let mut d = vec![c0(); self.n_dense()];
                for (i, &c) in j.outputs.iter().enumerate() {
                    d[c] = j.rows[i].c[0];
                }
                d
            }
        };
        for r in rows {
            dense[r] = raw[r];
        }
        dense_weighted_norm(t, &dense, self.params.s)
    }

    /// Hermitian a_n from the diagonal derivative on the resonant sets of level n.
    fn extract_a(&self) -> (Vec<DMatrix<C64>>, f64, f64) {
        let t = self.t();
        let omega = self.model.omega();
        let level = &self.levels[self.n];
        let sets = &self.sets[self.n];
        let nd = t.block_dim();
        let mut a: Vec<DMatrix<C64>> = t.mults.iter().map(|&m| DMatrix::zeros(m, m)).collect();
        let mut raw_defect: f64 = 0.0;
        let mut picks: Vec<(usize, usize)> = Vec::new();
        for (c, cl) in level.clusters.iter().enumerate() {
            let best = sets[c]
                .iter()
                .copied()
                .filter(|&idx| t.omega_dot(omega, idx) > 0.0)
                .min_by(|&x, &y| {
                    let dx = (t.omega_dot(omega, x) - cl.center).abs();
                    let dy = (t.omega_dot(omega, y) - cl.center).abs();
                    dx.partial_cmp(&dy).unwrap()
                });
            if let Some(idx) = best {
                picks.push((c, idx));
            }
        }
        let mut cols: Vec<usize> = Vec::new();
        for &(c, idx) in &picks {
            let k = level.clusters[c].k;
            let off = idx * nd + t.block_offset(k);
            cols.extend(off..off + t.mults[k]);
        }
        cols.sort_unstable();
        cols.dedup();
        let lin = self.linear_part(&cols, &cols);
        let pos: HashMap<usize, usize> = cols.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        for &(c, idx) in &picks {
            let cl = &level.clusters[c];
            let k = cl.k;
            let off = idx * nd + t.block_offset(k);
            let dk = t.mults[k];
            let sigma = DMatrix::from_fn(dk, dk, |r, s| lin[(pos[&(off + r)], pos[&(off + s)])]);
            let p = cl.projector();
            let proj = &p * sigma * &p;
            // measured against the block of mu~^2 it corrects
            let scale = self.mu2[k].norm().max(proj.norm()).max(1e-300);
            raw_defect = raw_defect.max((&proj - proj.adjoint()).norm() / scale);
            a[k] += (&proj + proj.adjoint()) * C64::new(0.5, 0.0);
        }
        let herm = a.iter().map(|m| (m - m.adjoint()).norm()).fold(0.0, f64::max);
        (a, raw_defect, herm)
    }

    /// One renormalization step n -> n+1.
    pub fn step(&mut self) -> Result<()> {
        let t = self.t().clone();
        let omega = self.model.omega().to_vec();
        let prm = self.params.clone();
        let nd = t.block_dim();
        let n = self.n;
        let ndense = self.n_dense();

        // jet symmetries of w_n on the active set
        let (symm1, symm2) = if self.active.is_empty() {
            (0.0, 0.0)
        } else {
            let lin = self.linear_part(&self.active, &self.active);
            let table = MonoTable::new(self.active.len(), 1);
            let mut rows = Vec::new();
            for r in 0..self.active.len() {
                let mut p = Tps::zero(&table);
                for c in 0..self.active.len() {
                    p.c[1 + c] = lin[(r, c)];
                }
                rows.push(p);
            }
            let j = JetFunctional { table, inputs: self.active.clone(), outputs: self.active.clone(), rows };
            j.symmetry_defects(|c| t.neg_index(c / nd) * nd + c % nd)
        };
        let w_const = self.w_constant_norm();

        // A_n
        let (a_n, a_raw, a_herm) = self.extract_a();
        let a_kernel = a_kernel(&t, &omega, &a_n);
        let a_norm = a_n.iter().filter(|m| m.nrows() > 0).map(spectral_norm).fold(0.0, f64::max);
        self.kn = kernel_sub(&self.kn, &kernel_mul(&self.p[n], &a_kernel, KernelTag::Kn));
        self.kn.tag = KernelTag::Kn;
        for (m, a) in self.mu2.iter_mut().zip(&a_n) {
            *m += a;
        }
        self.a.push(a_kernel);
        self.a_blocks.push(a_n);

        // level n+1 clusters, sets, projectors
        let level = cluster_level(&t, &self.mu2, Some(&self.levels[n]), prm.eta, n + 1)?;
        let mu2_min = self
            .mu2
            .iter()
            .filter(|m| m.nrows() > 0)
            .map(|m| hermitian_eigen(m).0[0])
            .fold(f64::INFINITY, f64::min);
        let sets = resonant_sets(&t, &omega, &level)?;
        for (c, cl) in level.clusters.iter().enumerate() {
            let parent = cl.parent.unwrap();
            if let Some(&q) = sets[c].iter().find(|q| !self.sets[n][parent].contains(q)) {
                return Err(Error::Invariant(format!("resonant set nesting fails at q = {:?}, k = {}", t.q_of(q), cl.k)));
            }
        }
        let drift = self.cluster_drift(&level);
        let proj = build_projectors(&t, &omega, &level, &sets);
        let comp = composition_defect(&proj.p, &self.p[n]);
        let pdef = projector_defect(&t, &level);
        let ndef = nesting_defect(&level, &self.levels[n]);
        let gamma = gamma_operator(&self.kn, &proj.q, &self.p[n], prm.cond_max)?;
        let gamma_norm = gamma.max_block_norm();
        let active_next = active_coords(&t, &level, &sets);

        // contraction factor of R -> Gamma w~(z + R)
        let gsupp = kernel_support(&gamma);
        let (contraction, dw_norm) = if gsupp.is_empty() {
            (0.0, 0.0)
        } else {
            let lin = self.linear_part(&gsupp, &gsupp);
            let pos: HashMap<usize, usize> = gsupp.iter().enumerate().map(|(i, &c)| (c, i)).collect();
            // Dw~ = Dw - A on the support
            let wt = |r: usize, c: usize| -> C64 {
                let (ir, ic) = (gsupp[r], gsupp[c]);
                let mut v = lin[(r, c)];
                if ir / nd == ic / nd {
                    let (kr, i) = t.block_coord(ir % nd);
                    let (kc, j) = t.block_coord(ic % nd);
                    if kr == kc {
                        v -= self.a[n].blocks[ir / nd][kr][(i, j)];
                    }
                }
                v
            };
            let dw = DMatrix::from_fn(gsupp.len(), gsupp.len(), wt);
            let gl = DMatrix::from_fn(gsupp.len(), gsupp.len(), |r, c| {
                let ir = gsupp[r];
                let (k, i) = t.block_coord(ir % nd);
                let off = (ir / nd) * nd + t.block_offset(k);
                (0..t.mults[k]).map(|j| gamma.blocks[ir / nd][k][(i, j)] * dw[(pos[&(off + j)], c)]).sum()
            });
            let dwn = weighted_block_norm(&t, &gsupp, &gsupp, |r, c| dw[(r, c)], prm.s);
            (weighted_block_norm(&t, &gsupp, &gsupp, |r, c| gl[(r, c)], prm.s), dwn)
        };
        if contraction >= prm.contraction_max {
            return Err(Error::Contraction(format!(
                "level {}: |Gamma Dw~| = {contraction:.3e} >= {}; reduce lambda",
                n + 1,
                prm.contraction_max
            )));
        }

        // R_{n+1} by Picard iteration on jets in the level-(n+1) active coordinates
        let table = MonoTable::new(active_next.len(), prm.order);
        let mut r_rows: Vec<Tps> = vec![Tps::zero(&table); gsupp.len()];
        let mut iters = 0;
        let base: Vec<Tps> = (0..ndense)
            .map(|c| match active_next.binary_search(&c) {
                Ok(i) => Tps::var(&table, i, c0()),
                Err(_) => Tps::zero(&table),
            })
            .collect();
        let wrows = match &self.w {
            EffectiveMap::Model => (0..ndense).collect::<Vec<_>>(),
            EffectiveMap::Jet(j) => j.outputs.clone(),
        };
        if !gsupp.is_empty() {
            loop {
                iters += 1;
                let mut x = base.clone();
                for (i, &c) in gsupp.iter().enumerate() {
                    x[c] = x[c].add(&r_rows[i]);
                }
                let y = self.eval_wtilde(&x, &wrows);
                let mut yd = vec![Tps::zero(&table); ndense];
                for (i, &r) in wrows.iter().enumerate() {
                    yd[r] = y[i].clone();
                }
                let new = apply_tps(&gamma, &yd, &gsupp);
                let mut diff: f64 = 0.0;
                let mut size: f64 = 0.0;
                for (a, b) in new.iter().zip(&r_rows) {
                    for (u, v) in a.c.iter().zip(&b.c) {
                        diff = diff.max((u - v).norm());
                        size = size.max(u.norm());
                    }
                }
                r_rows = new;
                if diff <= prm.tol_r * size.max(1e-300) || diff == 0.0 {
                    break;
                }
                if iters >= prm.picard_max {
                    return Err(Error::NoConvergence(format!("R_{} Picard: change {diff:e} after {iters} iterations", n + 1)));
                }
            }
        }
        let r_jet = JetFunctional { table: table.clone(), inputs: active_next.clone(), outputs: gsupp.clone(), rows: r_rows };

        // w_{n+1}(z) = w~_n(z + R(z)) on the new active rows
        let mut x = base.clone();
        for (i, &c) in gsupp.iter().enumerate() {
            x[c] = x[c].add(&r_jet.rows[i]);
        }
        let w_next = if active_next.is_empty() {
            JetFunctional::zero(&table, vec![], vec![])
        } else {
            let rows = self.eval_wtilde(&x, &active_next);
            JetFunctional { table, inputs: active_next.clone(), outputs: active_next.clone(), rows }
        };

        self.levels.push(level);
        self.sets.push(sets);
        self.p.push(proj.p);
        self.gammas.push(gamma);
        self.r.push(r_jet);
        self.w = EffectiveMap::Jet(w_next);
        self.active = active_next;
        self.n = n + 1;
        let z = self.f_of_zero();
        let dz: Vec<C64> = z.iter().zip(self.z.last().unwrap()).map(|(a, b)| a - b).collect();
        self.z.push(z);
        let (residual, ayn1, ayn1_scale) = self.limit_identity();
        let zl = self.z.last().unwrap();
        self.diagnostics.push(LevelDiagnostics {
            n: self.n,
            clusters: self.levels[self.n].clusters.clone(),
            set_sizes: self.sets[self.n].iter().map(|s| s.len()).collect(),
            active: self.active.len(),
            gamma_norm,
            contraction,
            picard_iterations: iters,
            a_norm,
            a_hermiticity_raw: a_raw,
            a_hermiticity: a_herm,
            mu2_min_eigenvalue: mu2_min,
            cluster_drift: drift,
            composition_defect: comp,
            projector_defect: pdef,
            nesting_defect: ndef,
            symm1,
            symm2,
            w_const_norm: w_const,
            dw_norm,
            dz_norm: dense_weighted_norm(&t, &dz, prm.s),
            z_norm: dense_weighted_norm(&t, zl, prm.s),
            residual,
            ayn1,
            ayn1_scale,
        });
        Ok(())
    }

    /// Worst ratio sup_{x in I^n} d(x, I^m) / eta^{m+1} over all ancestors m >= 1.
    fn cluster_drift(&self, level: &ClusterLevel) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &level.clusters {
            let mut p = c.parent;
            let mut m = level.n;
            while let (Some(pi), true) = (p, m >= 2) {
                m -= 1;
                let anc = &self.levels[m].clusters[pi];
                let d = anc.dist(c.interval.0).max(anc.dist(c.interval.1));
                worst = worst.max(d / self.params.eta.powi(m as i32 + 1));
                p = anc.parent;
            }
        }
        worst
    }

    /// z_n = F_n(0) by unwinding x -> x + R_m(x).
    fn f_of_zero(&self) -> Vec<C64> {
        let mut x = vec![c0(); self.n_dense()];
        for (m, r) in self.r.iter().enumerate().rev() {
            let args: Vec<C64> = r.inputs.iter().map(|&c| x[c]).collect();
            let vals = if m + 1 == self.r.len() { r.constant() } else { r.eval(&args) };
            for (i, &c) in r.outputs.iter().enumerate() {
                x[c] += vals[i];
            }
        }
        x
    }

    /// (|K0 z - w0(z)|, |K0 z_n - Q_n w0(z_n) - A_{<n} P_n R_n(0)|, scale).
    pub fn limit_identity(&self) -> (f64, f64, f64) {
        let t = self.t();
        let s = self.params.s;
        let z = self.z.last().unwrap();
        let k0z = apply_dense(&self.k0, z);
        let w = self.model.w0(z);
        let residual: Vec<C64> = k0z.iter().zip(&w).map(|(a, b)| a - b).collect();
        let pn = &self.p[self.n];
        let pw = apply_dense(pn, &w);
        let mut r0 = vec![c0(); self.n_dense()];
        if let Some(r) = self.r.last() {
            for (i, &c) in r.outputs.iter().enumerate() {
                r0[c] = r.rows[i].c[0];
            }
        }
        let pr = apply_dense(pn, &r0);
        let mut acc = vec![c0(); self.n_dense()];
        for a in &self.a[..self.n.min(self.a.len())] {
            for (o, v) in acc.iter_mut().zip(apply_dense(a, &pr)) {
                *o += v;
            }
        }
        let lhs: Vec<C64> = (0..z.len()).map(|i| k0z[i] - (w[i] - pw[i]) - acc[i]).collect();
        let scale = self.k0.max_block_norm() * dense_weighted_norm(t, z, s) + dense_weighted_norm(t, &w, s);
        (dense_weighted_norm(t, &residual, s), dense_weighted_norm(t, &lhs, s), scale)
    }

    /// Gamma_n as a function of the continuous divisor variable kappa on block k.
    pub fn gamma_at(&self, n: usize, k: usize, kappa: f64) -> Result<DMatrix<C64>> {
        let t = self.t();
        let dk = t.mults[k];
        let mu = self.model.mu()[k];
        let mut kn = DMatrix::identity(dk, dk) * C64::new(kappa * kappa - mu * mu, 0.0);
        for m in 0..n {
            let pm = if m == 0 { DMatrix::identity(dk, dk) } else { p_block(&self.levels[m], k, dk, kappa) };
            let a = &self.a_blocks[m][k];
            let am = if kappa > 0.0 {
                a.clone()
            } else if kappa < 0.0 {
                a.map(|c| c.conj())
            } else {
                a.map(|c| C64::new(c.re, 0.0))
            };
            kn -= pm * am;
        }
        let pn = p_block(&self.levels[n], k, dk, kappa);
        let pprev = if n == 1 { DMatrix::identity(dk, dk) } else { p_block(&self.levels[n - 1], k, dk, kappa) };
        let m = (DMatrix::identity(dk, dk) - pn) * pprev;
        gamma_block(&kn, &m, self.params.cond_max).map_err(|c| Error::NearSingular(format!("kappa = {kappa}, k = {k}: condition {c:e}")))
    }

    /// max_q |Gamma_n(omega.q + omega.p) - Gamma_n(omega.q)| and that divided by |omega.p|.
    pub fn gamma_continuity_check(&self, n: usize, p: &[i32]) -> Result<GammaContinuity> {
        let t = self.t();
        let omega = self.model.omega();
        let wp: f64 = p.iter().zip(omega).map(|(&a, b)| a as f64 * b).sum();
        let mut worst: f64 = 0.0;
        if wp != 0.0 {
            for idx in 0..t.n_modes() {
                let kappa = t.omega_dot(omega, idx);
                for k in t.normal_modes() {
                    let d = self.gamma_at(n, k, kappa + wp)? - self.gamma_at(n, k, kappa)?;
                    worst = worst.max(spectral_norm(&d));
                }
            }
        }
        let gamma_norm = self.gammas.get(n - 1).map(|g| g.max_block_norm()).unwrap_or(0.0);
        Ok(GammaContinuity {
            n,
            omega_p: wp,
            delta_norm: worst,
            slope: if wp != 0.0 { worst / wp.abs() } else { 0.0 },
            gamma_norm,
            eta_pow: self.params.eta.powi(-(n as i32)),
        })
    }

    pub fn outcome(&self) -> RgOutcome {
        RgOutcome {
            z: self.z.last().unwrap().clone(),
            history: self.z.clone(),
            diagnostics: self.diagnostics.clone(),
            levels: self.levels.clone(),
            mu2: self.mu2.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaContinuity {
    pub n: usize,
    pub omega_p: f64,
    pub delta_norm: f64,
    pub slope: f64,
    pub gamma_norm: f64,
    pub eta_pow: f64,
}

/// Runs the configured number of levels.
pub fn rg_solve<M: NormalModel>(model: &M, params: &RgParams) -> Result<RgOutcome> {
    let mut run = RgRun::new(model, params.clone())?;
    for _ in 0..params.levels {
        run.step()?;
    }
    Ok(run.outcome())
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
