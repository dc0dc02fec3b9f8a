//! Partial Birkhoff normal form of the tangential Hamiltonian H_d, amplitude-frequency
//! modulation and the delta-rescaling.
//!
//! Complex coordinates z = (mu q + i p)/sqrt(2 mu), so q = (z + zb)/sqrt(2 mu) and
//! Lambda_d = sum mu |z|^2. The transform is z -> zeta = z + i dF/dzb, the degree-4 jet
//! of the time-1 flow that removes every nonresonant quartic monomial.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jet::{MonoTable, Scalar, Tps};
use crate::mode_space::C64;
use crate::nlw_model::{basis_value, NlwConfig, QuarticTensor, SpaceGrid};

/// c z^alpha zb^beta
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolyTerm {
    pub coef: C64,
    pub alpha: Vec<u8>,
    pub beta: Vec<u8>,
}

impl PolyTerm {
    fn degree(&self) -> usize {
        self.alpha.iter().chain(&self.beta).map(|&e| e as usize).sum()
    }

    fn d_dz(&self, j: usize) -> Option<PolyTerm> {
        (self.alpha[j] > 0).then(|| {
            let mut t = self.clone();
            t.coef *= self.alpha[j] as f64;
            t.alpha[j] -= 1;
            t
        })
    }

    fn d_dzb(&self, j: usize) -> Option<PolyTerm> {
        (self.beta[j] > 0).then(|| {
            let mut t = self.clone();
            t.coef *= self.beta[j] as f64;
            t.beta[j] -= 1;
            t
        })
    }

    fn is_resonant(&self) -> bool {
        self.alpha == self.beta
    }
}

fn diff(terms: &[PolyTerm], j: usize, bar: bool) -> Vec<PolyTerm> {
    terms.iter().filter_map(|t| if bar { t.d_dzb(j) } else { t.d_dz(j) }).collect()
}

/// Evaluates a term list at (z, zb) given powers pw[i][p] = z_i^p, pwb[i][p] = zb_i^p.
fn eval_terms<T: Scalar>(terms: &[PolyTerm], pw: &[Vec<T>], pwb: &[Vec<T>], proto: &T) -> T {
    let mut acc = proto.zero_like();
    for t in terms {
        let mut v = proto.cst(t.coef);
        for i in 0..t.alpha.len() {
            if t.alpha[i] > 0 {
                v = v.mul(&pw[i][t.alpha[i] as usize]);
            }
            if t.beta[i] > 0 {
                v = v.mul(&pwb[i][t.beta[i] as usize]);
            }
        }
        acc = acc.add(&v);
    }
    acc
}

fn powers<T: Scalar>(z: &[T], max: usize) -> Vec<Vec<T>> {
    z.iter()
        .map(|x| {
            let mut v = vec![x.cst(C64::new(1.0, 0.0))];
            for p in 1..=max {
                let next = v[p - 1].mul(x);
                v.push(next);
            }
            v
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NormalFormData {
    pub tangential_set: Vec<i32>,
    pub m: f64,
    pub mu: Vec<f64>,
    pub gbar: Vec<Vec<f64>>,
    pub f_terms: Vec<PolyTerm>,
    /// (alpha, beta, mu.(alpha - beta)) for every nonresonant monomial
    pub divisors: Vec<(Vec<u8>, Vec<u8>, f64)>,
    pub min_divisor: f64,
    /// min divisor over m / (N^2 + m)^{3/2}
    pub divisor_ratio: f64,
    pub remainder_norm: f64,
    #[serde(skip)]
    dzb: Vec<Vec<PolyTerm>>,
    #[serde(skip)]
    dz: Vec<Vec<PolyTerm>>,
    /// second derivatives [l][j]: d2F/dzb_l dz_j, d2F/dzb_l dzb_j, d2F/dz_l dz_j, d2F/dz_l dzb_j
    #[serde(skip)]
    d2: [Vec<Vec<Vec<PolyTerm>>>; 4],
}

/// gbar_ij from the angle average of the quartic part:
/// 3/4 g_iiii / mu_i^2 on the diagonal, 3/2 g_iijj / (mu_i mu_j) off it.
pub fn gbar_matrix(tangential_set: &[i32], m: f64) -> Vec<Vec<f64>> {
    let d = tangential_set.len();
    let mu: Vec<f64> = tangential_set.iter().map(|&n| ((n * n) as f64 + m).sqrt()).collect();
    let t = QuarticTensor::build(tangential_set);
    let mut g = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let (a, b) = (tangential_set[i], tangential_set[j]);
            g[i][j] = if i == j {
                0.75 * t.get(a, a, a, a) / (mu[i] * mu[i])
            } else {
                1.5 * t.get(a, a, b, b) / (mu[i] * mu[j])
            };
        }
    }
    g
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivisorReport {
    pub value: f64,
    pub ratio: f64,
}

/// mu_i s_i + ... for unsigned spatial indices with signs; excludes the {n,n,n',n'} pattern.
pub fn small_divisor(idx: [i32; 4], signs: [i8; 4], m: f64) -> Result<DivisorReport> {
    let mut net: Vec<(i32, i32)> = Vec::new();
    for (n, s) in idx.iter().zip(signs) {
        let n = n.abs();
        match net.iter_mut().find(|e| e.0 == n) {
            Some(e) => e.1 += s as i32,
            None => net.push((n, s as i32)),
        }
    }
    if net.iter().all(|e| e.1 == 0) {
        return Err(Error::ExcludedPattern(format!("{idx:?} with signs {signs:?}")));
    }
    let value: f64 = idx.iter().zip(signs).map(|(&n, s)| s as f64 * ((n * n) as f64 + m).sqrt()).sum();
    let nmax = idx.iter().map(|n| n.abs()).max().unwrap() as f64;
    let scale = m / (nmax * nmax + m).powf(1.5);
    Ok(DivisorReport { value, ratio: value.abs() / scale })
}

/// Quartic part of H_d in (z, zb): c_3/4 sum g q_a q_b q_c q_e.
pub fn quartic_hd(cfg: &NlwConfig) -> Vec<PolyTerm> {
    let tan = &cfg.tangential_set;
    let d = tan.len();
    let table = MonoTable::new(2 * d, 4);
    let tensor = QuarticTensor::build(tan);
    let q: Vec<Tps> = (0..d)
        .map(|i| {
            let s = 1.0 / (2.0 * cfg.mu(tan[i])).sqrt();
            Tps::var(&table, i, C64::new(0.0, 0.0)).add(&Tps::var(&table, d + i, C64::new(0.0, 0.0))).scale_re(s)
        })
        .collect();
    let mut acc = Tps::zero(&table);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    let g = tensor.get(tan[a], tan[b], tan[c], tan[e]);
                    if g != 0.0 {
                        acc = acc.add(&q[a].mul(&q[b]).mul(&q[c]).mul(&q[e]).scale_re(g));
                    }
                }
            }
        }
    }
    tps_to_terms(&acc.scale_re(cfg.f_coeffs[0] / 4.0), d)
}

fn tps_to_terms(p: &Tps, d: usize) -> Vec<PolyTerm> {
    let mut out = Vec::new();
    for (i, m) in p.table.monos.iter().enumerate() {
        let c = p.c[i];
        if c.norm() == 0.0 {
            continue;
        }
        let mut alpha = vec![0u8; d];
        let mut beta = vec![0u8; d];
        for &v in m {
            let v = v as usize;
            if v < d {
                alpha[v] += 1;
            } else {
                beta[v - d] += 1;
            }
        }
        out.push(PolyTerm { coef: c, alpha, beta });
    }
    out
}

fn term_tps(table: &Arc<MonoTable>, t: &PolyTerm) -> Tps {
    let d = t.alpha.len();
    let mut v = Tps::constant(table, t.coef);
    for i in 0..d {
        for _ in 0..t.alpha[i] {
            v = v.mul(&Tps::var(table, i, C64::new(0.0, 0.0)));
        }
        for _ in 0..t.beta[i] {
            v = v.mul(&Tps::var(table, d + i, C64::new(0.0, 0.0)));
        }
    }
    v
}

fn terms_tps(table: &Arc<MonoTable>, terms: &[PolyTerm]) -> Tps {
    terms.iter().fold(Tps::zero(table), |acc, t| acc.add(&term_tps(table, t)))
}

/// Removes every nonresonant monomial of the quartic part; F = g~ / (i mu.(alpha - beta)).
pub fn birkhoff_transform(cfg: &NlwConfig, quartic: &[PolyTerm], threshold: f64) -> Result<NormalFormData> {
    let tan = &cfg.tangential_set;
    let d = tan.len();
    let mu: Vec<f64> = tan.iter().map(|&n| cfg.mu(n)).collect();
    let mut f_terms = Vec::new();
    let mut divisors = Vec::new();
    let mut gbar = vec![vec![0.0; d]; d];
    let mut min_divisor = f64::INFINITY;
    for t in quartic {
        if t.degree() != 4 {
            return Err(Error::Invariant("quartic data contains a non-quartic term".into()));
        }
        if t.is_resonant() {
            let idx: Vec<usize> = (0..d).filter(|&i| t.alpha[i] > 0).collect();
            match idx.as_slice() {
                [i] => gbar[*i][*i] = 2.0 * t.coef.re,
                [i, j] => {
                    gbar[*i][*j] = t.coef.re;
                    gbar[*j][*i] = t.coef.re;
                }
                _ => return Err(Error::Invariant("unexpected resonant monomial".into())),
            }
            continue;
        }
        let div: f64 = (0..d).map(|i| mu[i] * (t.alpha[i] as f64 - t.beta[i] as f64)).sum();
        if div.abs() < threshold {
            return Err(Error::SmallDivisor(format!("monomial z^{:?} zb^{:?}: divisor {div:e}", t.alpha, t.beta)));
        }
        min_divisor = min_divisor.min(div.abs());
        divisors.push((t.alpha.clone(), t.beta.clone(), div));
        f_terms.push(PolyTerm { coef: t.coef / (C64::i() * div), alpha: t.alpha.clone(), beta: t.beta.clone() });
    }
    let nmax = tan.iter().map(|n| n.abs()).max().unwrap() as f64;
    let divisor_ratio = if min_divisor.is_finite() { min_divisor / (cfg.m / (nmax * nmax + cfg.m).powf(1.5)) } else { f64::INFINITY };
    let mut nf = NormalFormData {
        tangential_set: tan.clone(),
        m: cfg.m,
        mu,
        gbar,
        f_terms,
        divisors,
        min_divisor,
        divisor_ratio,
        remainder_norm: 0.0,
        dzb: vec![],
        dz: vec![],
        d2: Default::default(),
    };
    nf.prepare();
    Ok(nf)
}

/// Normal form of the NLW tangential Hamiltonian.
pub fn normal_form(cfg: &NlwConfig) -> Result<NormalFormData> {
    birkhoff_transform(cfg, &quartic_hd(cfg), 1e-8)
}

impl NormalFormData {
    fn prepare(&mut self) {
        let d = self.mu.len();
        self.dzb = (0..d).map(|j| diff(&self.f_terms, j, true)).collect();
        self.dz = (0..d).map(|j| diff(&self.f_terms, j, false)).collect();
        let second = |first: &Vec<Vec<PolyTerm>>, bar: bool| -> Vec<Vec<Vec<PolyTerm>>> {
            first.iter().map(|f| (0..d).map(|j| diff(f, j, bar)).collect()).collect()
        };
        self.d2 = [second(&self.dzb, false), second(&self.dzb, true), second(&self.dz, false), second(&self.dz, true)];
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }

    /// z -> (zeta, zetab)
    pub fn transform<T: Scalar>(&self, z: &[T], zb: &[T]) -> (Vec<T>, Vec<T>) {
        let (pw, pwb) = (powers(z, 3), powers(zb, 3));
        let i = C64::i();
        let zeta = (0..self.d()).map(|j| z[j].add(&eval_terms(&self.dzb[j], &pw, &pwb, &z[0]).scale(i))).collect();
        let zetab = (0..self.d()).map(|j| zb[j].sub(&eval_terms(&self.dz[j], &pw, &pwb, &z[0]).scale(i))).collect();
        (zeta, zetab)
    }

    /// Jacobian blocks [d zeta_l / d z_j, d zeta_l / d zb_j, d zetab_l / d z_j, d zetab_l / d zb_j].
    pub fn jacobian<T: Scalar>(&self, z: &[T], zb: &[T]) -> [Vec<Vec<T>>; 4] {
        let d = self.d();
        let (pw, pwb) = (powers(z, 3), powers(zb, 3));
        let i = C64::i();
        let one = z[0].cst(C64::new(1.0, 0.0));
        let ev = |k: usize, l: usize, j: usize| eval_terms(&self.d2[k][l][j], &pw, &pwb, &z[0]);
        let id = |l: usize, j: usize| if l == j { one.clone() } else { one.zero_like() };
        let a = (0..d).map(|l| (0..d).map(|j| id(l, j).add(&ev(0, l, j).scale(i))).collect()).collect();
        let b = (0..d).map(|l| (0..d).map(|j| ev(1, l, j).scale(i)).collect()).collect();
        let c = (0..d).map(|l| (0..d).map(|j| ev(2, l, j).scale(-i)).collect()).collect();
        let e = (0..d).map(|l| (0..d).map(|j| id(l, j).sub(&ev(3, l, j).scale(i))).collect()).collect();
        [a, b, c, e]
    }

    /// (zeta - z, zetab - zb) evaluated directly, without the cancellation of a subtraction.
    pub fn offsets<T: Scalar>(&self, z: &[T], zb: &[T]) -> (Vec<T>, Vec<T>) {
        let (pw, pwb) = (powers(z, 3), powers(zb, 3));
        let i = C64::i();
        let e = (0..self.d()).map(|j| eval_terms(&self.dzb[j], &pw, &pwb, &z[0]).scale(i)).collect();
        let eb = (0..self.d()).map(|j| eval_terms(&self.dz[j], &pw, &pwb, &z[0]).scale(-i)).collect();
        (e, eb)
    }

    /// Jacobian blocks minus the identity.
    pub fn jacobian_offsets<T: Scalar>(&self, z: &[T], zb: &[T]) -> [Vec<Vec<T>>; 4] {
        let d = self.d();
        let (pw, pwb) = (powers(z, 3), powers(zb, 3));
        let i = C64::i();
        let ev = |k: usize, c: C64| -> Vec<Vec<T>> {
            (0..d).map(|l| (0..d).map(|j| eval_terms(&self.d2[k][l][j], &pw, &pwb, &z[0]).scale(c)).collect()).collect()
        };
        [ev(0, i), ev(1, i), ev(2, -i), ev(3, -i)]
    }

    /// Lambda_d(z) + Gbar_d(z) = sum mu |z|^2 + 1/2 sum gbar_ij |z_i|^2 |z_j|^2
    pub fn normal_form_value<T: Scalar>(&self, z: &[T], zb: &[T]) -> T {
        let d = self.d();
        let act: Vec<T> = (0..d).map(|i| z[i].mul(&zb[i])).collect();
        let mut acc = z[0].zero_like();
        for i in 0..d {
            acc = acc.add(&act[i].scale_re(self.mu[i]));
            for j in 0..d {
                acc = acc.add(&act[i].mul(&act[j]).scale_re(0.5 * self.gbar[i][j]));
            }
        }
        acc
    }

    /// Quartic part of Lambda_d(zeta) + G_d(zeta) - Lambda_d(z), by composition of the jet.
    pub fn transformed_quartic(&self, quartic: &[PolyTerm]) -> Vec<PolyTerm> {
        let d = self.d();
        let table = MonoTable::new(2 * d, 4);
        let z: Vec<Tps> = (0..d).map(|i| Tps::var(&table, i, C64::new(0.0, 0.0))).collect();
        let zb: Vec<Tps> = (0..d).map(|i| Tps::var(&table, d + i, C64::new(0.0, 0.0))).collect();
        let (zeta, zetab) = self.transform(&z, &zb);
        let gd = terms_tps(&table, quartic);
        let mut args = zeta.clone();
        args.extend(zetab.iter().cloned());
        let mut h = gd.compose(&args);
        for i in 0..d {
            h = h.add(&zeta[i].mul(&zetab[i]).scale_re(self.mu[i]));
            h = h.sub(&z[i].mul(&zb[i]).scale_re(self.mu[i]));
        }
        tps_to_terms(&h, d).into_iter().filter(|t| t.degree() == 4).collect()
    }

    /// Largest deviation of the Poisson brackets of the jet from the canonical ones at z.
    pub fn symplectic_defect(&self, z: &[C64]) -> f64 {
        let d = self.d();
        let zb: Vec<C64> = z.iter().map(|c| c.conj()).collect();
        let [a, b, _, _] = self.jacobian(z, &zb);
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut pz = C64::new(0.0, 0.0);
                let mut pzb = C64::new(0.0, 0.0);
                for k in 0..d {
                    pz += a[i][k] * b[j][k] - b[i][k] * a[j][k];
                    pzb += a[i][k] * a[j][k].conj() - b[i][k] * b[j][k].conj();
                }
                let delta = if i == j { 1.0 } else { 0.0 };
                worst = worst.max(pz.norm()).max((pzb - delta).norm());
            }
        }
        worst
    }

    /// Max over sampled points with |z_i| = a_i of |H_d(zeta(z)) - Lambda_d(z) - Gbar_d(z)|.
    pub fn remainder_estimate(&self, cfg: &NlwConfig, amps: &[f64], samples: usize, seed: u64) -> f64 {
        let d = self.d();
        let grid = SpaceGrid::new(cfg.n_space.max(2 * self.tangential_set.iter().map(|n| n.unsigned_abs() as usize).max().unwrap()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let z: Vec<C64> = (0..d).map(|i| C64::from_polar(amps[i], rng.gen_range(0.0..2.0 * PI))).collect();
            let zb: Vec<C64> = z.iter().map(|c| c.conj()).collect();
            let (zeta, zetab) = self.transform(&z, &zb);
            let mut h = C64::new(0.0, 0.0);
            for i in 0..d {
                h += zeta[i] * zetab[i] * self.mu[i];
            }
            let q: Vec<f64> = (0..d).map(|i| ((zeta[i] + zetab[i]) / (2.0 * self.mu[i]).sqrt()).re).collect();
            for &x in &grid.x {
                let u: f64 = (0..d).map(|i| q[i] * basis_value(self.tangential_set[i], x)).sum();
                h += cfg.g(u) * grid.weight;
            }
            worst = worst.max((h - self.normal_form_value(&z, &zb)).norm());
        }
        worst
    }
}

/// omega_i = mu_{n_i} + sum_j gbar_ij a_j^2 for f = u^3
pub fn modulated_frequencies(a: &[f64], tangential_set: &[i32], m: f64) -> Vec<f64> {
    let g = gbar_matrix(tangential_set, m);
    tangential_set
        .iter()
        .enumerate()
        .map(|(i, &n)| ((n * n) as f64 + m).sqrt() + (0..a.len()).map(|j| g[i][j] * a[j] * a[j]).sum::<f64>())
        .collect()
}

/// Rescaled Hamiltonian delta^-4 H_{delta a}(phi, delta^4 I, delta^2 x, delta^2 y).
#[derive(Clone, Debug, Serialize)]
pub struct ScaledHamiltonian {
    pub delta: f64,
    /// effective small parameter of the perturbation
    pub lambda: f64,
    /// twist delta^4 gbar
    pub twist: Vec<Vec<f64>>,
    /// scaling of the O(1), O(|I|), O(|I|^2) parts of the perturbation
    pub exponents: [u32; 3],
}

pub fn rescale_hamiltonian(delta: f64, nf: &NormalFormData) -> Result<ScaledHamiltonian> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("delta = {delta} must be positive")));
    }
    let d4 = delta.powi(4);
    let twist = nf.gbar.iter().map(|r| r.iter().map(|g| g * d4).collect()).collect();
    Ok(ScaledHamiltonian { delta, lambda: delta, twist, exponents: [1, 3, 5] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(tan: Vec<i32>) -> NlwConfig {
        NlwConfig::new(1.0, vec![1.0], tan, 8).unwrap()
    }

    /// gbar_ii = 9/(16 pi mu^2), gbar_ij = 3/(4 pi mu_i mu_j) for distinct nonzero |n|.
    fn gbar_oracle(tan: &[i32], m: f64) -> Vec<Vec<f64>> {
        let mu: Vec<f64> = tan.iter().map(|&n| ((n * n) as f64 + m).sqrt()).collect();
        (0..tan.len())
            .map(|i| (0..tan.len()).map(|j| 3.0 / (16.0 * PI) * if i == j { 3.0 } else { 4.0 } / (mu[i] * mu[j])).collect())
            .collect()
    }

    /// Frequency of the Duffing oscillator q'' + mu^2 q + c q^3 = 0 at action I, to first order.
    fn duffing_shift(g1111: f64, mu: f64, action: f64) -> f64 {
        // u = q psi_1, force c = g1111; amplitude A: I = mu A^2 / 2, shift = 3 c A^2 / (8 mu)
        let amp2 = 2.0 * action / mu;
        3.0 * g1111 * amp2 / (8.0 * mu)
    }

    #[test]
    fn gbar_single_mode() {
        let g = gbar_matrix(&[1], 1.0);
        assert!((g[0][0] - 9.0 / (32.0 * PI)).abs() < 1e-15);
        let shift = duffing_shift(3.0 / (4.0 * PI), 2f64.sqrt(), 1.0);
        assert!((g[0][0] - shift).abs() < 1e-15);
    }

    #[test]
    fn gbar_two_modes() {
        let g = gbar_matrix(&[1, 2], 1.0);
        let o = gbar_oracle(&[1, 2], 1.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((g[i][j] - o[i][j]).abs() < 1e-15);
            }
        }
        assert!((g[0][1] - 3.0 / (4.0 * PI * 10f64.sqrt())).abs() < 1e-15);
        assert_eq!(g[0][1], g[1][0]);
        let g3 = gbar_matrix(&[-3, 1, 5], 2.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g3[i][j], g3[j][i]);
                assert!(g3[i][j] > 0.0);
            }
        }
    }

    #[test]
    fn divisors() {
        assert!(matches!(small_divisor([2, 2, 3, 3], [1, -1, 1, -1], 1.0), Err(Error::ExcludedPattern(_))));
        let r = small_divisor([1, 1, 1, 3], [1, 1, 1, -1], 1.0).unwrap();
        assert!((r.value - (3.0 * 2f64.sqrt() - 10f64.sqrt())).abs() < 1e-15);
        assert!((r.value - 1.080_363_03).abs() < 1e-8);
        let f = small_divisor([1, 1, 1, 3], [-1, -1, -1, 1], 1.0).unwrap();
        assert_eq!(f.value, -r.value);
    }

    #[test]
    fn normal_form_single_mode() {
        let c = cfg(vec![1]);
        let q = quartic_hd(&c);
        let nf = birkhoff_transform(&c, &q, 1e-8).unwrap();
        assert!((nf.gbar[0][0] - 9.0 / (32.0 * PI)).abs() < 1e-12);
        let out = nf.transformed_quartic(&q);
        for t in out {
            if t.is_resonant() {
                assert!((t.coef - C64::new(nf.gbar[0][0] / 2.0, 0.0)).norm() < 1e-12);
            } else {
                assert!(t.coef.norm() < 1e-12, "{t:?}");
            }
        }
    }

    #[test]
    fn normal_form_two_modes() {
        let c = cfg(vec![1, 2]);
        let q = quartic_hd(&c);
        let nf = birkhoff_transform(&c, &q, 1e-8).unwrap();
        let o = gbar_oracle(&[1, 2], 1.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((nf.gbar[i][j] - o[i][j]).abs() < 1e-12);
            }
        }
        for t in nf.transformed_quartic(&q) {
            assert!(t.is_resonant() || t.coef.norm() < 1e-12, "{t:?}");
        }
        assert!(nf.min_divisor > 0.1);
    }

    #[test]
    fn already_normal_is_identity() {
        let c = cfg(vec![1]);
        let resonant: Vec<PolyTerm> = quartic_hd(&c).into_iter().filter(|t| t.is_resonant()).collect();
        let nf = birkhoff_transform(&c, &resonant, 1e-8).unwrap();
        assert!(nf.f_terms.is_empty());
        let z = [C64::new(0.1, 0.2)];
        let (zeta, _) = nf.transform(&z, &[z[0].conj()]);
        assert_eq!(zeta[0], z[0]);
    }

    #[test]
    fn jet_is_symplectic_to_fourth_order() {
        for tan in [vec![1], vec![1, 2]] {
            let c = cfg(tan.clone());
            let nf = normal_form(&c).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..20 {
                let z: Vec<C64> = tan.iter().map(|_| C64::from_polar(1e-2, rng.gen_range(0.0..6.28))).collect();
                assert!(nf.symplectic_defect(&z) <= 1e-10);
            }
        }
    }

    #[test]
    fn remainder_is_fifth_order() {
        let c = cfg(vec![1]);
        let nf = normal_form(&c).unwrap();
        let r1 = nf.remainder_estimate(&c, &[0.02], 16, 1);
        let r2 = nf.remainder_estimate(&c, &[0.01], 16, 1);
        // the degree-6 part dominates: halving the amplitude divides it by ~64
        assert!(r1 / r2 > 40.0, "ratio {}", r1 / r2);
    }

    #[test]
    fn frequencies() {
        assert_eq!(modulated_frequencies(&[0.0], &[1], 1.0), vec![2f64.sqrt()]);
        let w = modulated_frequencies(&[0.1], &[1], 1.0);
        assert!((w[0] - (2f64.sqrt() + 9.0 / (32.0 * PI) * 0.01)).abs() < 1e-15);
        assert!((w[0] - 1.415_109).abs() < 1e-6);
        let w0 = modulated_frequencies(&[0.1, 0.2], &[1, 2], 1.0);
        let w1 = modulated_frequencies(&[0.11, 0.2], &[1, 2], 1.0);
        assert!(w1[0] > w0[0] && w1[1] > w0[1]);
    }

    #[test]
    fn rescaling() {
        let nf = normal_form(&cfg(vec![1])).unwrap();
        let s = rescale_hamiltonian(1.0, &nf).unwrap();
        assert_eq!(s.twist, nf.gbar);
        let h = rescale_hamiltonian(0.5, &nf).unwrap();
        assert!((h.twist[0][0] - nf.gbar[0][0] / 16.0).abs() < 1e-16);
        assert!(rescale_hamiltonian(0.0, &nf).is_err());
    }
}
