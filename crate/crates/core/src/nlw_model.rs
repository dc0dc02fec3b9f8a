//! The 1D nonlinear wave equation u_tt - u_xx + m u + f(u) = 0 on [0, 2pi] with
//! periodic boundary conditions: eigenbasis, quartic tensor, gradient of G and
//! the rescaled torus perturbation consumed by the solvers.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode_space::Truncation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlwConfig {
    pub m: f64,
    /// coefficients c_3, c_4, ... of f(u) = sum c_p u^p
    pub f_coeffs: Vec<f64>,
    pub tangential_set: Vec<i32>,
    pub n_space: usize,
}

impl NlwConfig {
    pub fn new(m: f64, f_coeffs: Vec<f64>, tangential_set: Vec<i32>, n_space: usize) -> Result<Self> {
        let cfg = Self { m, f_coeffs, tangential_set, n_space };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0) {
            return Err(Error::Config(format!("m = {} must be positive", self.m)));
        }
        if self.tangential_set.is_empty() {
            return Err(Error::Config("tangential_set is empty".into()));
        }
        for (i, a) in self.tangential_set.iter().enumerate() {
            if a.unsigned_abs() as usize > self.n_space {
                return Err(Error::Config(format!("tangential index {a} exceeds N_space")));
            }
            for b in &self.tangential_set[i + 1..] {
                if a.abs() == b.abs() {
                    return Err(Error::Config(format!("tangential indices {a} and {b} have equal |n|")));
                }
            }
        }
        if self.f_coeffs.is_empty() {
            return Err(Error::Config("f_coeffs is empty".into()));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.tangential_set.len()
    }

    /// Highest power in f.
    pub fn degree(&self) -> usize {
        self.f_coeffs.len() + 2
    }

    pub fn mu(&self, n: i32) -> f64 {
        ((n * n) as f64 + self.m).sqrt()
    }

    pub fn f(&self, u: f64) -> f64 {
        self.f_coeffs.iter().enumerate().map(|(i, c)| c * u.powi(i as i32 + 3)).sum()
    }

    /// g with g' = f, g(0) = 0.
    pub fn g(&self, u: f64) -> f64 {
        self.f_coeffs.iter().enumerate().map(|(i, c)| c * u.powi(i as i32 + 4) / (i + 4) as f64).sum()
    }
}

/// zeta_n = n^2 + m.
pub fn eigenvalue(n: i32, m: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::Config(format!("m = {m} must be positive")));
    }
    Ok((n as f64).powi(2) + m)
}

/// psi_0 = 1/sqrt(2pi), psi_n = cos(nx)/sqrt(pi), psi_{-n} = sin(nx)/sqrt(pi).
pub fn basis_value(n: i32, x: f64) -> f64 {
    match n {
        0 => 1.0 / (2.0 * PI).sqrt(),
        n if n > 0 => (n as f64 * x).cos() / PI.sqrt(),
        n => ((-n) as f64 * x).sin() / PI.sqrt(),
    }
}

/// Exponential expansion of psi_n: list of (frequency, coefficient).
fn exp_terms(n: i32) -> Vec<(i32, num_complex::Complex64)> {
    use num_complex::Complex64 as C;
    let s = 1.0 / PI.sqrt();
    match n {
        0 => vec![(0, C::new(1.0 / (2.0 * PI).sqrt(), 0.0))],
        n if n > 0 => vec![(n, C::new(0.5 * s, 0.0)), (-n, C::new(0.5 * s, 0.0))],
        n => vec![(-n, C::new(0.0, -0.5 * s)), (n, C::new(0.0, 0.5 * s))],
    }
}

/// Integral of psi_i psi_j psi_k psi_l over [0, 2pi], by product-to-sum expansion.
pub fn quartic_coefficient(i: i32, j: i32, k: i32, l: i32) -> f64 {
    let (ti, tj, tk, tl) = (exp_terms(i), exp_terms(j), exp_terms(k), exp_terms(l));
    let mut acc = num_complex::Complex64::new(0.0, 0.0);
    for a in &ti {
        for b in &tj {
            for c in &tk {
                for e in &tl {
                    if a.0 + b.0 + c.0 + e.0 == 0 {
                        acc += a.1 * b.1 * c.1 * e.1;
                    }
                }
            }
        }
    }
    2.0 * PI * acc.re
}

/// True if some choice of signs makes i +- j +- k +- l vanish.
pub fn selection_rule(i: i32, j: i32, k: i32, l: i32) -> bool {
    let v = [i.abs(), j.abs(), k.abs(), l.abs()];
    (0..8).any(|s| {
        let sg = |b: usize| if s >> b & 1 == 1 { -1 } else { 1 };
        v[0] + sg(0) * v[1] + sg(1) * v[2] + sg(2) * v[3] == 0
    })
}

/// Nonzero g_ijkl over |indices| <= cutoff, keyed by sorted index tuples.
#[derive(Clone, Debug, Default)]
pub struct QuarticTensor {
    pub entries: BTreeMap<[i32; 4], f64>,
}

impl QuarticTensor {
    pub fn build(indices: &[i32]) -> Self {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        let mut entries = BTreeMap::new();
        for a in 0..idx.len() {
            for b in a..idx.len() {
                for c in b..idx.len() {
                    for e in c..idx.len() {
                        let key = [idx[a], idx[b], idx[c], idx[e]];
                        if !selection_rule(key[0], key[1], key[2], key[3]) {
                            continue;
                        }
                        let v = quartic_coefficient(key[0], key[1], key[2], key[3]);
                        if v.abs() > 1e-15 {
                            entries.insert(key, v);
                        }
                    }
                }
            }
        }
        Self { entries }
    }

    pub fn get(&self, i: i32, j: i32, k: i32, l: i32) -> f64 {
        let mut key = [i, j, k, l];
        key.sort_unstable();
        self.entries.get(&key).copied().unwrap_or(0.0)
    }
}

/// Uniform collocation grid on [0, 2pi) with trapezoid weights.
#[derive(Clone, Debug)]
pub struct SpaceGrid {
    pub x: Vec<f64>,
    pub weight: f64,
}

impl SpaceGrid {
    pub fn new(n_space: usize) -> Self {
        let m = 4 * n_space + 1;
        Self { x: (0..m).map(|l| 2.0 * PI * l as f64 / m as f64).collect(), weight: 2.0 * PI / m as f64 }
    }
}

/// Spatial mode list -N..=N in the order used by `gradient_g`.
pub fn space_modes(n_space: usize) -> Vec<i32> {
    let n = n_space as i32;
    (-n..=n).collect()
}

/// n -> integral of f(u) psi_n with u = sum q_n psi_n; `q[i]` belongs to mode i - N.
pub fn gradient_g(cfg: &NlwConfig, q: &[f64], ball: f64) -> Result<Vec<f64>> {
    let modes = space_modes(cfg.n_space);
    if q.len() != modes.len() {
        return Err(Error::Mismatch(format!("expected {} coefficients", modes.len())));
    }
    let norm: f64 = q.iter().zip(&modes).map(|(v, &n)| Truncation::weight(n.unsigned_abs() as usize, 2.0) * v.abs()).sum();
    if norm > ball {
        return Err(Error::BallOverflow(norm, ball));
    }
    let grid = SpaceGrid::new(cfg.n_space);
    let mut out = vec![0.0; modes.len()];
    for &x in &grid.x {
        let u: f64 = q.iter().zip(&modes).map(|(v, &n)| v * basis_value(n, x)).sum();
        let fu = cfg.f(u) * grid.weight;
        for (o, &n) in out.iter_mut().zip(&modes) {
            *o += fu * basis_value(n, x);
        }
    }
    Ok(out)
}

/// G(q) = integral of g(u), on the same grid as `gradient_g` (exact for cubic f).
pub fn potential_g(cfg: &NlwConfig, q: &[f64]) -> f64 {
    let modes = space_modes(cfg.n_space);
    let grid = SpaceGrid::new(cfg.n_space);
    grid.x
        .iter()
        .map(|&x| {
            let u: f64 = q.iter().zip(&modes).map(|(v, &n)| v * basis_value(n, x)).sum();
            cfg.g(u) * grid.weight
        })
        .sum()
}

/// H = sum (p_n^2 + zeta_n q_n^2)/2 + G(q) over spatial modes.
pub fn hamiltonian(cfg: &NlwConfig, q: &[f64], p: &[f64]) -> f64 {
    let modes = space_modes(cfg.n_space);
    let quad: f64 = modes
        .iter()
        .enumerate()
        .map(|(i, &n)| 0.5 * (p[i] * p[i] + ((n * n) as f64 + cfg.m) * q[i] * q[i]))
        .sum();
    quad + potential_g(cfg, q)
}

/// (H_d, H_inf): H_d carries the tangential modes alone, H_inf the rest.
pub fn hamiltonian_split(cfg: &NlwConfig, q: &[f64], p: &[f64]) -> (f64, f64) {
    let modes = space_modes(cfg.n_space);
    let tan: Vec<bool> = modes.iter().map(|n| cfg.tangential_set.contains(n)).collect();
    let mask = |v: &[f64], keep: bool| -> Vec<f64> {
        v.iter().zip(&tan).map(|(x, &t)| if t == keep { *x } else { 0.0 }).collect()
    };
    let (qd, pd) = (mask(q, true), mask(p, true));
    let h_d = hamiltonian(cfg, &qd, &pd);
    let (qn, pn) = (mask(q, false), mask(p, false));
    let quad_inf: f64 = modes
        .iter()
        .enumerate()
        .map(|(i, &n)| 0.5 * (pn[i] * pn[i] + ((n * n) as f64 + cfg.m) * qn[i] * qn[i]))
        .sum();
    (h_d, quad_inf + potential_g(cfg, q) - potential_g(cfg, &qd))
}

/// Spatial indices carried by each normal block x_k.
///
/// k >= 1 with +-k not tangential: (q_k, q_{-k}); k equal to |n| for a tangential n:
/// the partner q_{-n}; k = 0: q_0 unless 0 is tangential.
pub fn normal_packing(cfg: &NlwConfig, kmax: usize) -> Vec<Vec<i32>> {
    let tan = &cfg.tangential_set;
    (0..=kmax as i32)
        .map(|k| {
            if k == 0 {
                if tan.contains(&0) {
                    vec![]
                } else {
                    vec![0]
                }
            } else if let Some(&n) = tan.iter().find(|n| n.abs() == k) {
                vec![-n]
            } else {
                vec![k, -k]
            }
        })
        .collect()
}

/// Mode-space truncation induced by the tangential set.
pub fn truncation(cfg: &NlwConfig, q_max: i32, kmax: usize) -> Result<Truncation> {
    if kmax > cfg.n_space {
        return Err(Error::Config(format!("Kmax = {kmax} exceeds N_space = {}", cfg.n_space)));
    }
    let mults = normal_packing(cfg, kmax).iter().map(|v| v.len()).collect();
    Truncation::new(cfg.d(), q_max, kmax, mults)
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub positive: bool,
    pub distinct: bool,
    /// fitted mu_k / k at the largest k
    pub c: f64,
    /// mu_{k+l} - mu_k at the largest k, for l = 1..=3
    pub c_l: Vec<f64>,
    /// fitted decay exponent of |mu_{k+1} - mu_k - 1|
    pub xi: f64,
    pub degenerate_pairs: bool,
}

pub fn check_hypotheses(cfg: &NlwConfig, kmax: usize) -> HypothesisReport {
    let mu = |k: usize| ((k * k) as f64 + cfg.m).sqrt();
    let positive = (0..=kmax).all(|k| mu(k) > 0.0);
    let distinct = (0..kmax).all(|k| mu(k + 1) > mu(k));
    let c = mu(kmax) / kmax as f64;
    let c_l = (1..=3).map(|l| mu(kmax) - mu(kmax - l)).collect();
    let dev = |k: usize| (mu(k + 1) - mu(k) - 1.0).abs();
    let (k1, k2) = (kmax / 10, kmax / 2);
    let xi = -(dev(k2) / dev(k1)).ln() / (k2 as f64 / k1 as f64).ln();
    let packing = normal_packing(cfg, kmax.min(cfg.n_space));
    let degenerate_pairs = packing.iter().enumerate().all(|(k, v)| {
        let tangential = cfg.tangential_set.iter().any(|n| n.unsigned_abs() as usize == k);
        if k == 0 {
            v.len() == usize::from(!tangential)
        } else {
            v.len() == if tangential { 1 } else { 2 }
        }
    });
    HypothesisReport { positive, distinct, c, c_l, xi, degenerate_pairs }
}

mod rescaled;
pub use rescaled::*;

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic(n_space: usize) -> NlwConfig {
        NlwConfig::new(1.0, vec![1.0], vec![1], n_space).unwrap()
    }

    fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        let h = 2.0 * PI / n as f64;
        let mut acc = f(0.0) + f(2.0 * PI);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn eigenvalues() {
        assert_eq!(eigenvalue(0, 1.0).unwrap(), 1.0);
        assert_eq!(eigenvalue(2, 1.0).unwrap(), 5.0);
        assert_eq!(eigenvalue(-3, 2.0).unwrap(), 11.0);
        assert!(eigenvalue(1, 0.0).is_err());
    }

    #[test]
    fn basis_orthonormal() {
        let one = simpson(|x| basis_value(1, x).powi(2), 2000);
        assert!((one - 1.0).abs() < 1e-12);
        let cross = simpson(|x| basis_value(1, x) * basis_value(-1, x), 2000);
        assert!(cross.abs() < 1e-12);
        assert_eq!(basis_value(0, 1.234), 1.0 / (2.0 * PI).sqrt());
    }

    #[test]
    fn quartic_matches_quadrature() {
        assert!((quartic_coefficient(0, 0, 0, 0) - 1.0 / (2.0 * PI)).abs() < 1e-14);
        assert!((quartic_coefficient(1, 1, 1, 1) - 3.0 / (4.0 * PI)).abs() < 1e-14);
        assert!(!selection_rule(1, 2, 4, 8));
        assert_eq!(quartic_coefficient(1, 2, 4, 8), 0.0);
        for &(i, j, k, l) in &[(1, -1, 2, -2), (1, 2, 3, 0), (-1, -2, 3, 0), (2, 2, -1, -3), (1, 1, 1, 3), (-2, 1, 1, 0)] {
            let quad = simpson(|x| basis_value(i, x) * basis_value(j, x) * basis_value(k, x) * basis_value(l, x), 4000);
            assert!((quad - quartic_coefficient(i, j, k, l)).abs() < 1e-12, "{i} {j} {k} {l}");
        }
    }

    #[test]
    fn tensor_symmetric_and_selected() {
        let t = QuarticTensor::build(&space_modes(4));
        for (key, v) in &t.entries {
            assert!(selection_rule(key[0], key[1], key[2], key[3]));
            assert!((t.get(key[3], key[1], key[0], key[2]) - v).abs() == 0.0);
        }
    }

    #[test]
    fn gradient_single_mode() {
        let cfg = cubic(4);
        let modes = space_modes(4);
        let c = 0.7;
        let mut q = vec![0.0; modes.len()];
        q[4 + 1] = c;
        let g = gradient_g(&cfg, &q, 1e3).unwrap();
        for (i, &n) in modes.iter().enumerate() {
            let want = match n {
                1 => 3.0 * c * c * c / (4.0 * PI),
                3 => c * c * c / (4.0 * PI),
                _ => 0.0,
            };
            assert!((g[i] - want).abs() < 1e-14, "n={n}");
        }
        let q2: Vec<f64> = q.iter().map(|v| 2.0 * v).collect();
        let g2 = gradient_g(&cfg, &q2, 1e3).unwrap();
        for (a, b) in g2.iter().zip(&g) {
            assert!((a - 8.0 * b).abs() < 1e-13);
        }
        assert!(gradient_g(&cfg, &vec![0.0; modes.len()], 1.0).unwrap().iter().all(|v| *v == 0.0));
        assert!(matches!(gradient_g(&cfg, &q2, 0.1), Err(Error::BallOverflow(..))));
    }

    #[test]
    fn gradient_is_derivative_of_potential() {
        let cfg = NlwConfig::new(1.0, vec![1.0, 0.3], vec![1], 3).unwrap();
        let q: Vec<f64> = (0..7).map(|i| 0.1 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let g = gradient_g(&cfg, &q, 1e3).unwrap();
        let h = 1e-5;
        for n in 0..7 {
            let mut a = q.clone();
            let mut b = q.clone();
            a[n] += h;
            b[n] -= h;
            let fd = (potential_g(&cfg, &a) - potential_g(&cfg, &b)) / (2.0 * h);
            assert!((fd - g[n]).abs() <= 1e-6, "n={n} fd={fd} g={}", g[n]);
        }
        let cfg3 = cubic(3);
        let g3 = gradient_g(&cfg3, &q, 1e3).unwrap();
        for n in 0..7 {
            let mut a = q.clone();
            let mut b = q.clone();
            a[n] += h;
            b[n] -= h;
            let fd = (potential_g(&cfg3, &a) - potential_g(&cfg3, &b)) / (2.0 * h);
            assert!((fd - g3[n]).abs() <= 1e-6, "n={n}");
        }
    }

    #[test]
    fn split_reproduces_hamiltonian() {
        let cfg = NlwConfig::new(1.0, vec![1.0], vec![1, -2], 4).unwrap();
        for seed in 0..5 {
            let q: Vec<f64> = (0..9).map(|i| 0.3 * (((i * 13 + seed * 7) % 11) as f64 / 11.0 - 0.5)).collect();
            let p: Vec<f64> = (0..9).map(|i| 0.2 * (((i * 5 + seed * 3) % 7) as f64 / 7.0 - 0.5)).collect();
            let (hd, hi) = hamiltonian_split(&cfg, &q, &p);
            assert!((hd + hi - hamiltonian(&cfg, &q, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn hypotheses_for_unit_mass() {
        let cfg = NlwConfig::new(1.0, vec![1.0], vec![1], 10).unwrap();
        let r = check_hypotheses(&cfg, 1000);
        assert!(r.positive && r.distinct && r.degenerate_pairs);
        assert!((r.c - 1.0).abs() < 1e-5);
        assert!((r.c_l[0] - 1.0).abs() < 1e-5);
        assert!(r.xi >= 1.0, "xi = {}", r.xi);
        let packing = normal_packing(&cfg, 3);
        assert_eq!(packing, vec![vec![0], vec![-1], vec![2, -2], vec![3, -3]]);
    }

    #[test]
    fn rejects_equal_moduli() {
        assert!(NlwConfig::new(1.0, vec![1.0], vec![2, -2], 4).is_err());
        assert!(NlwConfig::new(-1.0, vec![1.0], vec![1], 4).is_err());
    }

    proptest::proptest! {
        #[test]
        fn quartic_symmetric_and_selected(i in -5i32..=5, j in -5i32..=5, k in -5i32..=5, l in -5i32..=5) {
            let g = quartic_coefficient(i, j, k, l);
            for p in [(j, i, k, l), (k, j, i, l), (l, j, k, i), (i, k, l, j)] {
                proptest::prop_assert!((quartic_coefficient(p.0, p.1, p.2, p.3) - g).abs() < 1e-13);
            }
            if !selection_rule(i, j, k, l) {
                proptest::prop_assert!(g.abs() < 1e-13);
            }
        }
    }
}
