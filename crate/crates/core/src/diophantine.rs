//! Admissible frequencies: membership in Omega_n(K), Omega*(K) and Monte Carlo estimates
//! of the excluded measure.
//!
//! |q| is the l1 norm. Enumeration never leaves |q|_inf <= q_cap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nlw_model::{normal_packing, NlwConfig};
use crate::rg_core::ClusterLevel;

#[derive(Clone, Debug, Serialize)]
pub struct DiophantineParams {
    pub k: f64,
    pub nu: f64,
    pub eta: f64,
    pub max_level: usize,
    pub omega_box: Vec<(f64, f64)>,
    pub xi: f64,
    pub q_cap: i32,
}

pub fn default_nu(d: usize, xi: f64) -> f64 {
    d as f64 + 2.0 + (2.0 / xi).ceil()
}

impl DiophantineParams {
    pub fn new(k: f64, omega_box: Vec<(f64, f64)>, max_level: usize) -> Self {
        let d = omega_box.len();
        Self { k, nu: default_nu(d, 1.0), eta: 0.5, max_level, omega_box, xi: 1.0, q_cap: 32 }
    }

    pub fn d(&self) -> usize {
        self.omega_box.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if d == 0 {
            return Err(Error::Config("frequency box is empty".into()));
        }
        if !(self.k > 0.0) {
            return Err(Error::Config(format!("K must be positive, got {}", self.k)));
        }
        if !(self.nu > d as f64 + 1.0) {
            return Err(Error::Config(format!("nu = {} must exceed d + 1 = {}", self.nu, d + 1)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta must lie in (0,1), got {}", self.eta)));
        }
        if self.q_cap < 1 {
            return Err(Error::Config("q_cap must be at least 1".into()));
        }
        if self.omega_box.iter().any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Config("frequency box needs finite intervals lo < hi".into()));
        }
        Ok(())
    }

    /// Theoretical range K eta^{-n/nu} of level n.
    pub fn range(&self, n: usize) -> f64 {
        self.k * self.eta.powf(-(n as f64) / self.nu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Target {
    Single { k: usize },
    Sum { k: usize, k2: usize },
    Diff { k: usize, k2: usize },
    /// mu_k - mu_{k-j} for some k beyond the listed clusters, or its limit j
    Tail { j: usize, k: Option<u64> },
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub level: usize,
    pub q: Vec<i32>,
    pub target: Target,
    pub distance: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Membership {
    pub member: bool,
    pub witness: Option<Witness>,
    pub cap_limited: bool,
}

/// Differences mu_k - mu_{k-j}, mu_k = sqrt(k^2 + m), for k >= k0 and 1 <= j <= jmax,
/// together with their limits j.
#[derive(Clone, Copy, Debug)]
pub struct DiffTail {
    pub m: f64,
    pub k0: u64,
    pub jmax: usize,
}

impl DiffTail {
    fn f(&self, j: f64, k: f64) -> f64 {
        let a = (k * k + self.m).sqrt();
        let b = ((k - j) * (k - j) + self.m).sqrt();
        (2.0 * k * j - j * j) / (a + b)
    }

    fn nearest(&self, x: f64) -> (Target, f64) {
        let mut best = (Target::Tail { j: 0, k: None }, f64::INFINITY);
        for j in [x.floor(), x.ceil()] {
            if j < 1.0 || j > self.jmax as f64 {
                continue;
            }
            let ju = j as usize;
            if (x - j).abs() < best.1 {
                best = (Target::Tail { j: ju, k: None }, (x - j).abs());
            }
            let lo0 = self.k0.max(ju as u64);
            let (mut lo, mut hi) = (lo0, 1u64 << 52);
            // first k with f(j, k) >= x, f increasing in k
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if self.f(j, mid as f64) >= x {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            for k in [lo.saturating_sub(1).max(lo0), lo] {
                let dd = (self.f(j, k as f64) - x).abs();
                if dd < best.1 {
                    best = (Target::Tail { j: ju, k: Some(k) }, dd);
                }
            }
        }
        best
    }
}

/// Cluster hulls of one level, by block index k. `reach` bounds from below every cluster
/// point that is not listed; distances are exact only for x < reach.
#[derive(Clone, Debug)]
pub struct ClusterSet {
    pub clusters: Vec<(usize, f64, f64)>,
    pub tail: Option<DiffTail>,
    pub reach: f64,
    single: Vec<(f64, f64)>,
    pair: Vec<(f64, f64)>,
}

fn merge(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (lo, hi) in v {
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

fn dist_sorted(iv: &[(f64, f64)], x: f64) -> f64 {
    let p = iv.partition_point(|c| c.0 <= x);
    let mut best = f64::INFINITY;
    if p > 0 {
        let (lo, hi) = iv[p - 1];
        best = best.min((lo - x).max(x - hi).max(0.0));
    }
    if p < iv.len() {
        best = best.min(iv[p].0 - x);
    }
    best
}

fn interval_dist(lo: f64, hi: f64, x: f64) -> f64 {
    (lo - x).max(x - hi).max(0.0)
}

fn diff_hull(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let lo = (a.0 - b.1).max(b.0 - a.1).max(0.0);
    let hi = (a.1 - b.0).max(b.1 - a.0);
    (lo, hi)
}

impl ClusterSet {
    pub fn new(clusters: Vec<(usize, f64, f64)>) -> Self {
        let single = merge(clusters.iter().map(|&(_, lo, hi)| (lo, hi)).collect());
        let mut pair = Vec::with_capacity(clusters.len() * clusters.len());
        for (i, a) in clusters.iter().enumerate() {
            for b in &clusters[i..] {
                pair.push((a.1 + b.1, a.2 + b.2));
                pair.push(diff_hull((a.1, a.2), (b.1, b.2)));
            }
        }
        Self { clusters, tail: None, reach: f64::INFINITY, single, pair: merge(pair) }
    }

    pub fn from_level(level: &ClusterLevel) -> Self {
        Self::new(level.clusters.iter().map(|c| (c.k, c.interval.0, c.interval.1)).collect())
    }

    /// Distance from x to the union of all cluster hulls and all |C +- C'| hulls.
    pub fn distance(&self, x: f64) -> f64 {
        let d = dist_sorted(&self.single, x).min(dist_sorted(&self.pair, x));
        match &self.tail {
            Some(t) => d.min(t.nearest(x).1),
            None => d,
        }
    }

    /// A target attaining the distance from x.
    pub fn nearest(&self, x: f64) -> (Target, f64) {
        let mut best = (Target::Single { k: usize::MAX }, f64::INFINITY);
        let mut consider = |t: Target, d: f64| {
            if d < best.1 {
                best = (t, d);
            }
        };
        for (i, a) in self.clusters.iter().enumerate() {
            consider(Target::Single { k: a.0 }, interval_dist(a.1, a.2, x));
            for b in &self.clusters[i..] {
                consider(Target::Sum { k: a.0, k2: b.0 }, interval_dist(a.1 + b.1, a.2 + b.2, x));
                let (lo, hi) = diff_hull((a.1, a.2), (b.1, b.2));
                consider(Target::Diff { k: a.0, k2: b.0 }, interval_dist(lo, hi, x));
            }
        }
        if let Some(t) = &self.tail {
            let (tg, d) = t.nearest(x);
            consider(tg, d);
        }
        best
    }
}

/// Unperturbed NLW clusters: one point mu_k per normal block k <= kmax, plus the exact
/// differences of the blocks beyond kmax.
pub fn nlw_clusters(cfg: &NlwConfig, kmax: usize) -> ClusterSet {
    let packing = normal_packing(cfg, kmax);
    let mu = |k: usize| (k as f64 * k as f64 + cfg.m).sqrt();
    let clusters: Vec<(usize, f64, f64)> =
        packing.iter().enumerate().filter(|(_, p)| !p.is_empty()).map(|(k, _)| (k, mu(k), mu(k))).collect();
    let mut set = ClusterSet::new(clusters);
    set.tail = Some(DiffTail { m: cfg.m, k0: kmax as u64 + 1, jmax: kmax + 1 });
    set.reach = mu(kmax + 1);
    set
}

/// Half of the nonzero lattice points of the cap box (q and -q give the same |omega.q|).
pub fn half_lattice(d: usize, cap: i32) -> Vec<Vec<i32>> {
    let side = (2 * cap + 1) as usize;
    let mut out = Vec::new();
    for mut j in 0..side.pow(d as u32) {
        let mut q = vec![0; d];
        for c in q.iter_mut().rev() {
            *c = (j % side) as i32 - cap;
            j /= side;
        }
        if q.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0) {
            out.push(q);
        }
    }
    out
}

fn l1(q: &[i32]) -> f64 {
    q.iter().map(|c| c.unsigned_abs() as f64).sum()
}

fn dot(omega: &[f64], q: &[i32]) -> f64 {
    omega.iter().zip(q).map(|(w, &c)| w * c as f64).sum()
}

/// Omega_n(K): d(|omega.q|, targets) > K|q|^{-nu} for 0 < |q| < range, enumerated within
/// the cap box. `range` defaults to K eta^{-n/nu}.
pub fn omega_n_member_in(omega: &[f64], set: &ClusterSet, n: usize, range: f64, prm: &DiophantineParams) -> Membership {
    let cap_limited = range > prm.q_cap as f64 + 1.0;
    for q in half_lattice(prm.d(), prm.q_cap) {
        let nq = l1(&q);
        if nq >= range {
            continue;
        }
        let x = dot(omega, &q).abs();
        let bound = prm.k * nq.powf(-prm.nu);
        let dist = set.distance(x);
        if dist <= bound {
            let (target, distance) = set.nearest(x);
            return Membership { member: false, witness: Some(Witness { level: n, q, target, distance, bound }), cap_limited };
        }
    }
    Membership { member: true, witness: None, cap_limited }
}

pub fn omega_n_member(omega: &[f64], level: &ClusterLevel, prm: &DiophantineParams) -> Membership {
    omega_n_member_in(omega, &ClusterSet::from_level(level), level.n, prm.range(level.n), prm)
}

/// Omega*(K) = intersection over all levels. Levels 1..=N use their own clusters; beyond the
/// last supplied level its clusters stand in for the converged ones, whose range is unbounded,
/// so that final condition runs over the whole cap box.
pub fn omega_star_member(omega: &[f64], history: &[ClusterSet], prm: &DiophantineParams) -> Membership {
    let n_last = history.len().min(prm.max_level.max(1));
    for (n, set) in history.iter().enumerate().take(n_last).skip(1) {
        let m = omega_n_member_in(omega, set, n, prm.range(n), prm);
        if !m.member {
            return m;
        }
    }
    let last = &history[n_last - 1];
    let mut m = omega_n_member_in(omega, last, n_last, f64::INFINITY, prm);
    m.cap_limited = true;
    m
}

/// omega outside Sigma*(K): on each shell Z_n the distances exceed 2K|q|^{-nu}.
pub fn outside_sigma_star(omega: &[f64], history: &[ClusterSet], prm: &DiophantineParams) -> bool {
    let kn = prm.k.powf(1.0 / prm.nu);
    let shell = |nq: f64| -> usize {
        // smallest n >= 1 with |q| < K^{1/nu} eta^{-n/nu}
        let t = (nq / kn).powf(prm.nu).ln() / (1.0 / prm.eta).ln();
        (t.floor() as i64 + 1).max(1) as usize
    };
    for q in half_lattice(prm.d(), prm.q_cap) {
        let nq = l1(&q);
        let n = shell(nq).min(history.len() - 1);
        let x = dot(omega, &q).abs();
        if history[n].distance(x) <= 2.0 * prm.k * nq.powf(-prm.nu) {
            return false;
        }
    }
    true
}

/// Smallest K at which omega leaves Omega*(K): excluded at K iff K >= K*.
pub fn critical_k(omega: &[f64], history: &[ClusterSet], prm: &DiophantineParams, lattice: &[Vec<i32>]) -> f64 {
    let n_last = history.len().min(prm.max_level.max(1));
    let last = &history[n_last - 1];
    let mut kstar = f64::INFINITY;
    for q in lattice {
        let nq = l1(q);
        let x = dot(omega, q).abs();
        let w = nq.powf(prm.nu);
        kstar = kstar.min(last.distance(x) * w);
        for (n, set) in history.iter().enumerate().take(n_last).skip(1) {
            // level n tests q only while |q| < K eta^{-n/nu}
            let floor = nq * prm.eta.powf(n as f64 / prm.nu);
            if floor >= kstar {
                continue;
            }
            let kn = (set.distance(x) * w).max(floor * (1.0 + f64::EPSILON));
            kstar = kstar.min(kn);
        }
    }
    kstar
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureRow {
    pub k: f64,
    pub excluded_fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: usize,
    pub cap_limited_count: usize,
}

pub fn wilson(successes: usize, n: usize) -> (f64, f64) {
    let z = 1.959963984540054;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let den = 1.0 + z * z / nf;
    let c = (p + z * z / (2.0 * nf)) / den;
    let h = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / den;
    ((c - h).max(0.0), (c + h).min(1.0))
}

pub fn sample_omega(prm: &DiophantineParams, seed: u64, i: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    prm.omega_box.iter().map(|&(a, b)| a + (b - a) * rng.gen::<f64>()).collect()
}

/// Excluded fraction of the box for every K of `ks`. Samples whose verdict is "member" are
/// counted as cap-limited, since conditions beyond the cap box are not checked.
pub fn measure_estimate(prm: &DiophantineParams, history: &[ClusterSet], ks: &[f64], samples: usize, seed: u64) -> Result<Vec<MeasureRow>> {
    prm.validate()?;
    if samples < 1000 {
        return Err(Error::Config(format!("measure needs at least 1000 samples, got {samples}")));
    }
    if history.is_empty() {
        return Err(Error::Config("no cluster levels supplied".into()));
    }
    let top: f64 = prm.omega_box.iter().map(|&(a, b)| a.abs().max(b.abs()) * prm.q_cap as f64).sum();
    if let Some(s) = history.iter().find(|s| s.reach <= top) {
        return Err(Error::Config(format!("cluster list reaches only {} but |omega.q| goes up to {}", s.reach, top)));
    }
    let lattice = half_lattice(prm.d(), prm.q_cap);
    let kstar: Vec<f64> =
        (0..samples as u64).map(|i| critical_k(&sample_omega(prm, seed, i), history, prm, &lattice)).collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let excluded = kstar.iter().filter(|&&ks| k >= ks).count();
            let (ci_low, ci_high) = wilson(excluded, samples);
            MeasureRow {
                k,
                excluded_fraction: excluded as f64 / samples as f64,
                ci_low,
                ci_high,
                samples,
                cap_limited_count: samples - excluded,
            }
        })
        .collect())
}

/// Least-squares slope of log(fraction) against log K over rows with a nonzero fraction.
pub fn measure_slope(rows: &[MeasureRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.excluded_fraction > 0.0 && r.k > 0.0).map(|r| (r.k.ln(), r.excluded_fraction.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

pub fn write_csv<W: std::io::Write>(rows: &[MeasureRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["K", "excluded_fraction", "ci_low", "ci_high", "samples", "cap_limited_count"])?;
    for r in rows {
        w.write_record([
            format!("{:.16e}", r.k),
            format!("{:.16e}", r.excluded_fraction),
            format!("{:.16e}", r.ci_low),
            format!("{:.16e}", r.ci_high),
            r.samples.to_string(),
            r.cap_limited_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> ClusterSet {
        ClusterSet::new(vec![(1, 2f64.sqrt(), 2f64.sqrt()), (2, 5f64.sqrt(), 5f64.sqrt())])
    }

    fn toy_params(k: f64) -> DiophantineParams {
        DiophantineParams { nu: 6.0, ..DiophantineParams::new(k, vec![(1.0, 2.0), (1.0, 2.0)], 3) }
    }

    #[test]
    fn merged_distance_matches_scan() {
        let s = toy();
        for i in 0..200 {
            let x = 0.037 * i as f64;
            assert!((s.distance(x) - s.nearest(x).1).abs() < 1e-15);
        }
    }

    #[test]
    fn golden_toy_member_within_range() {
        let omega = [1.0, (1.0 + 5f64.sqrt()) / 2.0];
        let prm = toy_params(1e-3);
        let hist = vec![toy(); 4];
        for n in 1..=3 {
            let m = omega_n_member_in(&omega, &hist[n], n, prm.range(n), &prm);
            assert!(m.member);
            assert!(!m.cap_limited);
        }
        // beyond the theoretical ranges omega.(1,-2) = -sqrt 5 sits on a cluster
        let m = omega_star_member(&omega, &hist, &prm);
        let w = m.witness.unwrap();
        assert_eq!(w.q, vec![1, -2]);
        assert_eq!(w.target, Target::Single { k: 2 });
    }

    #[test]
    fn exact_resonance_is_excluded_with_witness() {
        // omega.(1,0) = sqrt 2
        let omega = [2f64.sqrt(), 1.3];
        let prm = toy_params(1e-3);
        let m = omega_star_member(&omega, &vec![toy(); 4], &prm);
        assert!(!m.member);
        let w = m.witness.unwrap();
        assert!(w.distance <= w.bound);
        let hit = ClusterSet::new(vec![(1, 2f64.sqrt(), 2f64.sqrt())]);
        let x = dot(&omega, &w.q).abs();
        assert!(hit.distance(x) < 1e-12 || w.distance < 1e-12);
    }

    #[test]
    fn rationally_dependent_omega_fails() {
        // omega.(2,-1) = 0 hits |C_k - C_k| = 0
        let omega = [1.2, 2.4];
        let m = omega_star_member(&omega, &vec![toy(); 4], &toy_params(1e-6));
        assert!(!m.member);
        assert_eq!(m.witness.unwrap().distance, 0.0);
    }

    #[test]
    fn critical_k_agrees_with_membership() {
        let hist = vec![toy(); 4];
        let prm = toy_params(1.0);
        let lat = half_lattice(2, prm.q_cap);
        for i in 0..40 {
            let omega = sample_omega(&prm, 7, i);
            let ks = critical_k(&omega, &hist, &prm, &lat);
            for f in [0.5, 0.999, 1.001, 2.0] {
                let p = DiophantineParams { k: ks * f, ..prm.clone() };
                assert_eq!(omega_star_member(&omega, &hist, &p).member, f < 1.0, "sample {i} factor {f}");
            }
        }
    }

    #[test]
    fn nlw_tail_is_exact() {
        let cfg = NlwConfig::new(1.0, vec![1.0], vec![1, 2], 8).unwrap();
        let small = nlw_clusters(&cfg, 40);
        let big = nlw_clusters(&cfg, 400);
        let mu = |k: f64| (k * k + 1.0).sqrt();
        for k in [45.0, 80.0, 300.0] {
            for j in [1.0, 3.0, 7.0] {
                assert!(small.distance(mu(k) - mu(k - j)) < 1e-12);
            }
        }
        for i in 0..500 {
            let x = 0.5 + 0.0371 * i as f64;
            assert!((small.distance(x) - big.distance(x)).abs() < 1e-13, "x = {x}");
        }
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let (lo, hi) = wilson(30, 1000);
        assert!(lo < 0.03 && 0.03 < hi);
        assert!(wilson(0, 1000).0 < 1e-15);
    }

    #[test]
    fn zero_k_row_is_empty_and_reruns_identical() {
        let cfg = NlwConfig::new(1.0, vec![1.0], vec![1, 2], 8).unwrap();
        let hist = vec![nlw_clusters(&cfg, 40); 3];
        let prm = DiophantineParams { q_cap: 6, ..DiophantineParams::new(1e-3, vec![(1.0, 2.0), (1.0, 2.0)], 2) };
        let ks = [0.0, 1e-4, 1e-3];
        let a = measure_estimate(&prm, &hist, &ks, 1000, 3).unwrap();
        let b = measure_estimate(&prm, &hist, &ks, 1000, 3).unwrap();
        assert_eq!(a[0].excluded_fraction, 0.0);
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_csv(&a, &mut ba).unwrap();
        write_csv(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(DiophantineParams { nu: 2.5, ..toy_params(1.0) }.validate().is_err());
        assert!(toy_params(0.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_k(w1 in 1.0f64..2.0, w2 in 1.0f64..2.0, k in 1e-6f64..1e-1, f in 0.01f64..1.0) {
            let hist = vec![toy(); 4];
            let prm = DiophantineParams { q_cap: 8, ..toy_params(k) };
            let small = DiophantineParams { k: k * f, ..prm.clone() };
            let omega = [w1, w2];
            if omega_star_member(&omega, &hist, &prm).member {
                prop_assert!(omega_star_member(&omega, &hist, &small).member);
            }
        }

        #[test]
        fn sigma_star_complement_propagates(w1 in 1.0f64..2.0, w2 in 1.0f64..2.0, k in 1e-6f64..1e-2, shift in -1.0f64..1.0) {
            let prm = DiophantineParams { q_cap: 8, ..toy_params(k) };
            // cluster drift below K|q|^{-nu} on the enumerated box
            let drift = 0.5 * k * (2.0 * prm.q_cap as f64).powf(-prm.nu) * shift;
            let moved = ClusterSet::new(vec![(1, 2f64.sqrt() + drift, 2f64.sqrt() + drift), (2, 5f64.sqrt() - drift, 5f64.sqrt())]);
            let base = vec![toy(); 4];
            let hist = vec![toy(), moved.clone(), moved.clone(), moved];
            let omega = [w1, w2];
            if outside_sigma_star(&omega, &base, &prm) {
                prop_assert!(omega_star_member(&omega, &hist, &prm).member);
            }
        }
    }
}
