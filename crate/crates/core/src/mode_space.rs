//! Truncated Fourier/mode spaces, weighted norms, reality structure and diagonal operators.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Cutoffs of the torus Fourier space and of the normal-mode space.
///
/// `mults[k]` is the multiplicity d_k of normal mode k; a zero entry means the
/// mode is absent (it belongs to the tangential set).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub d: usize,
    pub q_max: i32,
    pub kmax: usize,
    pub mults: Vec<usize>,
}

impl Truncation {
    pub fn new(d: usize, q_max: i32, kmax: usize, mults: Vec<usize>) -> Result<Self> {
        if d == 0 || q_max < 1 || kmax < 1 {
            return Err(Error::Config("cutoffs must be >= 1".into()));
        }
        if mults.len() != kmax + 1 {
            return Err(Error::Config(format!(
                "mults has {} entries, expected {}",
                mults.len(),
                kmax + 1
            )));
        }
        if mults.iter().all(|&m| m == 0) {
            return Err(Error::Config("no normal modes".into()));
        }
        Ok(Self { d, q_max, kmax, mults })
    }

    /// Number of q with |q|_inf <= Q.
    pub fn n_modes(&self) -> usize {
        (2 * self.q_max as usize + 1).pow(self.d as u32)
    }

    /// Dimension of the normal block space (sum of d_k).
    pub fn block_dim(&self) -> usize {
        self.mults.iter().sum()
    }

    /// Offset of the k-block in a block vector.
    pub fn block_offset(&self, k: usize) -> usize {
        self.mults[..k].iter().sum()
    }

    /// Normal mode k and component index for a block coordinate.
    pub fn block_coord(&self, c: usize) -> (usize, usize) {
        let mut off = 0;
        for (k, &m) in self.mults.iter().enumerate() {
            if c < off + m {
                return (k, c - off);
            }
            off += m;
        }
        panic!("block coordinate {c} out of range")
    }

    /// Normal modes that are present.
    pub fn normal_modes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.kmax).filter(move |&k| self.mults[k] > 0)
    }

    /// q vector for a mode index (lexicographic, first component most significant).
    pub fn q_of(&self, mut idx: usize) -> Vec<i32> {
        let w = 2 * self.q_max as usize + 1;
        let mut q = vec![0; self.d];
        for i in (0..self.d).rev() {
            q[i] = (idx % w) as i32 - self.q_max;
            idx /= w;
        }
        q
    }

    pub fn index_of(&self, q: &[i32]) -> Option<usize> {
        let w = 2 * self.q_max as usize + 1;
        let mut idx = 0;
        for &c in q {
            if c.abs() > self.q_max {
                return None;
            }
            idx = idx * w + (c + self.q_max) as usize;
        }
        Some(idx)
    }

    /// Index of -q.
    pub fn neg_index(&self, idx: usize) -> usize {
        self.n_modes() - 1 - idx
    }

    pub fn zero_index(&self) -> usize {
        (self.n_modes() - 1) / 2
    }

    pub fn omega_dot(&self, omega: &[f64], idx: usize) -> f64 {
        self.q_of(idx).iter().zip(omega).map(|(&q, &w)| q as f64 * w).sum()
    }

    pub fn weight(k: usize, s: f64) -> f64 {
        (k.max(1) as f64).powf(s)
    }
}

/// Fourier coefficients z(q) with values in the normal block space.
///
/// Real maps keep only q = 0 and the positive half space; the other half is
/// synthesized as the conjugate.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierMap {
    pub trunc: Truncation,
    pub real: bool,
    data: Vec<C64>,
}

impl FourierMap {
    pub fn zeros(trunc: &Truncation, real: bool) -> Self {
        let n = if real { trunc.n_modes() - trunc.zero_index() } else { trunc.n_modes() };
        Self { trunc: trunc.clone(), real, data: vec![C64::new(0.0, 0.0); n * trunc.block_dim()] }
    }

    /// Builds from a dense (all q) vector. For real maps the positive half is kept
    /// and the q = 0 block is projected onto its real part.
    pub fn from_dense(trunc: &Truncation, dense: &[C64], real: bool) -> Self {
        let nd = trunc.block_dim();
        assert_eq!(dense.len(), trunc.n_modes() * nd);
        if !real {
            return Self { trunc: trunc.clone(), real, data: dense.to_vec() };
        }
        let z0 = trunc.zero_index();
        let mut data = dense[z0 * nd..].to_vec();
        for v in &mut data[..nd] {
            v.im = 0.0;
        }
        Self { trunc: trunc.clone(), real, data }
    }

    pub fn to_dense(&self) -> Vec<C64> {
        if !self.real {
            return self.data.clone();
        }
        let nd = self.trunc.block_dim();
        let n = self.trunc.n_modes();
        let mut out = vec![C64::new(0.0, 0.0); n * nd];
        for i in 0..n {
            out[i * nd..(i + 1) * nd].copy_from_slice(&self.block(i));
        }
        out
    }

    /// Block vector at mode index `idx`.
    pub fn block(&self, idx: usize) -> Vec<C64> {
        let nd = self.trunc.block_dim();
        if !self.real {
            return self.data[idx * nd..(idx + 1) * nd].to_vec();
        }
        let z0 = self.trunc.zero_index();
        if idx >= z0 {
            self.data[(idx - z0) * nd..(idx - z0 + 1) * nd].to_vec()
        } else {
            let j = self.trunc.neg_index(idx) - z0;
            self.data[j * nd..(j + 1) * nd].iter().map(|v| v.conj()).collect()
        }
    }

    pub fn get(&self, idx: usize, coord: usize) -> C64 {
        let nd = self.trunc.block_dim();
        if !self.real {
            return self.data[idx * nd + coord];
        }
        let z0 = self.trunc.zero_index();
        if idx >= z0 {
            self.data[(idx - z0) * nd + coord]
        } else {
            self.data[(self.trunc.neg_index(idx) - z0) * nd + coord].conj()
        }
    }

    /// Sets z_coord(q); for real maps the conjugate at -q follows automatically.
    pub fn set(&mut self, idx: usize, coord: usize, v: C64) {
        let nd = self.trunc.block_dim();
        if !self.real {
            self.data[idx * nd + coord] = v;
            return;
        }
        let z0 = self.trunc.zero_index();
        if idx > z0 {
            self.data[(idx - z0) * nd + coord] = v;
        } else if idx == z0 {
            self.data[coord] = C64::new(v.re, 0.0);
        } else {
            self.data[(self.trunc.neg_index(idx) - z0) * nd + coord] = v.conj();
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.norm_sqr() == 0.0)
    }

    pub fn sub(&self, other: &FourierMap) -> FourierMap {
        let a = self.to_dense();
        let b = other.to_dense();
        let d: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        FourierMap::from_dense(&self.trunc, &d, self.real && other.real)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let t = &self.trunc;
        let mut entries = Vec::new();
        for idx in 0..t.n_modes() {
            let b = self.block(idx);
            for k in t.normal_modes() {
                let off = t.block_offset(k);
                let v = &b[off..off + t.mults[k]];
                if v.iter().all(|c| c.norm_sqr() == 0.0) {
                    continue;
                }
                entries.push(serde_json::json!({
                    "q": t.q_of(idx),
                    "k": k,
                    "re": v.iter().map(|c| c.re).collect::<Vec<_>>(),
                    "im": v.iter().map(|c| c.im).collect::<Vec<_>>(),
                }));
            }
        }
        serde_json::json!({
            "d": t.d, "Q": t.q_max, "Kmax": t.kmax, "mults": t.mults,
            "real": self.real, "entries": entries,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let bad = |m: &str| Error::Artifact(format!("fourier map: {m}"));
        let d = v["d"].as_u64().ok_or_else(|| bad("d"))? as usize;
        let q = v["Q"].as_i64().ok_or_else(|| bad("Q"))? as i32;
        let kmax = v["Kmax"].as_u64().ok_or_else(|| bad("Kmax"))? as usize;
        let mults: Vec<usize> = serde_json::from_value(v["mults"].clone()).map_err(|_| bad("mults"))?;
        let real = v["real"].as_bool().unwrap_or(false);
        let t = Truncation::new(d, q, kmax, mults)?;
        let mut dense = vec![C64::new(0.0, 0.0); t.n_modes() * t.block_dim()];
        for e in v["entries"].as_array().ok_or_else(|| bad("entries"))? {
            let qv: Vec<i32> = serde_json::from_value(e["q"].clone()).map_err(|_| bad("q"))?;
            let k = e["k"].as_u64().ok_or_else(|| bad("k"))? as usize;
            let re: Vec<f64> = serde_json::from_value(e["re"].clone()).map_err(|_| bad("re"))?;
            let im: Vec<f64> = serde_json::from_value(e["im"].clone()).map_err(|_| bad("im"))?;
            let idx = t.index_of(&qv).ok_or_else(|| bad("q out of range"))?;
            if k > kmax || re.len() != t.mults[k] || im.len() != t.mults[k] {
                return Err(bad("block size"));
            }
            let off = idx * t.block_dim() + t.block_offset(k);
            for i in 0..re.len() {
                dense[off + i] = C64::new(re[i], im[i]);
            }
        }
        if real {
            // the stored half is authoritative; fill -q for from_dense
            for idx in 0..t.zero_index() {
                let j = t.neg_index(idx);
                for c in 0..t.block_dim() {
                    dense[idx * t.block_dim() + c] = dense[j * t.block_dim() + c].conj();
                }
            }
        }
        Ok(FourierMap::from_dense(&t, &dense, real))
    }
}

/// Sum over q and k of [k]^s |z_k(q)| with Euclidean block norms and [k] = max(k, 1).
pub fn weighted_norm(z: &FourierMap, s: f64) -> f64 {
    dense_weighted_norm(&z.trunc, &z.to_dense(), s)
}

pub fn dense_weighted_norm(t: &Truncation, dense: &[C64], s: f64) -> f64 {
    let nd = t.block_dim();
    let mut acc = 0.0;
    for idx in 0..t.n_modes() {
        let b = &dense[idx * nd..(idx + 1) * nd];
        for k in t.normal_modes() {
            let off = t.block_offset(k);
            let n2: f64 = b[off..off + t.mults[k]].iter().map(|c| c.norm_sqr()).sum();
            acc += Truncation::weight(k, s) * n2.sqrt();
        }
    }
    acc
}

/// (tau_beta z)(q) = exp(i beta.q) z(q).
pub fn translate(z: &FourierMap, beta: &[C64]) -> FourierMap {
    let t = &z.trunc;
    let nd = t.block_dim();
    let mut dense = z.to_dense();
    for idx in 0..t.n_modes() {
        let q = t.q_of(idx);
        let ph: C64 = q.iter().zip(beta).map(|(&qi, b)| b * qi as f64).sum();
        let f = (C64::i() * ph).exp();
        for v in &mut dense[idx * nd..(idx + 1) * nd] {
            *v *= f;
        }
    }
    let real = z.real && beta.iter().all(|b| b.im == 0.0);
    FourierMap::from_dense(t, &dense, real)
}

/// Tangential torus data (Phi, J) as Fourier coefficients in C^d x C^d.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentialMap {
    pub trunc: Truncation,
    pub real: bool,
    /// phi[idx * d + i]
    pub phi: Vec<C64>,
    pub j: Vec<C64>,
}

impl TangentialMap {
    pub fn zeros(trunc: &Truncation) -> Self {
        let n = trunc.n_modes() * trunc.d;
        Self { trunc: trunc.clone(), real: true, phi: vec![C64::new(0.0, 0.0); n], j: vec![C64::new(0.0, 0.0); n] }
    }

    /// Forces z(-q) = conj z(q) and a real q = 0 entry.
    pub fn realify(&mut self) {
        let t = &self.trunc;
        let d = t.d;
        let z0 = t.zero_index();
        for v in [&mut self.phi, &mut self.j] {
            for idx in 0..z0 {
                let n = t.neg_index(idx);
                for i in 0..d {
                    let a = 0.5 * (v[idx * d + i] + v[n * d + i].conj());
                    v[idx * d + i] = a;
                    v[n * d + i] = a.conj();
                }
            }
            for i in 0..d {
                v[z0 * d + i].im = 0.0;
            }
        }
        self.real = true;
    }

    /// Sum over q of |phi(q)| + |j(q)|.
    pub fn norm(&self) -> f64 {
        let d = self.trunc.d;
        let mut acc = 0.0;
        for idx in 0..self.trunc.n_modes() {
            let a: f64 = self.phi[idx * d..(idx + 1) * d].iter().map(|c| c.norm_sqr()).sum();
            let b: f64 = self.j[idx * d..(idx + 1) * d].iter().map(|c| c.norm_sqr()).sum();
            acc += a.sqrt() + b.sqrt();
        }
        acc
    }

    pub fn to_json(&self) -> serde_json::Value {
        let c = |v: &Vec<C64>| {
            serde_json::json!({
                "re": v.iter().map(|c| c.re).collect::<Vec<_>>(),
                "im": v.iter().map(|c| c.im).collect::<Vec<_>>(),
            })
        };
        serde_json::json!({ "phi": c(&self.phi), "j": c(&self.j) })
    }

    pub fn from_json(trunc: &Truncation, v: &serde_json::Value) -> Result<Self> {
        let get = |key: &str| -> Result<Vec<C64>> {
            let re: Vec<f64> = serde_json::from_value(v[key]["re"].clone())
                .map_err(|_| Error::Artifact(format!("tangential map: {key}")))?;
            let im: Vec<f64> = serde_json::from_value(v[key]["im"].clone())
                .map_err(|_| Error::Artifact(format!("tangential map: {key}")))?;
            if re.len() != trunc.n_modes() * trunc.d || im.len() != re.len() {
                return Err(Error::Artifact(format!("tangential map: {key} length")));
            }
            Ok(re.into_iter().zip(im).map(|(a, b)| C64::new(a, b)).collect())
        };
        Ok(Self { trunc: trunc.clone(), real: true, phi: get("phi")?, j: get("j")? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelTag {
    K0,
    Kn,
    An,
    Gamma,
    Projector,
}

/// Per-q linear maps, block diagonal across k.
#[derive(Clone, Debug)]
pub struct DiagonalKernel {
    pub trunc: Truncation,
    pub tag: KernelTag,
    /// blocks[idx][k] is a d_k x d_k matrix (0 x 0 for absent modes)
    pub blocks: Vec<Vec<DMatrix<C64>>>,
}

impl DiagonalKernel {
    pub fn zeros(trunc: &Truncation, tag: KernelTag) -> Self {
        let one: Vec<DMatrix<C64>> = trunc.mults.iter().map(|&m| DMatrix::zeros(m, m)).collect();
        Self { trunc: trunc.clone(), tag, blocks: vec![one; trunc.n_modes()] }
    }

    pub fn identity(trunc: &Truncation, tag: KernelTag) -> Self {
        let one: Vec<DMatrix<C64>> = trunc.mults.iter().map(|&m| DMatrix::identity(m, m)).collect();
        Self { trunc: trunc.clone(), tag, blocks: vec![one; trunc.n_modes()] }
    }

    /// K0(q) = (omega.q)^2 - mu_k^2 on each block.
    pub fn k0(trunc: &Truncation, omega: &[f64], mu: &[f64]) -> Self {
        let mut out = Self::zeros(trunc, KernelTag::K0);
        for idx in 0..trunc.n_modes() {
            let wq = trunc.omega_dot(omega, idx);
            for k in trunc.normal_modes() {
                let m = trunc.mults[k];
                out.blocks[idx][k] = DMatrix::identity(m, m) * C64::new(wq * wq - mu[k] * mu[k], 0.0);
            }
        }
        out
    }

    /// Largest spectral norm over all blocks.
    pub fn max_block_norm(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .filter(|m| m.nrows() > 0)
            .map(spectral_norm)
            .fold(0.0, f64::max)
    }

    /// Largest deviation from kernel(-q) = conj(kernel(q)).
    pub fn conjugation_defect(&self) -> f64 {
        let t = &self.trunc;
        let mut worst: f64 = 0.0;
        for idx in 0..t.n_modes() {
            let n = t.neg_index(idx);
            for k in t.normal_modes() {
                let d = &self.blocks[idx][k] - self.blocks[n][k].map(|c| c.conj());
                worst = worst.max(d.norm());
            }
        }
        worst
    }
}

pub fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].norm();
    }
    m.clone().svd(false, false).singular_values.max()
}

/// (op z)(q) = op(q) z(q).
pub fn apply_diagonal(op: &DiagonalKernel, z: &FourierMap) -> Result<FourierMap> {
    if op.trunc != z.trunc {
        return Err(Error::Mismatch("diagonal kernel and map truncations differ".into()));
    }
    let t = &z.trunc;
    let nd = t.block_dim();
    let src = z.to_dense();
    let mut out = vec![C64::new(0.0, 0.0); src.len()];
    for idx in 0..t.n_modes() {
        for k in t.normal_modes() {
            let off = idx * nd + t.block_offset(k);
            let m = t.mults[k];
            let b = &op.blocks[idx][k];
            for r in 0..m {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..m {
                    acc += b[(r, c)] * src[off + c];
                }
                out[off + r] = acc;
            }
        }
    }
    let real = z.real && op.conjugation_defect() == 0.0;
    Ok(FourierMap::from_dense(t, &out, real))
}

/// Finitely supported sequence on Z: vals[i] sits at index offset + i.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq {
    pub offset: i64,
    pub vals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncationEvent {
    pub dropped: usize,
    pub tail_mass: f64,
}

impl Seq {
    pub fn impulse(at: i64) -> Self {
        Seq { offset: at, vals: vec![1.0] }
    }

    pub fn at(&self, j: i64) -> f64 {
        let i = j - self.offset;
        if i < 0 || i as usize >= self.vals.len() {
            0.0
        } else {
            self.vals[i as usize]
        }
    }

    /// Sum of [j]^s |a_j| with [j] = max(1, |j|).
    pub fn norm(&self, s: f64) -> f64 {
        self.vals
            .iter()
            .enumerate()
            .map(|(i, v)| Truncation::weight((self.offset + i as i64).unsigned_abs() as usize, s) * v.abs())
            .sum()
    }
}

/// Linear convolution; entries with |j| > cap are dropped and reported.
pub fn convolve(a: &Seq, b: &Seq, cap: Option<i64>) -> (Seq, Option<TruncationEvent>) {
    if a.vals.is_empty() || b.vals.is_empty() {
        return (Seq { offset: 0, vals: vec![] }, None);
    }
    let mut vals = vec![0.0; a.vals.len() + b.vals.len() - 1];
    for (i, x) in a.vals.iter().enumerate() {
        for (j, y) in b.vals.iter().enumerate() {
            vals[i + j] += x * y;
        }
    }
    let full = Seq { offset: a.offset + b.offset, vals };
    let Some(cap) = cap else { return (full, None) };
    let mut kept = Vec::new();
    let mut dropped = 0;
    let mut tail = 0.0;
    let lo = full.offset.max(-cap);
    let hi = (full.offset + full.vals.len() as i64 - 1).min(cap);
    for (i, v) in full.vals.iter().enumerate() {
        let j = full.offset + i as i64;
        if j.abs() > cap {
            if *v != 0.0 {
                dropped += 1;
                tail += v.abs();
            }
        }
    }
    if lo <= hi {
        for j in lo..=hi {
            kept.push(full.at(j));
        }
    }
    let out = Seq { offset: if lo <= hi { lo } else { 0 }, vals: kept };
    let ev = (dropped > 0).then_some(TruncationEvent { dropped, tail_mass: tail });
    (out, ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trunc1() -> Truncation {
        Truncation::new(1, 3, 3, vec![1, 1, 2, 2]).unwrap()
    }

    #[test]
    fn single_block_norm() {
        let t = trunc1();
        let mut z = FourierMap::zeros(&t, false);
        let idx = t.index_of(&[1]).unwrap();
        let off = t.block_offset(2);
        z.set(idx, off, C64::new(3.0, 0.0));
        z.set(idx, off + 1, C64::new(4.0, 0.0));
        assert!((weighted_norm(&z, 1.0) - 10.0).abs() < 1e-15);
        assert!((weighted_norm(&z, 0.0) - 5.0).abs() < 1e-15);
        assert_eq!(weighted_norm(&FourierMap::zeros(&t, true), 2.0), 0.0);
    }

    #[test]
    fn index_roundtrip() {
        let t = Truncation::new(2, 2, 1, vec![1, 1]).unwrap();
        for idx in 0..t.n_modes() {
            let q = t.q_of(idx);
            assert_eq!(t.index_of(&q), Some(idx));
            let nq: Vec<i32> = q.iter().map(|c| -c).collect();
            assert_eq!(t.index_of(&nq), Some(t.neg_index(idx)));
        }
        assert_eq!(t.q_of(t.zero_index()), vec![0, 0]);
    }

    #[test]
    fn real_maps_are_conjugate_symmetric() {
        let t = trunc1();
        let mut z = FourierMap::zeros(&t, true);
        let i1 = t.index_of(&[-2]).unwrap();
        z.set(i1, 0, C64::new(1.0, 2.0));
        let j1 = t.index_of(&[2]).unwrap();
        assert_eq!(z.get(j1, 0), C64::new(1.0, -2.0));
        z.set(t.zero_index(), 1, C64::new(1.0, 5.0));
        assert_eq!(z.get(t.zero_index(), 1).im, 0.0);
    }

    #[test]
    fn translate_imaginary_scales() {
        let t = Truncation::new(2, 1, 1, vec![1, 1]).unwrap();
        let mut z = FourierMap::zeros(&t, false);
        let idx = t.index_of(&[1, 0]).unwrap();
        z.set(idx, 0, C64::new(1.0, 0.0));
        let y = translate(&z, &[C64::new(0.0, 0.7), C64::new(0.0, 0.0)]);
        assert!((y.get(idx, 0).re - (-0.7f64).exp()).abs() < 1e-15);
        let id = translate(&z, &[C64::new(0.0, 0.0); 2]);
        assert_eq!(id, z);
    }

    #[test]
    fn impulses_convolve() {
        let (c, ev) = convolve(&Seq::impulse(2), &Seq::impulse(-5), None);
        assert!(ev.is_none());
        assert_eq!(c.at(-3), 1.0);
        assert_eq!(c.vals.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn cubing_cosine() {
        // cos x on the symmetric index window has coefficients 1/2 at +-1
        let a = Seq { offset: -1, vals: vec![0.5, 0.0, 0.5] };
        let (a2, _) = convolve(&a, &a, None);
        let (a3, _) = convolve(&a2, &a, None);
        // direct pointwise cubing and a discrete transform
        let m = 16;
        let vals: Vec<f64> = (0..m).map(|j| (2.0 * std::f64::consts::PI * j as f64 / m as f64).cos().powi(3)).collect();
        for k in -3i64..=3 {
            let c: f64 = vals
                .iter()
                .enumerate()
                .map(|(j, v)| v * (2.0 * std::f64::consts::PI * (k * j as i64) as f64 / m as f64).cos())
                .sum::<f64>()
                / m as f64;
            assert!((a3.at(k) - c).abs() < 1e-14, "k={k}");
        }
        assert!((a3.at(1) - 3.0 / 8.0).abs() < 1e-15 && (a3.at(3) - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn cap_reports_tail() {
        let a = Seq { offset: 0, vals: vec![1.0, 1.0, 1.0] };
        let (c, ev) = convolve(&a, &a, Some(2));
        let ev = ev.unwrap();
        assert_eq!(ev.dropped, 2);
        assert_eq!(ev.tail_mass, 3.0);
        assert_eq!(c.at(2), 3.0);
    }

    #[test]
    fn apply_identity_and_zero() {
        let t = trunc1();
        let mut z = FourierMap::zeros(&t, true);
        z.set(t.index_of(&[1]).unwrap(), 2, C64::new(0.3, -0.1));
        let id = DiagonalKernel::identity(&t, KernelTag::Projector);
        assert_eq!(apply_diagonal(&id, &z).unwrap().to_dense(), z.to_dense());
        let zero = DiagonalKernel::zeros(&t, KernelTag::An);
        assert!(apply_diagonal(&zero, &z).unwrap().is_zero());
        let k0 = DiagonalKernel::k0(&t, &[2f64.sqrt()], &[1.0, 2f64.sqrt(), 5f64.sqrt(), 10f64.sqrt()]);
        assert!(apply_diagonal(&k0, &z).is_ok());
    }

    #[test]
    fn json_roundtrip() {
        let t = trunc1();
        let mut z = FourierMap::zeros(&t, true);
        z.set(t.index_of(&[2]).unwrap(), 3, C64::new(0.25, 1.5));
        z.set(t.zero_index(), 0, C64::new(-1.0, 0.0));
        let back = FourierMap::from_json(&z.to_json()).unwrap();
        assert_eq!(back.to_dense(), z.to_dense());
    }

    fn sparse_seq() -> impl Strategy<Value = Seq> {
        (-6i64..6, proptest::collection::vec(-3.0f64..3.0, 1..6)).prop_map(|(offset, vals)| Seq { offset, vals })
    }

    proptest! {
        #[test]
        fn banach_algebra_bound(a in sparse_seq(), b in sparse_seq(), s in 0usize..3) {
            let s = s as f64;
            let (c, _) = convolve(&a, &b, None);
            prop_assert!(c.norm(s) <= 2f64.powf(s) * a.norm(s) * b.norm(s) * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn norm_monotone_and_triangle(re in proptest::collection::vec(-2.0f64..2.0, 42), im in proptest::collection::vec(-2.0f64..2.0, 42)) {
            let t = trunc1();
            let half = re.len() / 2;
            let dense_a: Vec<C64> = (0..t.n_modes() * t.block_dim()).map(|i| C64::new(re[i % 42], im[i % 42])).collect();
            let dense_b: Vec<C64> = (0..t.n_modes() * t.block_dim()).map(|i| C64::new(im[(i + half) % 42], re[i % 42])).collect();
            let a = FourierMap::from_dense(&t, &dense_a, false);
            let b = FourierMap::from_dense(&t, &dense_b, false);
            prop_assert!(weighted_norm(&a, 2.0) >= weighted_norm(&a, 1.0));
            prop_assert!(weighted_norm(&a, 1.0) >= weighted_norm(&a, 0.0));
            let sum: Vec<C64> = dense_a.iter().zip(&dense_b).map(|(x, y)| x + y).collect();
            let ab = FourierMap::from_dense(&t, &sum, false);
            prop_assert!(weighted_norm(&ab, 1.0) <= weighted_norm(&a, 1.0) + weighted_norm(&b, 1.0) + 1e-12);
        }

        #[test]
        fn translate_group(beta in -3.0f64..3.0, re in proptest::collection::vec(-1.0f64..1.0, 7)) {
            let t = trunc1();
            let mut z = FourierMap::zeros(&t, true);
            for (i, v) in re.iter().enumerate() {
                z.set(i, i % t.block_dim(), C64::new(*v, 0.5 * v));
            }
            let y = translate(&translate(&z, &[C64::new(beta, 0.0)]), &[C64::new(-beta, 0.0)]);
            prop_assert!(y.real);
            for (a, b) in y.to_dense().iter().zip(z.to_dense()) {
                prop_assert!((a - b).norm() <= 1e-14);
            }
        }
    }
}
