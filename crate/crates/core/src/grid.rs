//! Collocation grid on the torus T^d and transforms to and from the Fourier box |q|_inf <= Q.
//!
//! Convention: F(phi) = sum_q exp(-i q.phi) f(q).

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::mode_space::{Truncation, C64};

pub struct TorusGrid {
    pub d: usize,
    pub m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl TorusGrid {
    pub fn new(d: usize, m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { d, m, fwd: planner.plan_fft_forward(m), inv: planner.plan_fft_inverse(m) }
    }

    /// Grid fine enough to resolve products of `degree` factors with harmonics up to q_max + pad.
    pub fn for_degree(d: usize, q_max: i32, degree: usize, pad: usize) -> Self {
        let m = (degree + 1) * (q_max as usize + pad) + 1;
        Self::new(d, m + (m % 2))
    }

    pub fn npoints(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn point(&self, mut j: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.d];
        for i in (0..self.d).rev() {
            p[i] = 2.0 * PI * (j % self.m) as f64 / self.m as f64;
            j /= self.m;
        }
        p
    }

    fn grid_index(&self, q: &[i32]) -> usize {
        q.iter().fold(0, |acc, &c| acc * self.m + c.rem_euclid(self.m as i32) as usize)
    }

    fn transform_axes(&self, buf: &mut [C64], lanes: usize, forward: bool) {
        let m = self.m;
        let n = self.npoints();
        let plan = if forward { &self.fwd } else { &self.inv };
        let mut line = vec![C64::new(0.0, 0.0); m];
        for axis in 0..self.d {
            let stride = m.pow((self.d - 1 - axis) as u32);
            for base in 0..n {
                if (base / stride) % m != 0 {
                    continue;
                }
                for lane in 0..lanes {
                    for (t, v) in line.iter_mut().enumerate() {
                        *v = buf[(base + t * stride) * lanes + lane];
                    }
                    plan.process(&mut line);
                    for (t, v) in line.iter().enumerate() {
                        buf[(base + t * stride) * lanes + lane] = *v;
                    }
                }
            }
        }
    }

    /// coeffs[idx * lanes + lane] -> values[point * lanes + lane]
    pub fn synthesize(&self, trunc: &Truncation, coeffs: &[C64], lanes: usize) -> Vec<C64> {
        let mut buf = vec![C64::new(0.0, 0.0); self.npoints() * lanes];
        for idx in 0..trunc.n_modes() {
            let g = self.grid_index(&trunc.q_of(idx));
            buf[g * lanes..(g + 1) * lanes].copy_from_slice(&coeffs[idx * lanes..(idx + 1) * lanes]);
        }
        self.transform_axes(&mut buf, lanes, true);
        buf
    }

    /// values[point * lanes + lane] -> coeffs[idx * lanes + lane] on the truncation box
    pub fn analyze(&self, trunc: &Truncation, values: &[C64], lanes: usize) -> Vec<C64> {
        let mut buf = values.to_vec();
        self.transform_axes(&mut buf, lanes, false);
        let scale = 1.0 / self.npoints() as f64;
        let mut out = vec![C64::new(0.0, 0.0); trunc.n_modes() * lanes];
        for idx in 0..trunc.n_modes() {
            let g = self.grid_index(&trunc.q_of(idx));
            for l in 0..lanes {
                out[idx * lanes + l] = buf[g * lanes + l] * scale;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_convention() {
        let t = Truncation::new(2, 2, 1, vec![1, 1]).unwrap();
        let g = TorusGrid::for_degree(2, 2, 3, 1);
        let lanes = 2;
        let coeffs: Vec<C64> = (0..t.n_modes() * lanes).map(|i| C64::new((i % 7) as f64, (i % 3) as f64 - 1.0)).collect();
        let vals = g.synthesize(&t, &coeffs, lanes);
        let back = g.analyze(&t, &vals, lanes);
        for (a, b) in back.iter().zip(&coeffs) {
            assert!((a - b).norm() < 1e-12);
        }
        // value at a grid point equals sum_q exp(-i q.phi) f(q)
        let j = 17;
        let p = g.point(j);
        let mut direct = C64::new(0.0, 0.0);
        for idx in 0..t.n_modes() {
            let q = t.q_of(idx);
            let ph: f64 = q.iter().zip(&p).map(|(&a, b)| a as f64 * b).sum();
            direct += C64::from_polar(1.0, -ph) * coeffs[idx * lanes + 1];
        }
        assert!((vals[j * lanes + 1] - direct).norm() < 1e-12);
    }
}
