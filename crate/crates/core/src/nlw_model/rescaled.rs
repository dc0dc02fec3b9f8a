use std::sync::Arc;

use nalgebra::DMatrix;

use crate::birkhoff::{self, NormalFormData, ScaledHamiltonian};
use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::jet::{JetFunctional, MonoTable, Scalar, Tps};
use crate::mode_space::{FourierMap, TangentialMap, Truncation, C64};

use super::{basis_value, normal_packing, truncation, NlwConfig, SpaceGrid};

/// The rescaled NLW written as H = omega.I + 1/2 I.gI + 1/2 sum(mu^2|x|^2 + |y|^2) + lambda U.
///
/// Physical amplitudes a = delta a_hat; U = U~/delta with U~ the rescaled Birkhoff
/// remainder, so at lambda = delta this is the NLW itself.
#[derive(Clone)]
pub struct RescaledNlw {
    pub cfg: NlwConfig,
    pub nf: NormalFormData,
    pub scaled: ScaledHamiltonian,
    pub trunc: Truncation,
    pub amps: Vec<f64>,
    pub delta: f64,
    pub lambda: f64,
    pub omega: Vec<f64>,
    /// normal frequency per k (0 for absent blocks)
    pub mu_normal: Vec<f64>,
    /// spatial index of every normal block coordinate
    pub coord_mode: Vec<i32>,
    grid: Arc<TorusGrid>,
    xgrid: SpaceGrid,
    /// psi_tan[i][l], psi_norm[c][l]
    psi_tan: Vec<Vec<f64>>,
    psi_norm: Vec<Vec<f64>>,
}

/// Grid values of V_phi, V_I and W (or their Fourier coefficients), one Vec per channel set.
#[derive(Clone, Debug)]
pub struct ModelOut<T> {
    pub vphi: Vec<T>,
    pub vi: Vec<T>,
    pub w: Vec<T>,
}

impl RescaledNlw {
    /// `delta` defaults to max |a_i| and `lambda` to delta.
    pub fn new(cfg: &NlwConfig, q_max: i32, kmax: usize, amps: &[f64], delta: Option<f64>, lambda: Option<f64>) -> Result<Self> {
        cfg.validate()?;
        if amps.len() != cfg.d() {
            return Err(Error::Config(format!("expected {} amplitudes", cfg.d())));
        }
        let trunc = truncation(cfg, q_max, kmax)?;
        let nf = birkhoff::normal_form(cfg)?;
        let amax = amps.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let delta = delta.unwrap_or(if amax > 0.0 { amax } else { 1.0 });
        let scaled = birkhoff::rescale_hamiltonian(delta, &nf)?;
        let lambda = lambda.unwrap_or(if amax > 0.0 { scaled.lambda } else { 0.0 });
        let d = cfg.d();
        let omega = (0..d).map(|i| nf.mu[i] + (0..d).map(|j| nf.gbar[i][j] * amps[j] * amps[j]).sum::<f64>()).collect();
        let packing = normal_packing(cfg, kmax);
        let mu_normal = (0..=kmax).map(|k| if packing[k].is_empty() { 0.0 } else { cfg.mu(k as i32) }).collect();
        let coord_mode: Vec<i32> = packing.iter().flatten().copied().collect();
        let grid = Arc::new(TorusGrid::for_degree(cfg.d(), q_max, cfg.degree(), 3));
        let xgrid = SpaceGrid::new(cfg.n_space);
        let psi = |n: i32| xgrid.x.iter().map(|&x| basis_value(n, x)).collect::<Vec<_>>();
        let psi_tan = cfg.tangential_set.iter().map(|&n| psi(n)).collect();
        let psi_norm = coord_mode.iter().map(|&n| psi(n)).collect();
        Ok(Self {
            cfg: cfg.clone(),
            nf,
            scaled,
            trunc,
            amps: amps.to_vec(),
            delta,
            lambda,
            omega,
            mu_normal,
            coord_mode,
            grid,
            xgrid,
            psi_tan,
            psi_norm,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut m = self.clone();
        m.lambda = lambda;
        m
    }

    pub fn with_omega(&self, omega: &[f64]) -> Self {
        let mut m = self.clone();
        m.omega = omega.to_vec();
        m
    }

    pub fn d(&self) -> usize {
        self.cfg.d()
    }

    /// Twist matrix g = delta^4 gbar.
    pub fn twist(&self) -> Vec<Vec<f64>> {
        self.scaled.twist.clone()
    }

    /// Perturbation at one torus point: returns (V_phi, V_I, W) with the lambda factor.
    pub fn point_eval<T: Scalar>(&self, angles: &[f64], phi: &[T], jj: &[T], x: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let d = self.d();
        let proto = &phi[0];
        let i = C64::i();
        let d4 = self.delta.powi(4);
        let d2 = self.delta * self.delta;
        let mut z = Vec::with_capacity(d);
        let mut zb = Vec::with_capacity(d);
        let mut rho2 = Vec::with_capacity(d);
        for a in 0..d {
            let theta = phi[a].add_c(C64::new(angles[a], 0.0));
            let r2 = jj[a].scale_re(d4).add_c(C64::new(self.amps[a] * self.amps[a], 0.0));
            let r = r2.sqrt();
            z.push(r.mul(&theta.scale(-i).exp()));
            zb.push(r.mul(&theta.scale(i).exp()));
            rho2.push(r2);
        }
        // U = G(q(zeta), x) - G4(q(z)) + sum mu eps epsb, where eps = zeta - z; the quartic
        // identity of the normal form is used exactly so nothing of order a^4 cancels numerically.
        let (eps, epsb) = self.nf.offsets(&z, &zb);
        let [al, be, ga, ep] = self.nf.jacobian_offsets(&z, &zb);
        let mu = &self.nf.mu;
        let norm: Vec<f64> = (0..d).map(|a| 1.0 / (2.0 * mu[a]).sqrt()).collect();
        let qz: Vec<T> = (0..d).map(|a| z[a].add(&zb[a]).scale_re(norm[a])).collect();
        let qe: Vec<T> = (0..d).map(|a| eps[a].add(&epsb[a]).scale_re(norm[a])).collect();
        let qn: Vec<T> = x.iter().map(|v| v.scale_re(d2)).collect();
        let nl = self.xgrid.x.len();
        let w = self.xgrid.weight;
        let c3 = self.cfg.f_coeffs[0];
        let mut ptan = vec![proto.zero_like(); d];
        let mut pdiff = vec![proto.zero_like(); d];
        let mut pn = vec![proto.zero_like(); qn.len()];
        for l in 0..nl {
            let mut uz = proto.zero_like();
            let mut du = proto.zero_like();
            for a in 0..d {
                let p = C64::new(self.psi_tan[a][l], 0.0);
                uz.add_assign_scaled(&qz[a], p);
                du.add_assign_scaled(&qe[a], p);
            }
            for (c, q) in qn.iter().enumerate() {
                let p = self.psi_norm[c][l];
                if p != 0.0 {
                    du.add_assign_scaled(q, C64::new(p, 0.0));
                }
            }
            let u = uz.add(&du);
            let u2 = u.mul(&u);
            let mut pw = u2.mul(&u);
            let mut fu = pw.scale_re(c3);
            let mut high = proto.zero_like();
            for cp in &self.cfg.f_coeffs[1..] {
                pw = pw.mul(&u);
                high = high.add(&pw.scale_re(*cp));
            }
            fu = fu.add(&high);
            // f(u) - c3 uz^3 = c3 du (u^2 + u uz + uz^2) + higher powers
            let fd = du.mul(&u2.add(&u.mul(&uz)).add(&uz.mul(&uz))).scale_re(c3).add(&high);
            let fu = fu.scale_re(w);
            let fd = fd.scale_re(w);
            for a in 0..d {
                let p = C64::new(self.psi_tan[a][l], 0.0);
                ptan[a].add_assign_scaled(&fu, p);
                pdiff[a].add_assign_scaled(&fd, p);
            }
            for c in 0..pn.len() {
                let p = self.psi_norm[c][l];
                if p != 0.0 {
                    pn[c].add_assign_scaled(&fu, C64::new(p, 0.0));
                }
            }
        }
        let gq: Vec<T> = (0..d).map(|a| ptan[a].scale_re(norm[a])).collect();
        let sc = self.lambda / self.delta;
        let mut vphi = Vec::with_capacity(d);
        let mut vi = Vec::with_capacity(d);
        for j in 0..d {
            let mut dz = pdiff[j].scale_re(norm[j]);
            let mut dzb = dz.clone();
            for l in 0..d {
                dz = dz.add(&gq[l].mul(&al[l][j].add(&ga[l][j])));
                dzb = dzb.add(&gq[l].mul(&be[l][j].add(&ep[l][j])));
                dz = dz.add(&epsb[l].mul(&al[l][j]).add(&eps[l].mul(&ga[l][j])).scale_re(mu[l]));
                dzb = dzb.add(&epsb[l].mul(&be[l][j]).add(&eps[l].mul(&ep[l][j])).scale_re(mu[l]));
            }
            let zdz = z[j].mul(&dz);
            let zbdzb = zb[j].mul(&dzb);
            vphi.push(zbdzb.sub(&zdz).scale(i * (sc / d4)));
            vi.push(zdz.add(&zbdzb).mul(&rho2[j].recip()).scale_re(0.5 * sc));
        }
        let wv = pn.iter().map(|p| p.scale_re(sc / d2)).collect();
        (vphi, vi, wv)
    }

    /// Fourier coefficients of (V_phi, V_I, W) for Fourier inputs (Phi, J, z).
    pub fn eval<T: Scalar>(&self, phi: &[T], jj: &[T], z: &[T]) -> ModelOut<T> {
        let t = &self.trunc;
        let d = self.d();
        let nd = t.block_dim();
        let proto = phi[0].clone();
        let lanes = proto.lanes();
        let ch = 2 * d + nd;
        let nm = t.n_modes();
        let mut coeffs = vec![C64::new(0.0, 0.0); nm * ch * lanes];
        for idx in 0..nm {
            let base = idx * ch * lanes;
            for a in 0..d {
                phi[idx * d + a].write_lanes(&mut coeffs[base + a * lanes..base + (a + 1) * lanes]);
                jj[idx * d + a].write_lanes(&mut coeffs[base + (d + a) * lanes..base + (d + a + 1) * lanes]);
            }
            for c in 0..nd {
                let o = base + (2 * d + c) * lanes;
                z[idx * nd + c].write_lanes(&mut coeffs[o..o + lanes]);
            }
        }
        let vals = self.grid.synthesize(t, &coeffs, ch * lanes);
        let np = self.grid.npoints();
        let mut outv = vec![C64::new(0.0, 0.0); np * ch * lanes];
        for j in 0..np {
            let base = j * ch * lanes;
            let get = |c: usize| proto.from_lanes(&vals[base + c * lanes..base + (c + 1) * lanes]);
            let ph: Vec<T> = (0..d).map(get).collect();
            let jv: Vec<T> = (0..d).map(|a| get(d + a)).collect();
            let xv: Vec<T> = (0..nd).map(|c| get(2 * d + c)).collect();
            let (a, b, w) = self.point_eval(&self.grid.point(j), &ph, &jv, &xv);
            for (c, v) in a.iter().chain(b.iter()).chain(w.iter()).enumerate() {
                v.write_lanes(&mut outv[base + c * lanes..base + (c + 1) * lanes]);
            }
        }
        let co = self.grid.analyze(t, &outv, ch * lanes);
        let mut out = ModelOut { vphi: Vec::with_capacity(nm * d), vi: Vec::with_capacity(nm * d), w: Vec::with_capacity(nm * nd) };
        for idx in 0..nm {
            let base = idx * ch * lanes;
            let get = |c: usize| proto.from_lanes(&co[base + c * lanes..base + (c + 1) * lanes]);
            for a in 0..d {
                out.vphi.push(get(a));
            }
            for a in 0..d {
                out.vi.push(get(d + a));
            }
            for c in 0..nd {
                out.w.push(get(2 * d + c));
            }
        }
        out
    }

    pub fn eval_c(&self, tan: &TangentialMap, z: &[C64]) -> ModelOut<C64> {
        self.eval(&tan.phi, &tan.j, z)
    }

    /// w0(z): Fourier transform of lambda d_x U along the torus.
    pub fn w0(&self, tan: &TangentialMap, z: &[C64]) -> Vec<C64> {
        self.eval_c(tan, z).w
    }

    /// w0 with jet-valued normal inputs; tangential data held fixed.
    pub fn w0_tps(&self, tan: &TangentialMap, z: &[Tps]) -> Vec<Tps> {
        let proto = &z[0];
        let phi: Vec<Tps> = tan.phi.iter().map(|&v| proto.cst(v)).collect();
        let jj: Vec<Tps> = tan.j.iter().map(|&v| proto.cst(v)).collect();
        self.eval(&phi, &jj, z).w
    }

    /// Order-M jet of w0 about z0 in the chosen dense coordinates.
    pub fn build_w0(&self, tan: &TangentialMap, z0: &[C64], inputs: &[usize], outputs: &[usize], order: usize) -> Result<JetFunctional> {
        if order > 4 {
            return Err(Error::JetOrder(order));
        }
        let table = MonoTable::new(inputs.len(), order);
        let mut z: Vec<Tps> = z0.iter().map(|&v| Tps::constant(&table, v)).collect();
        for (i, &c) in inputs.iter().enumerate() {
            z[c] = Tps::var(&table, i, z0[c]);
        }
        let w = self.w0_tps(tan, &z);
        let rows = outputs.iter().map(|&r| w[r].clone()).collect();
        Ok(JetFunctional { table, inputs: inputs.to_vec(), outputs: outputs.to_vec(), rows })
    }

    /// Dense N x N derivative Dw0(z0).
    pub fn dw0(&self, tan: &TangentialMap, z0: &[C64]) -> DMatrix<C64> {
        let n = z0.len();
        let all: Vec<usize> = (0..n).collect();
        let jet = self.build_w0(tan, z0, &all, &all, 1).expect("order 1");
        DMatrix::from_fn(n, n, |r, c| jet.linear(r, c))
    }

    /// Pointwise first derivatives of (V_phi, V_I) in (Phi, J) at every grid point,
    /// transformed to Fourier space: kernel[(q) * (2d)^2 + row * 2d + col] for the
    /// difference mode q, as used by Newton on the tangential equation.
    pub fn tangential_derivative(&self, tan: &TangentialMap, z: &[C64]) -> (Vec<C64>, Truncation) {
        let t = &self.trunc;
        let d = self.d();
        let nd = t.block_dim();
        let nv = 2 * d;
        let table = MonoTable::new(nv, 1);
        let big = Truncation::new(d, 2 * t.q_max, t.kmax, t.mults.clone()).unwrap();
        let np = self.grid.npoints();
        let ch_in = 2 * d + nd;
        let mut coeffs = vec![C64::new(0.0, 0.0); t.n_modes() * ch_in];
        for idx in 0..t.n_modes() {
            for a in 0..d {
                coeffs[idx * ch_in + a] = tan.phi[idx * d + a];
                coeffs[idx * ch_in + d + a] = tan.j[idx * d + a];
            }
            for c in 0..nd {
                coeffs[idx * ch_in + 2 * d + c] = z[idx * nd + c];
            }
        }
        let vals = self.grid.synthesize(t, &coeffs, ch_in);
        let mut der = vec![C64::new(0.0, 0.0); np * nv * nv];
        for j in 0..np {
            let b = j * ch_in;
            let ph: Vec<Tps> = (0..d).map(|a| Tps::var(&table, a, vals[b + a])).collect();
            let jv: Vec<Tps> = (0..d).map(|a| Tps::var(&table, d + a, vals[b + d + a])).collect();
            let xv: Vec<Tps> = (0..nd).map(|c| Tps::constant(&table, vals[b + 2 * d + c])).collect();
            let (vp, vi, _) = self.point_eval(&self.grid.point(j), &ph, &jv, &xv);
            for (r, v) in vp.iter().chain(vi.iter()).enumerate() {
                for c in 0..nv {
                    der[j * nv * nv + r * nv + c] = v.c[1 + c];
                }
            }
        }
        (self.grid.analyze(&big, &der, nv * nv), big)
    }

    /// Reconstructs the real block vector of the physical normal coordinates q_n.
    pub fn physical_normal(&self, x: &[C64]) -> Vec<C64> {
        x.iter().map(|v| v * (self.delta * self.delta)).collect()
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }
}

impl std::fmt::Debug for RescaledNlw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RescaledNlw")
            .field("omega", &self.omega)
            .field("delta", &self.delta)
            .field("lambda", &self.lambda)
            .field("trunc", &self.trunc)
            .finish()
    }
}

/// Zero real Fourier map on the model truncation.
pub fn zero_map(model: &RescaledNlw) -> FourierMap {
    FourierMap::zeros(&model.trunc, true)
}
