//! Truncated multivariate power series (jets) over C and a scalar trait shared
//! with plain complex numbers, so model code can be evaluated on either.

use std::collections::HashMap;
use std::sync::Arc;

use crate::mode_space::C64;

const MAX_ORDER: usize = 4;

/// Monomials in `nvars` variables of total degree <= order.
#[derive(Debug)]
pub struct MonoTable {
    pub nvars: usize,
    pub order: usize,
    /// sorted variable lists
    pub monos: Vec<Vec<u16>>,
    index: HashMap<Vec<u16>, usize>,
    /// (a, b, a*b) for all pairs of admissible degree
    mul: Vec<(u32, u32, u32)>,
    /// for degree >= 1: (monomial without its last variable, that variable)
    parent: Vec<(usize, usize)>,
}

impl MonoTable {
    pub fn new(nvars: usize, order: usize) -> Arc<Self> {
        assert!(order <= MAX_ORDER, "jet order {order} too large");
        let mut monos: Vec<Vec<u16>> = vec![vec![]];
        let mut layer: Vec<Vec<u16>> = vec![vec![]];
        for _ in 0..order {
            let mut next = Vec::new();
            for m in &layer {
                let start = m.last().map(|&v| v as usize).unwrap_or(0);
                for v in start..nvars {
                    let mut e = m.clone();
                    e.push(v as u16);
                    next.push(e);
                }
            }
            monos.extend(next.iter().cloned());
            layer = next;
        }
        let index: HashMap<Vec<u16>, usize> = monos.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let mut mul = Vec::new();
        for (a, ma) in monos.iter().enumerate() {
            for (b, mb) in monos.iter().enumerate() {
                if ma.len() + mb.len() > order {
                    continue;
                }
                let mut e: Vec<u16> = ma.iter().chain(mb.iter()).copied().collect();
                e.sort_unstable();
                mul.push((a as u32, b as u32, index[&e] as u32));
            }
        }
        let parent = monos
            .iter()
            .map(|m| {
                if m.is_empty() {
                    (0, 0)
                } else {
                    (index[&m[..m.len() - 1].to_vec()], *m.last().unwrap() as usize)
                }
            })
            .collect();
        Arc::new(Self { nvars, order, monos, index, mul, parent })
    }

    pub fn len(&self) -> usize {
        self.monos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monos.is_empty()
    }

    pub fn index_of(&self, vars: &[usize]) -> Option<usize> {
        let mut e: Vec<u16> = vars.iter().map(|&v| v as u16).collect();
        e.sort_unstable();
        self.index.get(&e).copied()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.monos[i].len()
    }
}

#[derive(Clone, Debug)]
pub struct Tps {
    pub table: Arc<MonoTable>,
    pub c: Vec<C64>,
}

impl Tps {
    pub fn zero(table: &Arc<MonoTable>) -> Self {
        Self { table: table.clone(), c: vec![C64::new(0.0, 0.0); table.len()] }
    }

    pub fn constant(table: &Arc<MonoTable>, v: C64) -> Self {
        let mut t = Self::zero(table);
        t.c[0] = v;
        t
    }

    /// v + variable i
    pub fn var(table: &Arc<MonoTable>, i: usize, v: C64) -> Self {
        let mut t = Self::constant(table, v);
        if table.order >= 1 {
            t.c[1 + i] = C64::new(1.0, 0.0);
        }
        t
    }

    pub fn coeff(&self, vars: &[usize]) -> C64 {
        self.table.index_of(vars).map(|i| self.c[i]).unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn mul_tps(&self, o: &Tps) -> Tps {
        let mut out = vec![C64::new(0.0, 0.0); self.c.len()];
        for &(a, b, r) in &self.table.mul {
            let x = self.c[a as usize];
            if x.re == 0.0 && x.im == 0.0 {
                continue;
            }
            out[r as usize] += x * o.c[b as usize];
        }
        Tps { table: self.table.clone(), c: out }
    }

    fn nilpotent_series(&self, coef: &[C64]) -> Tps {
        // sum_k coef[k] N^k with N = self - self(0)
        let mut n = self.clone();
        n.c[0] = C64::new(0.0, 0.0);
        let mut acc = Tps::constant(&self.table, coef[0]);
        let mut p = Tps::constant(&self.table, C64::new(1.0, 0.0));
        for &ck in coef.iter().skip(1).take(self.table.order) {
            p = p.mul_tps(&n);
            for (a, b) in acc.c.iter_mut().zip(&p.c) {
                *a += ck * b;
            }
        }
        acc
    }

    /// Evaluates the polynomial at a point.
    pub fn eval(&self, x: &[C64]) -> C64 {
        let t = &self.table;
        let mut vals = vec![C64::new(0.0, 0.0); t.len()];
        vals[0] = C64::new(1.0, 0.0);
        let mut acc = self.c[0];
        for i in 1..t.len() {
            let (p, v) = t.parent[i];
            vals[i] = vals[p] * x[v];
            acc += self.c[i] * vals[i];
        }
        acc
    }

    /// Substitutes series in another table for the variables.
    pub fn compose(&self, args: &[Tps]) -> Tps {
        let t = &self.table;
        let target = &args[0].table;
        let mut vals: Vec<Option<Tps>> = vec![None; t.len()];
        vals[0] = Some(Tps::constant(target, C64::new(1.0, 0.0)));
        let mut acc = Tps::constant(target, self.c[0]);
        for i in 1..t.len() {
            let (p, v) = t.parent[i];
            let val = vals[p].as_ref().unwrap().mul_tps(&args[v]);
            let ci = self.c[i];
            if ci.re != 0.0 || ci.im != 0.0 {
                for (a, b) in acc.c.iter_mut().zip(&val.c) {
                    *a += ci * b;
                }
            }
            vals[i] = Some(val);
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Sum of |coefficients| of a given total degree.
    pub fn degree_mass(&self, deg: usize) -> f64 {
        (0..self.c.len()).filter(|&i| self.table.degree(i) == deg).map(|i| self.c[i].norm()).sum()
    }
}

/// Arithmetic needed by the model evaluators.
pub trait Scalar: Clone + Send + Sync {
    fn cst(&self, c: C64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn scale(&self, c: C64) -> Self;
    fn add_c(&self, c: C64) -> Self;
    fn exp(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn recip(&self) -> Self;
    fn value(&self) -> C64;
    fn lanes(&self) -> usize;
    fn write_lanes(&self, out: &mut [C64]);
    fn from_lanes(&self, v: &[C64]) -> Self;

    fn zero_like(&self) -> Self {
        self.cst(C64::new(0.0, 0.0))
    }

    fn scale_re(&self, x: f64) -> Self {
        self.scale(C64::new(x, 0.0))
    }

    fn powi(&self, p: u32) -> Self {
        let mut acc = self.cst(C64::new(1.0, 0.0));
        for _ in 0..p {
            acc = acc.mul(self);
        }
        acc
    }

    fn add_assign_scaled(&mut self, o: &Self, c: C64) {
        *self = self.add(&o.scale(c));
    }
}

impl Scalar for C64 {
    fn cst(&self, c: C64) -> Self {
        c
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn scale(&self, c: C64) -> Self {
        self * c
    }
    fn add_c(&self, c: C64) -> Self {
        self + c
    }
    fn exp(&self) -> Self {
        C64::exp(*self)
    }
    fn sqrt(&self) -> Self {
        C64::sqrt(*self)
    }
    fn recip(&self) -> Self {
        self.inv()
    }
    fn value(&self) -> C64 {
        *self
    }
    fn lanes(&self) -> usize {
        1
    }
    fn write_lanes(&self, out: &mut [C64]) {
        out[0] = *self;
    }
    fn from_lanes(&self, v: &[C64]) -> Self {
        v[0]
    }
    fn add_assign_scaled(&mut self, o: &Self, c: C64) {
        *self += o * c;
    }
}

impl Scalar for Tps {
    fn cst(&self, c: C64) -> Self {
        Tps::constant(&self.table, c)
    }
    fn add(&self, o: &Self) -> Self {
        Tps { table: self.table.clone(), c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() }
    }
    fn sub(&self, o: &Self) -> Self {
        Tps { table: self.table.clone(), c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() }
    }
    fn mul(&self, o: &Self) -> Self {
        self.mul_tps(o)
    }
    fn scale(&self, c: C64) -> Self {
        Tps { table: self.table.clone(), c: self.c.iter().map(|a| a * c).collect() }
    }
    fn add_c(&self, c: C64) -> Self {
        let mut t = self.clone();
        t.c[0] += c;
        t
    }
    fn exp(&self) -> Self {
        let e = self.c[0].exp();
        let mut coef = vec![e; self.table.order + 1];
        let mut f = 1.0;
        for (k, c) in coef.iter_mut().enumerate().skip(1) {
            f *= k as f64;
            *c = e / f;
        }
        self.nilpotent_series(&coef)
    }
    fn sqrt(&self) -> Self {
        let c0 = self.c[0];
        let r = c0.sqrt();
        let mut coef = vec![r; self.table.order + 1];
        let mut b = 1.0;
        for k in 1..coef.len() {
            b *= (0.5 - (k - 1) as f64) / k as f64;
            coef[k] = r * b / c0.powu(k as u32);
        }
        self.nilpotent_series(&coef)
    }
    fn recip(&self) -> Self {
        let c0 = self.c[0];
        let coef: Vec<C64> = (0..=self.table.order).map(|k| (-1.0f64).powi(k as i32) / c0.powu(k as u32 + 1)).collect();
        self.nilpotent_series(&coef)
    }
    fn value(&self) -> C64 {
        self.c[0]
    }
    fn lanes(&self) -> usize {
        self.c.len()
    }
    fn write_lanes(&self, out: &mut [C64]) {
        out.copy_from_slice(&self.c);
    }
    fn from_lanes(&self, v: &[C64]) -> Self {
        Tps { table: self.table.clone(), c: v.to_vec() }
    }
    fn add_assign_scaled(&mut self, o: &Self, c: C64) {
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += b * c;
        }
    }
}

/// Order-M jet of a map between subsets of the dense mode coordinates: row r is the
/// Taylor polynomial of output coordinate `outputs[r]` in the variables `inputs`.
#[derive(Clone, Debug)]
pub struct JetFunctional {
    pub table: Arc<MonoTable>,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
    pub rows: Vec<Tps>,
}

impl JetFunctional {
    pub fn order(&self) -> usize {
        self.table.order
    }

    pub fn zero(table: &Arc<MonoTable>, inputs: Vec<usize>, outputs: Vec<usize>) -> Self {
        let rows = vec![Tps::zero(table); outputs.len()];
        Self { table: table.clone(), inputs, outputs, rows }
    }

    pub fn constant(&self) -> Vec<C64> {
        self.rows.iter().map(|r| r.c[0]).collect()
    }

    /// Matrix of first derivatives, rows x inputs.
    pub fn linear(&self, r: usize, c: usize) -> C64 {
        if self.table.order == 0 {
            return C64::new(0.0, 0.0);
        }
        self.rows[r].c[1 + c]
    }

    pub fn eval(&self, x: &[C64]) -> Vec<C64> {
        self.rows.iter().map(|r| r.eval(x)).collect()
    }

    /// Substitutes series (in a common table) for the input variables.
    pub fn compose(&self, args: &[Tps]) -> Vec<Tps> {
        self.rows.iter().map(|r| r.compose(args)).collect()
    }

    /// Largest relative deviation of the first-order kernel from the two reflection
    /// symmetries: Dw_ij(q,q') = conj Dw_ij(-q,-q') and Dw_ij(q,q') = Dw_ji(-q',-q).
    /// `neg` maps a dense coordinate to the one at -q.
    pub fn symmetry_defects(&self, neg: impl Fn(usize) -> usize) -> (f64, f64) {
        let pos_in: std::collections::HashMap<usize, usize> = self.inputs.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let pos_out: std::collections::HashMap<usize, usize> = self.outputs.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut scale: f64 = 0.0;
        let (mut s1, mut s2): (f64, f64) = (0.0, 0.0);
        for (r, &row) in self.outputs.iter().enumerate() {
            for (c, &col) in self.inputs.iter().enumerate() {
                let v = self.linear(r, c);
                scale = scale.max(v.norm());
                if let (Some(&r2), Some(&c2)) = (pos_out.get(&neg(row)), pos_in.get(&neg(col))) {
                    s1 = s1.max((v - self.linear(r2, c2).conj()).norm());
                }
                if let (Some(&r3), Some(&c3)) = (pos_out.get(&neg(col)), pos_in.get(&neg(row))) {
                    s2 = s2.max((v - self.linear(r3, c3)).norm());
                }
            }
        }
        if scale == 0.0 {
            (0.0, 0.0)
        } else {
            (s1 / scale, s2 / scale)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn table_sizes() {
        assert_eq!(MonoTable::new(3, 2).len(), 10);
        assert_eq!(MonoTable::new(4, 3).len(), 35);
        assert_eq!(MonoTable::new(156, 1).len(), 157);
    }

    #[test]
    fn exp_sqrt_match_taylor() {
        let t = MonoTable::new(1, 4);
        let x = Tps::var(&t, 0, c(0.3));
        let e = x.exp();
        for k in 0..=4 {
            let f: f64 = (1..=k).map(|i| i as f64).product();
            assert!((e.c[k] - c(0.3f64.exp() / f)).norm() < 1e-15);
        }
        let s = Tps::var(&t, 0, c(4.0)).sqrt();
        // sqrt(4 + x) = 2 + x/4 - x^2/64 + x^3/512 - 5x^4/16384
        let want = [2.0, 0.25, -1.0 / 64.0, 1.0 / 512.0, -5.0 / 16384.0];
        for k in 0..5 {
            assert!((s.c[k] - c(want[k])).norm() < 1e-15);
        }
        let r = Tps::var(&t, 0, c(2.0)).recip().mul(&Tps::var(&t, 0, c(2.0)));
        assert!((r.c[0] - c(1.0)).norm() < 1e-15 && r.c[1..].iter().all(|v| v.norm() < 1e-15));
        let sq = s.mul(&s);
        assert!((sq.c[0] - c(4.0)).norm() < 1e-14 && (sq.c[1] - c(1.0)).norm() < 1e-15);
        assert!(sq.c[2..].iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn mul_truncates() {
        let t = MonoTable::new(2, 2);
        let x = Tps::var(&t, 0, c(1.0));
        let y = Tps::var(&t, 1, c(0.0));
        let p = x.mul(&y).mul(&y);
        // (1+x) y^2 -> y^2 only
        assert_eq!(p.coeff(&[1, 1]), c(1.0));
        assert_eq!(p.coeff(&[0, 1]), c(0.0));
        assert_eq!(p.c.iter().filter(|v| v.norm() > 0.0).count(), 1);
    }

    #[test]
    fn eval_and_compose_agree() {
        let t = MonoTable::new(2, 3);
        let x = Tps::var(&t, 0, c(0.0));
        let y = Tps::var(&t, 1, c(0.0));
        let p = x.mul(&x).add(&y.scale(C64::new(0.0, 2.0))).add(&x.mul(&y).mul(&y)).add_c(c(1.5));
        let pt = [C64::new(0.2, -0.1), C64::new(-0.4, 0.3)];
        let direct = c(1.5) + pt[0] * pt[0] + C64::new(0.0, 2.0) * pt[1] + pt[0] * pt[1] * pt[1];
        assert!((p.eval(&pt) - direct).norm() < 1e-15);
        let u = MonoTable::new(1, 3);
        let args = [Tps::var(&u, 0, pt[0]), Tps::constant(&u, pt[1])];
        let comp = p.compose(&args);
        assert!((comp.c[0] - direct).norm() < 1e-15);
        // d/ds at s=0 of p(pt0 + s, pt1) = 2 pt0 + pt1^2
        assert!((comp.c[1] - (pt[0] * 2.0 + pt[1] * pt[1])).norm() < 1e-15);
    }
}
