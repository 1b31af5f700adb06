//! Contraction maps on dense space-only kernels.
//!
//! A kernel with `bases` base points and `arity` slots is stored as a
//! density on the grid, indexed (x_1, …, x_bases, y_1, …, y_arity) with
//! the first index outermost. Measures are density × Δx^d per variable.
//! The propagator argument is a real-space density g on the grid.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Fault, Result};
use crate::lattice::LatticeSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseKernel {
    pub spec: LatticeSpec,
    pub bases: usize,
    pub arity: usize,
    pub data: Vec<f64>,
}

impl DenseKernel {
    pub fn zeros(spec: LatticeSpec, bases: usize, arity: usize) -> Result<Self> {
        let len = spec.n_space().checked_pow((bases + arity) as u32).filter(|l| *l <= 1 << 26);
        match len {
            Some(l) => Ok(DenseKernel { spec, bases, arity, data: vec![0.0; l] }),
            None => Err(Fault::validation("dense kernel too large for this lattice")),
        }
    }

    /// Builds a kernel from a function of the grid indices.
    pub fn from_fn(spec: LatticeSpec, bases: usize, arity: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut k = DenseKernel::zeros(spec, bases, arity)?;
        let n = spec.n_space();
        let vars = bases + arity;
        let mut idx = vec![0usize; vars];
        for (flat, v) in k.data.iter_mut().enumerate() {
            let mut r = flat;
            for slot in (0..vars).rev() {
                idx[slot] = r % n;
                r /= n;
            }
            *v = f(&idx);
        }
        Ok(k)
    }

    fn npts(&self) -> usize {
        self.spec.n_space()
    }

    /// sup over the first base of Σ_slots sup_{other bases} |V| Δ^arity.
    pub fn norm(&self) -> f64 {
        let n = self.npts();
        let vol = self.spec.cell_volume();
        let inner = n.pow(self.arity as u32);
        let others = n.pow(self.bases as u32 - 1);
        let mut best: f64 = 0.0;
        for x in 0..n {
            let mut total = 0.0;
            for s in 0..inner {
                let mut m: f64 = 0.0;
                for o in 0..others {
                    m = m.max(self.data[(x * others + o) * inner + s].abs());
                }
                total += m;
            }
            best = best.max(total * vol.powi(self.arity as i32));
        }
        best
    }

    pub fn linear_combination(a: f64, x: &DenseKernel, b: f64, y: &DenseKernel) -> Result<DenseKernel> {
        if x.bases != y.bases || x.arity != y.arity || !x.spec.same_grid(&y.spec) {
            return Err(Fault::validation("kernel shapes differ"));
        }
        let data = x.data.iter().zip(&y.data).map(|(u, v)| a * u + b * v).collect();
        Ok(DenseKernel { data, ..x.clone() })
    }
}

/// Flat index of the grid point `a − b` (periodic).
fn diff_index(spec: &LatticeSpec, a: usize, b: usize) -> usize {
    let n = spec.n;
    let mut out = 0;
    let mut stride = 1;
    let (mut ra, mut rb) = (a, b);
    for _ in 0..spec.d {
        let da = ra % n;
        let db = rb % n;
        out += ((da + n - db) % n) * stride;
        stride *= n;
        ra /= n;
        rb /= n;
    }
    out
}

/// L¹ norm Σ|g| Δx^d of a propagator density.
pub fn propagator_norm(spec: &LatticeSpec, g: &[f64]) -> f64 {
    g.iter().map(|v| v.abs()).sum::<f64>() * spec.cell_volume()
}

/// B(G, W, U)(x; y_W, y_U) = Σ_{y, x'} W(x; y, y_W) g(y − x') U(x'; y_U),
/// W's first slot being the contracted one.
pub fn contract_b(g: &[f64], w: &DenseKernel, u: &DenseKernel) -> Result<DenseKernel> {
    if w.bases != 1 || u.bases != 1 || w.arity == 0 {
        return Err(Fault::validation("arity mismatch: B needs W with a distinguished slot and single-base W, U"));
    }
    if !w.spec.same_grid(&u.spec) || g.len() != w.npts() {
        return Err(Fault::validation("contraction inputs live on different lattices"));
    }
    let spec = w.spec;
    let n = w.npts();
    let vol = spec.cell_volume();
    let aw = w.arity - 1;
    let au = u.arity;
    let nw = n.pow(aw as u32);
    let nu = n.pow(au as u32);
    // P(y; y_U) = Σ_{x'} g(y − x') U(x'; y_U) Δ
    let mut p = vec![0.0; n * nu];
    for y in 0..n {
        for xp in 0..n {
            let gv = g[diff_index(&spec, y, xp)];
            if gv == 0.0 {
                continue;
            }
            let row = &u.data[xp * nu..(xp + 1) * nu];
            for (s, v) in row.iter().enumerate() {
                p[y * nu + s] += gv * v * vol;
            }
        }
    }
    let mut out = DenseKernel::zeros(spec, 1, aw + au)?;
    for x in 0..n {
        for y in 0..n {
            for sw in 0..nw {
                let wv = w.data[(x * n + y) * nw + sw] * vol;
                if wv == 0.0 {
                    continue;
                }
                let base = (x * nw + sw) * nu;
                for su in 0..nu {
                    out.data[base + su] += wv * p[y * nu + su];
                }
            }
        }
    }
    Ok(out)
}

/// A(G, V)(x_1; y_1, y_2) = Σ_{x_2, y} V(x_1, x_2; y, y_1, y_2) g(y − x_2),
/// where V has two bases and its first slot is the contracted one.
pub fn contract_a(g: &[f64], v: &DenseKernel) -> Result<DenseKernel> {
    if v.bases != 2 || v.arity == 0 {
        return Err(Fault::validation("arity mismatch: A needs a two-base kernel with a distinguished slot"));
    }
    if g.len() != v.npts() {
        return Err(Fault::validation("contraction inputs live on different lattices"));
    }
    let spec = v.spec;
    let n = v.npts();
    let vol = spec.cell_volume();
    let rest = n.pow(v.arity as u32 - 1);
    let mut out = DenseKernel::zeros(spec, 1, v.arity - 1)?;
    for x1 in 0..n {
        for x2 in 0..n {
            for y in 0..n {
                let gv = g[diff_index(&spec, y, x2)] * vol * vol;
                if gv == 0.0 {
                    continue;
                }
                let src = ((x1 * n + x2) * n + y) * rest;
                let dst = x1 * rest;
                for s in 0..rest {
                    out.data[dst + s] += gv * v.data[src + s];
                }
            }
        }
    }
    Ok(out)
}

/// Density of the identity propagator δ.
pub fn delta_density(spec: &LatticeSpec) -> Vec<f64> {
    let mut g = vec![0.0; spec.n_space()];
    g[0] = 1.0 / spec.cell_volume();
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> LatticeSpec {
        LatticeSpec::space(1, 8, 0.5).unwrap()
    }

    fn smooth(seed: f64, bases: usize, arity: usize) -> DenseKernel {
        DenseKernel::from_fn(spec(), bases, arity, |ix| {
            ix.iter().enumerate().map(|(q, &i)| (seed + 0.7 * q as f64 + 0.9 * i as f64).sin()).product()
        })
        .unwrap()
    }

    fn g_smooth() -> Vec<f64> {
        (0..8).map(|i| (0.3 * i as f64).cos() - 0.2).collect()
    }

    #[test]
    fn b_delta_collapse() {
        let s = spec();
        let vol = s.cell_volume();
        let w_of = |x: usize| 1.0 + 0.1 * x as f64;
        let u_of = |x: usize| (x as f64).sin();
        let w = DenseKernel::from_fn(s, 1, 1, |ix| if ix[0] == ix[1] { w_of(ix[0]) / vol } else { 0.0 }).unwrap();
        let u = DenseKernel::from_fn(s, 1, 0, |ix| u_of(ix[0])).unwrap();
        let r = contract_b(&delta_density(&s), &w, &u).unwrap();
        for x in 0..8 {
            assert!((r.data[x] - w_of(x) * u_of(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn b_bound_and_bilinearity() {
        let g = g_smooth();
        let (w1, w2, u) = (smooth(0.1, 1, 2), smooth(1.3, 1, 2), smooth(2.0, 1, 1));
        let r = contract_b(&g, &w1, &u).unwrap();
        assert!(r.norm() <= propagator_norm(&spec(), &g) * w1.norm() * u.norm() * (1.0 + 1e-12));
        let lhs = contract_b(&g, &DenseKernel::linear_combination(2.0, &w1, -0.5, &w2).unwrap(), &u).unwrap();
        let rhs = DenseKernel::linear_combination(2.0, &r, -0.5, &contract_b(&g, &w2, &u).unwrap()).unwrap();
        assert!(lhs.data.iter().zip(&rhs.data).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn a_delta_trace_bound_linearity() {
        let s = spec();
        let vol = s.cell_volume();
        let v_of = |x1: usize, x2: usize, y: usize, y1: usize| {
            (x1 as f64 + 2.0 * x2 as f64).cos() * (y1 as f64).sin() + 0.1 * y as f64
        };
        let v = DenseKernel::from_fn(s, 2, 2, |ix| v_of(ix[0], ix[1], ix[2], ix[3])).unwrap();
        let r = contract_a(&delta_density(&s), &v).unwrap();
        for x1 in 0..8 {
            for y1 in 0..8 {
                let expect: f64 = (0..8).map(|x2| v_of(x1, x2, x2, y1)).sum::<f64>() * vol;
                assert!((r.data[x1 * 8 + y1] - expect).abs() < 1e-12);
            }
        }
        let g1 = g_smooth();
        let g2: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let vv = smooth(0.4, 2, 2);
        let r1 = contract_a(&g1, &vv).unwrap();
        assert!(r1.norm() <= propagator_norm(&s, &g1) * vv.norm() * (1.0 + 1e-12));
        let sum: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        let lhs = contract_a(&sum, &vv).unwrap();
        let r2 = contract_a(&g2, &vv).unwrap();
        assert!(lhs.data.iter().zip(r1.data.iter().zip(&r2.data)).all(|(a, (b, c))| (a - b - c).abs() < 1e-12));
    }

    #[test]
    fn arity_mismatch() {
        let u = smooth(0.0, 1, 0);
        assert!(contract_b(&g_smooth(), &u, &u).is_err());
        assert!(contract_a(&g_smooth(), &u).is_err());
    }
}
