//! Taylor maps for one-slot kernels on a one-dimensional grid.
//!
//! For a kernel V(x; dy) the identity
//!   𝒳^a V = Σ_{|a+b|<l} (−1)^{|b|} C(a+b, a) ∂^b 𝐋(v^{a+b})
//!         + Σ_{|a+b|=l} |b| (−1)^{|b|} C(a+b, a) ∫_0^1 (1−τ)^{|b|−1} ∂^b 𝐙_τ V^{a+b} dτ
//! with v^c = 𝐈(𝒳^c V) and V^c = 𝒳^c V is checked weakly, by pairing both
//! sides with ψ(x)φ(y). Derivatives of φ are centred finite differences of
//! fourth order on the grid step.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Fault, Result};
use crate::flow::contract::DenseKernel;
use crate::quad::gauss_legendre;

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Fornberg weights for the `order`-th derivative at 0 on nodes `x`.
pub fn fd_weights(x: &[f64], order: usize) -> Vec<f64> {
    let n = x.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0];
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i];
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[order]).collect()
}

/// Fourth-order centred finite-difference derivative of a test function.
pub struct FdDerivative {
    h: f64,
    stencils: Vec<(Vec<f64>, Vec<f64>)>,
}

impl FdDerivative {
    pub fn new(h: f64, max_order: usize) -> Self {
        let stencils = (0..=max_order)
            .map(|k| {
                let p = 2 + (k.max(1) - 1) / 2;
                let nodes: Vec<f64> = (-(p as i64)..=p as i64).map(|j| j as f64).collect();
                let w = fd_weights(&nodes, k);
                (nodes, w)
            })
            .collect();
        FdDerivative { h, stencils }
    }

    pub fn eval(&self, f: &dyn Fn(f64) -> f64, x: f64, k: usize) -> f64 {
        if k == 0 {
            return f(x);
        }
        let (nodes, w) = &self.stencils[k];
        let s: f64 = nodes.iter().zip(w).map(|(n, w)| w * f(x + n * self.h)).sum();
        s / self.h.powi(k as i32)
    }
}

/// Moment weight 𝒳^b V(x; y) = (y − x)^b / b! · V(x; y), with the
/// displacement taken as the shortest periodic representative.
pub fn moment_weight(v: &DenseKernel, b: u32) -> DenseKernel {
    let spec = v.spec;
    let n = spec.n;
    let mut out = v.clone();
    for x in 0..n {
        for y in 0..n {
            let mut dy = y as i64 - x as i64;
            if dy > (n / 2) as i64 {
                dy -= n as i64;
            } else if dy < -((n / 2) as i64) {
                dy += n as i64;
            }
            let z = dy as f64 * spec.dx();
            out.data[x * n + y] *= z.powi(b as i32) / factorial(b);
        }
    }
    out
}

/// 𝐈V(x) = Σ_y V(x; y) Δx.
pub fn map_i(v: &DenseKernel) -> Vec<f64> {
    let n = v.spec.n;
    let dx = v.spec.dx();
    (0..n).map(|x| v.data[x * n..(x + 1) * n].iter().sum::<f64>() * dx).collect()
}

/// 𝐋v(x; y) = v(x) δ(y − x) as a grid density.
pub fn map_l(spec: crate::lattice::LatticeSpec, v: &[f64]) -> Result<DenseKernel> {
    let dx = spec.dx();
    DenseKernel::from_fn(spec, 1, 1, |ix| if ix[0] == ix[1] { v[ix[0]] / dx } else { 0.0 })
}

/// Weak pairings ⟨𝒳^a V, ψ⊗φ⟩ (direct) and ⟨𝐗^a_l(v, V), ψ⊗φ⟩
/// (reconstructed).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaylorCheck {
    pub direct: f64,
    pub reconstructed: f64,
}

impl TaylorCheck {
    pub fn discrepancy(&self) -> f64 {
        (self.direct - self.reconstructed).abs()
    }
}

/// Evaluates both sides of the Taylor identity for a one-slot kernel on
/// a d = 1 grid.
pub fn taylor_decompose(
    v: &DenseKernel,
    a: u32,
    l: u32,
    psi: &dyn Fn(f64) -> f64,
    phi: &dyn Fn(f64) -> f64,
) -> Result<TaylorCheck> {
    if a >= l {
        return Err(Fault::validation("need |a| < l"));
    }
    if v.spec.d != 1 || v.bases != 1 || v.arity != 1 {
        return Err(Fault::validation("Taylor maps are realised for one-slot kernels on d = 1 grids"));
    }
    let spec = v.spec;
    let n = spec.n;
    let dx = spec.dx();
    let fd = FdDerivative::new(dx, l as usize);
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * dx).collect();
    // direct side
    let va = moment_weight(v, a);
    let mut direct = 0.0;
    for x in 0..n {
        for y in 0..n {
            direct += va.data[x * n + y] * psi(xs[x]) * phi(xs[y]) * dx * dx;
        }
    }
    // local part: Σ_b C(a+b, a) v^{a+b}(x) ψ(x) ∂^b φ(x); the sign of
    // (−1)^{|b|} cancels against the integration by parts
    let mut recon = 0.0;
    for b in 0..(l - a) {
        let vb = map_i(&moment_weight(v, a + b));
        let c = binomial(a + b, a);
        for x in 0..n {
            recon += c * vb[x] * psi(xs[x]) * fd.eval(phi, xs[x], b as usize) * dx;
        }
    }
    // remainder: b = l − a
    let b = l - a;
    let vl = moment_weight(v, l);
    let (tn, tw) = gauss_legendre(8);
    let c = b as f64 * binomial(l, a);
    for (t, w) in tn.iter().zip(&tw) {
        let tau = 0.5 * (t + 1.0);
        let wt = 0.5 * w * (1.0 - tau).powi(b as i32 - 1);
        for x in 0..n {
            for y in 0..n {
                let val = vl.data[x * n + y];
                if val == 0.0 {
                    continue;
                }
                let mut dy = y as i64 - x as i64;
                if dy > (n / 2) as i64 {
                    dy -= n as i64;
                } else if dy < -((n / 2) as i64) {
                    dy += n as i64;
                }
                let yt = xs[x] + tau * dy as f64 * dx;
                recon += c * wt * val * psi(xs[x]) * fd.eval(phi, yt, b as usize) * dx * dx;
            }
        }
    }
    Ok(TaylorCheck { direct, reconstructed: recon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpec;

    #[test]
    fn fd_weights_second_derivative() {
        let w = fd_weights(&[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let expect = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
        assert!(w.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn local_kernel_reconstructs_itself() {
        let spec = LatticeSpec::space(1, 32, 0.5).unwrap();
        let v: Vec<f64> = (0..32).map(|i| 1.0 + (i as f64 * spec.dx()).sin()).collect();
        let k = map_l(spec, &v).unwrap();
        let iv = map_i(&k);
        assert!(iv.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-13));
        for b in 1..3 {
            assert!(map_i(&moment_weight(&k, b)).iter().all(|x| x.abs() < 1e-15));
        }
        let c = taylor_decompose(&k, 0, 2, &|x| x.cos(), &|y| (2.0 * y).sin()).unwrap();
        assert!(c.discrepancy() < 1e-13);
        assert!(taylor_decompose(&k, 2, 2, &|x| x, &|y| y).is_err());
    }

    fn two_point(n: usize) -> DenseKernel {
        let spec = LatticeSpec::space(1, n, 0.5).unwrap();
        let dx = spec.dx();
        DenseKernel::from_fn(spec, 1, 1, |ix| {
            let x = ix[0] as f64 * dx;
            let mut z = (ix[1] as f64 - ix[0] as f64) * dx;
            if z > core::f64::consts::PI {
                z -= 2.0 * core::f64::consts::PI;
            } else if z < -core::f64::consts::PI {
                z += 2.0 * core::f64::consts::PI;
            }
            let u = z / 0.5;
            let bump = if u.abs() < 1.0 { (-1.0 / (1.0 - u * u)).exp() } else { 0.0 };
            (1.0 + 0.5 * x.cos()) * (1.0 + z) * bump
        })
        .unwrap()
    }

    #[test]
    fn two_point_kernel_error_shrinks() {
        for (a, l) in [(0, 2), (1, 2), (0, 3)] {
            let errs: Vec<f64> = [64, 128, 256]
                .iter()
                .map(|&n| {
                    taylor_decompose(&two_point(n), a, l, &|x| (x.sin() + 2.0).recip(), &|y| (3.0 * y).cos())
                        .unwrap()
                        .discrepancy()
                })
                .collect();
            assert!(errs[1] <= errs[0] / 4.0 && errs[2] <= errs[1] / 4.0, "{a} {l} {errs:?}");
        }
    }
}
