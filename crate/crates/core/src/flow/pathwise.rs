//! Pathwise effective force as a power series in λ.
//!
//! At scale μ the effective force is F_μ[φ] = F[u] with
//! u = φ + (G − G_μ) ∗ F[u]. Expanding in λ gives a closed recursion:
//! the order-i part of F[u] only involves u^j for j < i.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Fault, Result};
use crate::kernels::{convolve, KernelKind, SpectralKernel};
use crate::lattice::{Domain, Field};
use crate::model::{spectral_derivative, CoefKey, ForceCoefficients};

/// Largest field count (order × slices × points) the expansion will hold.
pub const MEMORY_BUDGET: usize = 1 << 28;

fn fluctuation(spec: crate::lattice::LatticeSpec, mu: f64) -> Result<Option<SpectralKernel>> {
    if mu == 0.0 {
        return Ok(None);
    }
    SpectralKernel::new(spec, KernelKind::Fluctuation { mu }).map(Some)
}

/// Ordered tuples of `slots` non-negative integers summing to `total`.
fn compositions(total: usize, slots: usize) -> Vec<Vec<usize>> {
    if slots == 0 {
        return if total == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, slots - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Order-`i` part of the nonlinearity Σ (−1)^{|a|} f Π ∂^{a_q} u, with
/// λ^j carried by the order index rather than by the value.
fn force_order(coefs: &ForceCoefficients, u: &[Field], i: usize, like: &Field) -> Field {
    let spec = like.spec;
    let mut out = Field::zeros(spec, like.domain);
    let ns = spec.n_space();
    for (key, c) in &coefs.terms {
        let j = key.i as usize;
        if j > i || *c == 0.0 {
            continue;
        }
        let sign = if key.total_derivatives() % 2 == 1 { -1.0 } else { 1.0 };
        for comp in compositions(i - j, key.m as usize) {
            if comp.iter().any(|&o| o >= u.len()) {
                continue;
            }
            for s in 0..like.n_slices() {
                let mut prod = vec![sign * c; ns];
                for (q, &o) in comp.iter().enumerate() {
                    let vals = derivative_slice(&u[o], s, &key.a[q]);
                    prod.iter_mut().zip(&vals).for_each(|(p, v)| *p *= v);
                }
                out.slice_mut(s).iter_mut().zip(&prod).for_each(|(o, p)| *o += p);
            }
        }
    }
    out
}

fn derivative_slice(f: &Field, s: usize, a: &crate::model::SpIndex) -> Vec<f64> {
    spectral_derivative(&f.spec, f.slice(s), a)
}

fn check_budget(order: usize, like: &Field) -> Result<()> {
    let cost = (order + 1) * 3 * like.data.len();
    if cost > MEMORY_BUDGET {
        return Err(Fault::validation(format!(
            "expansion to order {order} needs about {} MiB, above the {} MiB budget",
            cost * 8 >> 20,
            MEMORY_BUDGET * 8 >> 20
        )));
    }
    Ok(())
}

/// Coefficients F^0, …, F^order of the effective force F_μ[φ], where φ is
/// itself given as a λ-series `phi` (missing orders are zero).
pub fn effective_force(
    coefs: &ForceCoefficients,
    noise: &Field,
    phi: &[Field],
    mu: f64,
    order: usize,
) -> Result<Vec<Field>> {
    if noise.domain != Domain::SpaceTime {
        return Err(Fault::validation("noise must be a space-time field"));
    }
    check_budget(order, noise)?;
    for p in phi {
        if !p.spec.same_grid(&noise.spec) || p.data.len() != noise.data.len() {
            return Err(Fault::validation("phi series and noise live on different lattices"));
        }
    }
    let h = fluctuation(noise.spec, mu)?;
    let mut forces: Vec<Field> = Vec::with_capacity(order + 1);
    let mut u: Vec<Field> = Vec::with_capacity(order + 1);
    for i in 0..=order {
        let f = if i == 0 { noise.clone() } else { force_order(coefs, &u, i, noise) };
        let mut ui = match &h {
            Some(k) => convolve(k, &f)?,
            None => Field::zeros(noise.spec, Domain::SpaceTime),
        };
        if let Some(p) = phi.get(i) {
            ui.axpy(1.0, p);
        }
        forces.push(f);
        u.push(ui);
    }
    for f in &forces {
        f.check_finite()?;
    }
    Ok(forces)
}

/// Pathwise coefficients f^i = F^{i,0}_{ν,1} and Ψ^i = (G − G_1) ∗ f^i.
#[derive(Clone, Debug)]
pub struct PathwiseExpansion {
    pub f: Vec<Field>,
    pub psi: Vec<Field>,
}

impl PathwiseExpansion {
    /// Σ_{i ≤ order} λ^i Ψ^i.
    pub fn psi_sum(&self, lambda: f64, order: usize) -> Field {
        let mut out = self.psi[0].clone();
        for i in 1..=order.min(self.psi.len() - 1) {
            out.axpy(lambda.powi(i as i32), &self.psi[i]);
        }
        out
    }

    /// Σ_{i ≤ order} λ^i f^i.
    pub fn f_sum(&self, lambda: f64, order: usize) -> Field {
        let mut out = self.f[0].clone();
        for i in 1..=order.min(self.f.len() - 1) {
            out.axpy(lambda.powi(i as i32), &self.f[i]);
        }
        out
    }
}

/// Runs the recursion f^0 = Ξ, f^i = [F(Σ λ^j Ψ^j)]^i at μ = 1 (φ = 0).
/// Slices closer than 2(order + 1) to the window start carry truncated
/// history.
pub fn expand_pathwise(coefs: &ForceCoefficients, noise: &Field, order: usize) -> Result<PathwiseExpansion> {
    let f = effective_force(coefs, noise, &[], 1.0, order)?;
    let h = SpectralKernel::new(noise.spec, KernelKind::Fluctuation { mu: 1.0 })?;
    let psi = f.iter().map(|fi| convolve(&h, fi)).collect::<Result<Vec<_>>>()?;
    Ok(PathwiseExpansion { f, psi })
}

/// Sup norm of Ψ_{≤I} − (G − G_1) ∗ F_ν[Ψ_{≤I}] over slices at or after
/// `t_from`, with F_ν evaluated at the given λ.
pub fn stationary_residual(
    coefs: &ForceCoefficients,
    noise: &Field,
    exp: &PathwiseExpansion,
    lambda: f64,
    order: usize,
    t_from: f64,
) -> Result<f64> {
    let psi = exp.psi_sum(lambda, order);
    let c = ForceCoefficients { lambda, ..coefs.clone() };
    let force = crate::model::evaluate_force(&c, &psi, noise)?;
    let h = SpectralKernel::new(noise.spec, KernelKind::Fluctuation { mu: 1.0 })?;
    let image = convolve(&h, &force)?;
    let j0 = noise.spec.slice_at(t_from);
    let mut worst: f64 = 0.0;
    for j in j0..psi.n_slices() {
        for (a, b) in psi.slice(j).iter().zip(image.slice(j)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Coefficient-wise residual of F_μ[φ] = F_η[φ + (G_η − G_μ) ∗ F_μ[φ]]
/// for orders 0..=order, maximised over slices at or after `t_from`.
pub fn semigroup_residual(
    coefs: &ForceCoefficients,
    noise: &Field,
    phi: &Field,
    mu: f64,
    eta: f64,
    order: usize,
    t_from: f64,
) -> Result<Vec<f64>> {
    if !(eta < mu) {
        return Err(Fault::validation("need eta < mu"));
    }
    let lhs = effective_force(coefs, noise, core::slice::from_ref(phi), mu, order)?;
    let band = SpectralKernel::new(noise.spec, KernelKind::Band { eta, mu })?;
    let mut shifted = Vec::with_capacity(order + 1);
    for (i, f) in lhs.iter().enumerate() {
        let mut s = convolve(&band, f)?;
        if i == 0 {
            s.axpy(1.0, phi);
        }
        shifted.push(s);
    }
    let rhs = effective_force(coefs, noise, &shifted, eta, order)?;
    let j0 = noise.spec.slice_at(t_from);
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(a, b)| {
            let mut w: f64 = 0.0;
            for j in j0..a.n_slices() {
                for (x, y) in a.slice(j).iter().zip(b.slice(j)) {
                    w = w.max((x - y).abs());
                }
            }
            w
        })
        .collect())
}

/// Convenience: coefficients of the linear model f^{1,1,0} = c.
pub fn linear_model(nu: f64, c: f64) -> ForceCoefficients {
    ForceCoefficients::explicit(nu, 1.0, vec![(CoefKey::plain(1, 1), c)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpec;

    fn setup() -> (Field, Field) {
        let spec = LatticeSpec::new(1, 32, 0.05, 0.0, 3.0, 0.5).unwrap();
        let noise = Field::space_time_fn(spec, |t, x| (3.0 * t).sin() * x[0].cos() + 0.3 * (2.0 * x[0] + t).sin());
        let phi = Field::space_time_fn(spec, |t, x| 0.5 * (x[0] - t).cos());
        (noise, phi)
    }

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(2, 3).len(), 6);
        assert_eq!(compositions(0, 2), vec![vec![0, 0]]);
    }

    #[test]
    fn linear_single_tree() {
        let (noise, _) = setup();
        let exp = expand_pathwise(&linear_model(0.1, 0.7), &noise, 1).unwrap();
        let h = SpectralKernel::new(noise.spec, KernelKind::Fluctuation { mu: 1.0 }).unwrap();
        let expect = convolve(&h, &noise).unwrap().scaled(0.7);
        let diff = exp.f[1].data.iter().zip(&expect.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-13);
    }

    #[test]
    fn semigroup_identity_is_exact() {
        let (noise, phi) = setup();
        let c = ForceCoefficients::explicit(
            0.1,
            1.0,
            vec![(CoefKey::plain(1, 1), 0.4), (CoefKey::plain(1, 3), -1.0), (CoefKey::plain(2, 1), 0.2)],
        );
        let r = semigroup_residual(&c, &noise, &phi, 1.0, 0.5, 2, 0.0).unwrap();
        assert!(r.iter().all(|v| *v < 1e-10), "{r:?}");
    }
}
