//! Heat-type kernels, their temporal cutoffs, the regularising kernels
//! K_μ, J_ν and the operators P_μ, R_ν, Q. Everything is stored as
//! Fourier multipliers in space; time is handled slice by slice.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64 as C64;
use num_traits::Float;

use crate::error::{Fault, Result};
use crate::lattice::{forward_slice, inverse_slice, Domain, Field, LatticeSpec};
use crate::quad;

pub const DEFAULT_EPS: f64 = 0.05;

/// Default smoothing power g = ⌈σ⌉ + 2.
pub fn default_g(sigma: f64) -> u32 {
    sigma.ceil() as u32 + 2
}

fn h(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

fn h_prime(s: f64) -> f64 {
    if s > 0.0 {
        h(s) / (s * s)
    } else {
        0.0
    }
}

/// Smooth step: 0 on (−∞, 1], 1 on [2, ∞).
pub fn chi(t: f64) -> f64 {
    if t <= 1.0 {
        0.0
    } else if t >= 2.0 {
        1.0
    } else {
        let a = h(t - 1.0);
        a / (a + h(2.0 - t))
    }
}

pub fn chi_prime(t: f64) -> f64 {
    if t <= 1.0 || t >= 2.0 {
        return 0.0;
    }
    let (a, b) = (h(t - 1.0), h(2.0 - t));
    (h_prime(t - 1.0) * b + a * h_prime(2.0 - t)) / ((a + b) * (a + b))
}

/// Spacetime multi-index: `a[0]` counts time powers, the rest are spatial.
pub type StIndex = [u32; 4];

pub fn st_factorial(a: &StIndex) -> f64 {
    a.iter().map(|&k| (1..=k).map(|j| j as f64).product::<f64>()).product()
}

/// Parabolic size [a] = σ·å + |ā|.
pub fn st_weight(a: &StIndex, sigma: f64) -> f64 {
    sigma * a[0] as f64 + a[1..].iter().map(|&k| k as f64).sum::<f64>()
}

/// σ_♦ = σ for even integers σ, ⌈σ⌉ − 1 otherwise.
pub fn sigma_diamond(sigma: f64) -> f64 {
    let r = sigma.round();
    if (sigma - r).abs() < 1e-12 && (r as i64) % 2 == 0 && r > 0.0 {
        sigma
    } else {
        sigma.ceil() - 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelKind {
    /// Fractional heat kernel G.
    Heat,
    /// Space-only heat semigroup at a fixed time.
    HeatAt { t: f64 },
    /// G_μ = χ(t/μ)G.
    CutoffHeat { mu: f64 },
    /// G − G_μ.
    Fluctuation { mu: f64 },
    /// G_η − G_μ for η < μ.
    Band { eta: f64, mu: f64 },
    /// 𝒳^a Ġ_μ with a purely temporal weight.
    DotG { mu: f64, time_power: u32 },
    /// μ^{−1}χ'(t/μ)G, the defect (∂_t + A)(G − G_μ) − δ.
    CutoffRate { mu: f64 },
    /// K_μ^{*g}.
    K { mu: f64, g: u32 },
    /// J_ν (space only).
    J { nu: f64, eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralKernel {
    pub spec: LatticeSpec,
    pub kind: KernelKind,
}

impl SpectralKernel {
    pub fn new(spec: LatticeSpec, kind: KernelKind) -> Result<Self> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Fault::validation(format!("{name} must be positive")))
            }
        };
        match kind {
            KernelKind::Heat => {}
            KernelKind::HeatAt { t } => {
                if t < 0.0 {
                    return Err(Fault::validation("heat semigroup at negative time"));
                }
            }
            KernelKind::CutoffHeat { mu } | KernelKind::Fluctuation { mu } => positive(mu, "mu")?,
            KernelKind::Band { eta, mu } => {
                positive(eta, "eta")?;
                positive(mu, "mu")?;
            }
            KernelKind::DotG { mu, .. } | KernelKind::CutoffRate { mu } => positive(mu, "mu")?,
            KernelKind::K { mu, g } => {
                positive(mu, "mu")?;
                if g == 0 {
                    return Err(Fault::validation("g must be at least 1"));
                }
            }
            KernelKind::J { nu, eps } => {
                positive(nu, "nu")?;
                if !(eps >= 0.0 && eps < spec.sigma) {
                    return Err(Fault::validation("eps must lie in [0, sigma)"));
                }
            }
        }
        Ok(SpectralKernel { spec, kind })
    }

    /// Time interval outside which the kernel vanishes; `None` means unbounded.
    pub fn time_support(&self) -> (f64, Option<f64>) {
        match self.kind {
            KernelKind::Heat | KernelKind::K { .. } => (0.0, None),
            KernelKind::HeatAt { t } => (t, Some(t)),
            KernelKind::J { .. } => (0.0, Some(0.0)),
            KernelKind::CutoffHeat { mu } => (mu, None),
            KernelKind::Fluctuation { mu } => (0.0, Some(2.0 * mu)),
            KernelKind::Band { eta, mu } => (eta.min(mu), Some(2.0 * eta.max(mu))),
            KernelKind::DotG { mu, .. } | KernelKind::CutoffRate { mu } => (mu, Some(2.0 * mu)),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        !matches!(self.kind, KernelKind::HeatAt { .. } | KernelKind::J { .. })
    }

    /// Multiplier at time lag `t` and spatial frequency norm `k` for the
    /// heat family (zero for `t < 0`).
    pub fn heat_multiplier(&self, t: f64, k: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let g = (-t * k.powf(self.spec.sigma)).exp();
        match self.kind {
            KernelKind::Heat => g,
            KernelKind::HeatAt { t: s } => (-s * k.powf(self.spec.sigma)).exp(),
            KernelKind::CutoffHeat { mu } => chi(t / mu) * g,
            KernelKind::Fluctuation { mu } => (1.0 - chi(t / mu)) * g,
            KernelKind::Band { eta, mu } => (chi(t / eta) - chi(t / mu)) * g,
            KernelKind::DotG { mu, time_power } => {
                let w = t.powi(time_power as i32) / st_factorial(&[time_power, 0, 0, 0]);
                -w * (t / (mu * mu)) * chi_prime(t / mu) * g
            }
            KernelKind::CutoffRate { mu } => chi_prime(t / mu) / mu * g,
            KernelKind::K { .. } | KernelKind::J { .. } => 0.0,
        }
    }

    /// Spatial symbol of the space-only kernels and of the spatial factor
    /// of K.
    pub fn spatial_symbol(&self, k: f64) -> f64 {
        let s = self.spec.sigma;
        match self.kind {
            KernelKind::K { mu, g } => {
                let m = self.spec.scale(mu);
                (1.0 + m * m * k * k).powi(-(g as i32))
            }
            KernelKind::J { nu, eps } => {
                let e = s - eps;
                1.0 / (1.0 + self.spec.scale(nu).powf(e) * k.powf(e))
            }
            KernelKind::HeatAt { t } => (-t * k.powf(s)).exp(),
            _ => 1.0,
        }
    }

    /// Continuum space-time symbol at time frequency `p0` (only K).
    pub fn symbol(&self, p0: f64, k: f64) -> C64 {
        match self.kind {
            KernelKind::K { mu, g } => {
                let t = C64::new(1.0, mu * p0).powi(-(g as i32));
                t * self.spatial_symbol(k)
            }
            _ => C64::new(self.spatial_symbol(k), 0.0),
        }
    }

    /// Per-mode multiplier table for the space-only kernels.
    pub fn spatial_table(&self) -> Vec<f64> {
        self.spec.freq_norms().into_iter().map(|k| self.spatial_symbol(k)).collect()
    }
}

/// S_μ on kernels with a closed-form scale parameter.
pub fn rescale(k: &SpectralKernel, mu: f64) -> Result<SpectralKernel> {
    if !(mu > 0.0) {
        return Err(Fault::validation("rescale needs mu > 0"));
    }
    let kind = match k.kind {
        KernelKind::K { mu: m, g } => KernelKind::K { mu: m * mu, g },
        KernelKind::J { nu, eps } => KernelKind::J { nu: nu * mu, eps },
        KernelKind::DotG { mu: m, time_power: 0 } => KernelKind::DotG { mu: m * mu, time_power: 0 },
        _ => return Err(Fault::validation("rescale needs a mass-normalised kernel family")),
    };
    SpectralKernel::new(k.spec, kind)
}

/// Quadrature weight of lag `l` in the causal trapezoid rule.
fn lag_weight(l: usize, dt: f64) -> f64 {
    if l == 0 {
        0.5 * dt
    } else {
        dt
    }
}

/// Space-time (or space-only) convolution `k ∗ f`. Fields are taken to
/// vanish before the window start.
pub fn convolve(k: &SpectralKernel, f: &Field) -> Result<Field> {
    if !k.spec.same_grid(&f.spec) {
        return Err(Fault::validation("kernel and field live on different lattices"));
    }
    f.check_finite()?;
    let spec = f.spec;
    let fft = spec.fft();
    let ns = spec.n_space();
    match k.kind {
        KernelKind::HeatAt { .. } | KernelKind::J { .. } => {
            let table = k.spatial_table();
            let mut out = f.clone();
            for j in 0..f.n_slices() {
                let mut c = forward_slice(&fft, f.slice(j));
                c.iter_mut().zip(&table).for_each(|(v, m)| *v *= m);
                out.slice_mut(j).copy_from_slice(&inverse_slice(&fft, &c));
            }
            return Ok(out);
        }
        _ => {}
    }
    if f.domain != Domain::SpaceTime {
        return Err(Fault::validation("space-time kernel applied to a space-only field"));
    }
    let nt = spec.n_time();
    let window = spec.t_max - spec.t_min;
    if let (_, Some(end)) = k.time_support() {
        if end > window + 1e-12 {
            return Err(Fault::validation(format!(
                "insufficient time padding: kernel support {end} exceeds window {window}"
            )));
        }
    }
    let coeffs: Vec<Vec<C64>> = (0..nt).map(|j| forward_slice(&fft, f.slice(j))).collect();
    let mut out_c = vec![vec![C64::new(0.0, 0.0); ns]; nt];
    if let KernelKind::K { mu, g } = k.kind {
        let table = k.spatial_table();
        let a = mu / (mu + spec.dt);
        let b = spec.dt / (mu + spec.dt);
        for s in 0..ns {
            let mut col: Vec<C64> = (0..nt).map(|j| coeffs[j][s] * table[s]).collect();
            for _ in 0..g {
                let mut prev = C64::new(0.0, 0.0);
                for v in col.iter_mut() {
                    prev = prev * a + *v * b;
                    *v = prev;
                }
            }
            for j in 0..nt {
                out_c[j][s] = col[j];
            }
        }
    } else {
        let knorm = spec.freq_norms();
        let (lo, hi) = k.time_support();
        let l_lo = ((lo / spec.dt).floor() as usize).min(nt);
        let l_hi = match hi {
            Some(h) => ((h / spec.dt).ceil() as usize + 1).min(nt),
            None => nt,
        };
        let table: Vec<Vec<f64>> = (l_lo..l_hi)
            .map(|l| {
                let t = l as f64 * spec.dt;
                let w = lag_weight(l, spec.dt);
                knorm.iter().map(|&kk| w * k.heat_multiplier(t, kk)).collect()
            })
            .collect();
        for (n, out) in out_c.iter_mut().enumerate() {
            for (li, row) in table.iter().enumerate() {
                let l = l_lo + li;
                if l > n {
                    break;
                }
                let src = &coeffs[n - l];
                for s in 0..ns {
                    out[s] += src[s] * row[s];
                }
            }
        }
    }
    let mut out = Field::zeros(spec, Domain::SpaceTime);
    for (j, c) in out_c.iter().enumerate() {
        out.slice_mut(j).copy_from_slice(&inverse_slice(&fft, c));
    }
    Ok(out)
}

/// Exact semigroup image e^{−t(−Δ)^{σ/2}}φ of a space-only field.
pub fn heat_propagate(phi: &Field, t: f64) -> Result<Field> {
    let k = SpectralKernel::new(phi.spec, KernelKind::HeatAt { t })?;
    convolve(&k, phi)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Operator {
    /// P_μ^g = ((1 + μ∂_t)(1 − [μ]²Δ))^g.
    P { mu: f64, g: u32 },
    /// R_ν = 1 + [ν]^{σ−ε}(−Δ)^{(σ−ε)/2}.
    R { nu: f64, eps: f64 },
    /// Q = ∂_t + (−Δ)^{σ/2}.
    Q,
}

/// Spectral application; time derivatives are backward differences with
/// zero history before the window.
pub fn apply_operator(op: Operator, f: &Field) -> Result<Field> {
    f.check_finite()?;
    let spec = f.spec;
    let fft = spec.fft();
    let knorm = spec.freq_norms();
    let ns = spec.n_space();
    let nt = f.n_slices();
    let mut coeffs: Vec<Vec<C64>> = (0..nt).map(|j| forward_slice(&fft, f.slice(j))).collect();
    match op {
        Operator::R { nu, eps } => {
            let e = spec.sigma - eps;
            let w = spec.scale(nu).powf(e);
            for c in coeffs.iter_mut() {
                c.iter_mut().zip(&knorm).for_each(|(v, k)| *v *= 1.0 + w * k.powf(e));
            }
        }
        Operator::P { mu, g } => {
            if f.domain != Domain::SpaceTime {
                return Err(Fault::validation("P needs a space-time field"));
            }
            let m2 = spec.scale(mu).powi(2);
            for _ in 0..g {
                for s in 0..ns {
                    let mut prev = C64::new(0.0, 0.0);
                    for c in coeffs.iter_mut() {
                        let cur = c[s];
                        c[s] = (cur + (cur - prev) * (mu / spec.dt)) * (1.0 + m2 * knorm[s] * knorm[s]);
                        prev = cur;
                    }
                }
            }
        }
        Operator::Q => {
            if f.domain != Domain::SpaceTime {
                return Err(Fault::validation("Q needs a space-time field"));
            }
            for s in 0..ns {
                let ks = knorm[s].powf(spec.sigma);
                let mut prev = C64::new(0.0, 0.0);
                for c in coeffs.iter_mut() {
                    let cur = c[s];
                    c[s] = (cur - prev) / spec.dt + cur * ks;
                    prev = cur;
                }
            }
        }
    }
    let mut out = f.clone();
    for (j, c) in coeffs.iter().enumerate() {
        out.slice_mut(j).copy_from_slice(&inverse_slice(&fft, c));
    }
    Ok(out)
}

/// Real-space values of a heat-family kernel at time lag `t` on the grid
/// (periodised, inverse FFT of the multiplier).
pub fn real_space_slice(k: &SpectralKernel, t: f64) -> Vec<f64> {
    let spec = k.spec;
    let fft = spec.fft();
    let c: Vec<C64> = spec
        .freq_norms()
        .iter()
        .map(|&kk| C64::new(k.heat_multiplier(t, kk), 0.0))
        .collect();
    let vol = spec.cell_volume();
    inverse_slice(&fft, &c).into_iter().map(|v| v / vol).collect()
}

/// Whether `a` lies in 𝔐_σ, i.e. |a| ≤ σ_♦.
pub fn admissible_index(a: &StIndex, sigma: f64) -> bool {
    let total: u32 = a.iter().sum();
    total as f64 <= sigma_diamond(sigma) + 1e-12
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentNorm {
    pub mu: f64,
    pub norm: f64,
}

/// L¹ norms of 𝒳^a Ġ_μ (optionally of R_ν 𝒳^a Ġ_μ) per μ, by Gauss–Legendre
/// quadrature in time over (μ, 2μ) and grid quadrature in space.
pub fn dot_g_moment_norms(
    spec: LatticeSpec,
    mus: &[f64],
    a: &StIndex,
    weight: Option<(f64, f64)>,
) -> Result<Vec<MomentNorm>> {
    if !admissible_index(a, spec.sigma) {
        return Err(Fault::validation(format!(
            "multi-index {a:?} exceeds the admissible moment order (|a| <= {})",
            sigma_diamond(spec.sigma)
        )));
    }
    let (xq, wq) = quad::composite(0.0, 1.0, 4, 16);
    let fft = spec.fft();
    let knorm = spec.freq_norms();
    let vol = spec.cell_volume();
    let afac = st_factorial(a);
    let space_weight: Vec<f64> = (0..spec.n_space())
        .map(|i| {
            let x = spec.centered_position(i);
            (0..spec.d).map(|q| x[q].powi(a[q + 1] as i32)).product::<f64>()
        })
        .collect();
    let r_table: Option<Vec<f64>> = weight.map(|(nu, eps)| {
        let e = spec.sigma - eps;
        let w = spec.scale(nu).powf(e);
        knorm.iter().map(|k| 1.0 + w * k.powf(e)).collect()
    });
    let mut out = Vec::with_capacity(mus.len());
    for &mu in mus {
        let kern = SpectralKernel::new(spec, KernelKind::DotG { mu, time_power: 0 })?;
        let mut total = 0.0;
        for (x, w) in xq.iter().zip(&wq) {
            let t = mu * (1.0 + x);
            let c: Vec<C64> = knorm.iter().map(|&k| C64::new(kern.heat_multiplier(t, k), 0.0)).collect();
            let mut vals = inverse_slice(&fft, &c);
            let tw = t.powi(a[0] as i32) / afac;
            for (v, sw) in vals.iter_mut().zip(&space_weight) {
                *v *= tw * sw / vol;
            }
            if let Some(r) = &r_table {
                let mut cc = forward_slice(&fft, &vals);
                cc.iter_mut().zip(r).for_each(|(v, m)| *v *= m);
                vals = inverse_slice(&fft, &cc);
            }
            total += mu * w * vol * vals.iter().map(|v| v.abs()).sum::<f64>();
        }
        out.push(MomentNorm { mu, norm: total });
    }
    Ok(out)
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Relative error of reconstructing the action of G on a smooth field as
/// G_T − ∫_0^T Ġ_μ dμ, with a geometric μ grid of `per_octave` midpoint
/// nodes per octave. Time lags sit at cell midpoints (l + ½)dt.
pub fn decomposition_error(spec: LatticeSpec, t_anchor: f64, per_octave: usize) -> Result<f64> {
    let dt = spec.dt;
    let n_lags = ((2.0 * t_anchor) / dt).ceil() as usize + 4;
    let lags: Vec<f64> = (0..n_lags).map(|l| (l as f64 + 0.5) * dt).collect();
    let mu_min = dt / 8.0;
    let octaves = (t_anchor / mu_min).log2().ceil() as usize;
    let n_mu = octaves * per_octave;
    let ratio = (t_anchor / mu_min).ln() / n_mu as f64;
    let knorm = spec.freq_norms();
    let modes: Vec<usize> = (0..spec.n_space()).filter(|&i| knorm[i] <= 4.0).collect();
    let heat = SpectralKernel::new(spec, KernelKind::Heat)?;
    let top = SpectralKernel::new(spec, KernelKind::CutoffHeat { mu: t_anchor })?;
    let mut max_err: f64 = 0.0;
    let mut max_ref: f64 = 0.0;
    for &s in &modes {
        let k = knorm[s];
        // smooth test signal in time for this mode
        let f = |t: f64| (1.3 * t).cos() + 0.5 * (0.7 * t + k).sin();
        let mut acc_ref = 0.0;
        let mut acc_rec = 0.0;
        for &t in &lags {
            let mut rec = top.heat_multiplier(t, k);
            for j in 0..n_mu {
                let mu = mu_min * ((j as f64 + 0.5) * ratio).exp();
                if t <= mu || t >= 2.0 * mu {
                    continue;
                }
                let dg = SpectralKernel { spec, kind: KernelKind::DotG { mu, time_power: 0 } };
                rec -= dg.heat_multiplier(t, k) * mu * ratio;
            }
            acc_ref += dt * heat.heat_multiplier(t, k) * f(-t);
            acc_rec += dt * rec * f(-t);
        }
        max_err = max_err.max((acc_ref - acc_rec).abs());
        max_ref = max_ref.max(acc_ref.abs());
    }
    Ok(max_err / max_ref)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{forward_transform, Axis};

    fn st_spec() -> LatticeSpec {
        LatticeSpec::new(1, 16, 0.01, 0.0, 0.5, 0.5).unwrap()
    }

    #[test]
    fn cutoff_profile_plateaus() {
        assert_eq!(chi(1.0), 0.0);
        assert_eq!(chi(0.3), 0.0);
        assert_eq!(chi(2.0), 1.0);
        assert!((chi(1.5) - 0.5).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 0..=100 {
            let t = 1.0 + i as f64 / 100.0;
            let c = chi(t);
            assert!(c >= prev && (0.0..=1.0).contains(&c));
            prev = c;
            let fd = (chi(t + 1e-6) - chi(t - 1e-6)) / 2e-6;
            assert!((fd - chi_prime(t)).abs() < 1e-5);
        }
    }

    #[test]
    fn single_mode_heat_propagation() {
        let spec = LatticeSpec::space(1, 32, 0.5).unwrap();
        let phi = Field::space_fn(spec, |x| (3.0 * x[0]).cos());
        let out = heat_propagate(&phi, 0.7).unwrap();
        let amp = (-0.7 * 3f64.powf(0.5)).exp();
        for (a, b) in out.data.iter().zip(&phi.data) {
            assert!((a - amp * b).abs() < 1e-13);
        }
    }

    #[test]
    fn heat_semigroup_composition() {
        let spec = LatticeSpec::space(2, 16, 1.5).unwrap();
        let phi = Field::space_fn(spec, |x| (x[0] - 2.0 * x[1]).sin() + (x[1]).cos() * x[0].sin());
        let a = heat_propagate(&heat_propagate(&phi, 0.3).unwrap(), 0.45).unwrap();
        let b = heat_propagate(&phi, 0.75).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn k_preserves_constants_and_inverts_p() {
        let spec = st_spec();
        let c = Field::space_time_fn(spec, |_, _| 2.5);
        let k = SpectralKernel::new(spec, KernelKind::K { mu: 0.02, g: 3 }).unwrap();
        let kc = convolve(&k, &c).unwrap();
        // geometric resolvent reaches the constant only asymptotically
        let last = kc.slice(spec.n_time() - 1);
        assert!(last.iter().all(|v| (v - 2.5).abs() < 1e-6));
        let f = Field::space_time_fn(spec, |t, x| (x[0] + 7.0 * t).sin() + (3.0 * x[0]).cos() * t);
        let back = apply_operator(Operator::P { mu: 0.02, g: 3 }, &convolve(&k, &f).unwrap()).unwrap();
        for (a, b) in back.data.iter().zip(&f.data) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(apply_operator(Operator::P { mu: 0.05, g: 1 }, &c)
            .unwrap()
            .slice(3)
            .iter()
            .all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn symbol_identity() {
        let spec = LatticeSpec::space(2, 16, 1.5).unwrap();
        let k = SpectralKernel::new(spec, KernelKind::K { mu: 0.3, g: 4 }).unwrap();
        for idx in 0..spec.n_space() {
            let kn = spec.freq_norm(idx);
            for p0 in [-3.0, 0.0, 1.0, 17.0] {
                let p = C64::new(1.0, 0.3 * p0).powi(4) * (1.0 + spec.scale(0.3).powi(2) * kn * kn).powi(4);
                assert!((p * k.symbol(p0, kn) - 1.0).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn fundamental_solution_residual_is_first_order() {
        let residual = |dt: f64| {
            let spec = LatticeSpec::new(1, 16, dt, 0.0, 0.4, 0.5).unwrap();
            let phi = Field::space_fn(LatticeSpec::space(1, 16, 0.5).unwrap(), |x| x[0].cos() + (2.0 * x[0]).sin());
            let mut u = Field::zeros(spec, Domain::SpaceTime);
            for j in 0..spec.n_time() {
                let s = heat_propagate(&phi, spec.time(j)).unwrap();
                u.slice_mut(j).copy_from_slice(&s.data);
            }
            let q = apply_operator(Operator::Q, &u).unwrap();
            (1..spec.n_time()).map(|j| q.slice(j).iter().fold(0.0f64, |m, v| m.max(v.abs()))).fold(0.0, f64::max)
        };
        let r1 = residual(0.01);
        let r2 = residual(0.005);
        assert!(r1 < 0.05);
        assert!((r1 / r2 - 2.0).abs() < 0.2, "ratio {}", r1 / r2);
    }

    #[test]
    fn rescale_matches_family() {
        let spec = LatticeSpec::space(1, 32, 0.5).unwrap();
        let base = SpectralKernel::new(spec, KernelKind::K { mu: 1.0, g: 2 }).unwrap();
        assert_eq!(rescale(&base, 1.0).unwrap(), base);
        let direct = SpectralKernel::new(spec, KernelKind::K { mu: 0.25, g: 2 }).unwrap();
        assert_eq!(rescale(&base, 0.25).unwrap().spatial_table(), direct.spatial_table());
        let heat = SpectralKernel::new(spec, KernelKind::Heat).unwrap();
        assert!(rescale(&heat, 0.5).is_err());
        assert!(rescale(&base, 0.0).is_err());
    }

    #[test]
    fn k_rescaling_is_l1_isometry() {
        let spec = LatticeSpec::new(1, 64, 0.01, 0.0, 30.0, 1.0).unwrap();
        let base = SpectralKernel::new(spec, KernelKind::K { mu: 1.0, g: 1 }).unwrap();
        let l1 = |k: &SpectralKernel| {
            let KernelKind::K { mu, .. } = k.kind else { unreachable!() };
            let a = mu / (mu + spec.dt);
            let time_mass: f64 = (0..spec.n_time()).map(|j| (1.0 - a) * a.powi(j as i32)).sum();
            let fft = spec.fft();
            let c: Vec<C64> = k.spatial_table().iter().map(|&m| C64::new(m, 0.0)).collect();
            let space: f64 = inverse_slice(&fft, &c).iter().map(|v| v.abs()).sum();
            time_mass * space
        };
        let ref_norm = l1(&base);
        for mu in [0.25, 0.5, 1.0] {
            let r = l1(&rescale(&base, mu).unwrap());
            assert!((r / ref_norm - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn dot_g_support_is_exact() {
        let spec = LatticeSpec::new(1, 16, 0.01, 0.0, 1.0, 0.5).unwrap();
        let mu = 0.1;
        let k = SpectralKernel::new(spec, KernelKind::DotG { mu, time_power: 0 }).unwrap();
        for j in 0..spec.n_time() {
            let t = j as f64 * spec.dt;
            let outside = t <= mu || t >= 2.0 * mu;
            for idx in 0..spec.n_space() {
                let v = k.heat_multiplier(t, spec.freq_norm(idx));
                if outside {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!(k.heat_multiplier(0.15, 0.0) != 0.0);
    }

    #[test]
    fn moment_index_restriction() {
        let spec = LatticeSpec::space(1, 64, 0.5).unwrap();
        assert!(dot_g_moment_norms(spec, &[0.1], &[1, 0, 0, 0], None).is_err());
        assert!(dot_g_moment_norms(spec, &[0.1], &[0, 0, 0, 0], None).is_ok());
        assert_eq!(sigma_diamond(2.0), 2.0);
        assert_eq!(sigma_diamond(1.5), 1.0);
        assert_eq!(sigma_diamond(0.5), 0.0);
    }

    #[test]
    fn convolution_needs_padding() {
        let spec = LatticeSpec::new(1, 8, 0.1, 0.0, 1.0, 0.5).unwrap();
        let f = Field::space_time_fn(spec, |_, x| x[0].cos());
        let k = SpectralKernel::new(spec, KernelKind::Fluctuation { mu: 1.0 }).unwrap();
        assert!(convolve(&k, &f).unwrap_err().message().contains("insufficient time padding"));
    }

    #[test]
    fn decomposition_converges() {
        let spec = LatticeSpec::new(1, 16, 0.01, 0.0, 1.0, 0.5).unwrap();
        let e1 = decomposition_error(spec, 1.0, 32).unwrap();
        let e2 = decomposition_error(spec, 1.0, 64).unwrap();
        assert!(e2 < 1e-4, "{e1} {e2}");
        assert!(e2 <= 0.5 * e1);
    }

    #[test]
    fn constant_mode_of_k_is_one() {
        let spec = LatticeSpec::space(1, 8, 0.5).unwrap();
        let k = SpectralKernel::new(spec, KernelKind::K { mu: 0.2, g: 3 }).unwrap();
        assert_eq!(k.spatial_table()[0], 1.0);
        let j = SpectralKernel::new(spec, KernelKind::J { nu: 0.2, eps: 0.05 }).unwrap();
        assert_eq!(j.spatial_table()[0], 1.0);
        let f = Field::space_fn(spec, |_| 1.0);
        let c = forward_transform(&f, Axis::Space).unwrap();
        assert!((c[0].re - 8.0).abs() < 1e-12);
    }
}
