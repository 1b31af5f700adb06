//! Scale-indexed sup norms and the 𝒞^γ norm of the solver.

use alloc::vec::Vec;
use num_complex::Complex64 as C64;
use num_traits::Float;

use crate::error::{Fault, Result};
use crate::fft::FftNd;
use crate::kernels::{convolve, KernelKind, SpectralKernel};
use crate::lattice::{forward_slice, inverse_slice, Domain, Field, LatticeSpec};

/// ‖(1 + |k|^γ) φ̂‖ in sup norm over the grid, from spectral coefficients.
/// Multipliers 1 + |k|^γ of the spectral 𝒞^γ norm.
pub fn c_gamma_weights(gamma: f64, knorm: &[f64]) -> Vec<f64> {
    knorm.iter().map(|k| 1.0 + k.powf(gamma)).collect()
}

pub fn c_gamma_spectral(fft: &FftNd, coeffs: &[C64], weights: &[f64]) -> f64 {
    let mut buf: Vec<C64> = coeffs.iter().zip(weights).map(|(c, w)| c * w).collect();
    fft.inverse(&mut buf);
    buf.iter().fold(0.0, |m, v| m.max(v.re.abs()))
}

pub fn c_gamma_norm(phi: &Field, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Fault::validation("gamma must be positive"));
    }
    if phi.domain != Domain::SpaceOnly {
        return Err(Fault::validation("the C^gamma norm takes a space-only field"));
    }
    let fft = phi.spec.fft();
    let c = forward_slice(&fft, &phi.data);
    Ok(c_gamma_spectral(&fft, &c, &c_gamma_weights(gamma, &phi.spec.freq_norms())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleNormEntry {
    pub mu: f64,
    /// ‖K_μ^{*g} ∗ f‖_∞.
    pub raw: f64,
    /// [μ]^{−α} · raw.
    pub weighted: f64,
    pub reliable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleNormReport {
    pub alpha: f64,
    pub g: u32,
    pub entries: Vec<ScaleNormEntry>,
    /// Sup of the weighted values over reliable entries.
    pub sup: f64,
    /// Least-squares slope of log raw against log [μ] over reliable entries.
    pub slope: f64,
    pub slope_stderr: f64,
}

/// Smallest μ the grid can smooth at: (4Δx)^σ.
pub fn resolvable_mu(spec: &LatticeSpec) -> f64 {
    (4.0 * spec.dx()).powf(spec.sigma)
}

fn smoothed_sup(f: &Field, mu: f64, g: u32) -> Result<f64> {
    let k = SpectralKernel::new(f.spec, KernelKind::K { mu, g })?;
    match f.domain {
        Domain::SpaceTime => Ok(convolve(&k, f)?.max_abs()),
        Domain::SpaceOnly => {
            let fft = f.spec.fft();
            let mut c = forward_slice(&fft, &f.data);
            c.iter_mut().zip(k.spatial_table()).for_each(|(v, m)| *v *= m);
            Ok(inverse_slice(&fft, &c).iter().fold(0.0, |m, v| m.max(v.abs())))
        }
    }
}

fn fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n < 2 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    if n < 3 {
        return (slope, 0.0);
    }
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    (slope, (rss / (nf - 2.0) / sxx).sqrt())
}

/// [μ]^{−α}‖K_μ^{*g} ∗ f‖_∞ over the given scales.
pub fn scale_norm(f: &Field, alpha: f64, g: u32, mus: &[f64]) -> Result<ScaleNormReport> {
    if (g as f64) < (-alpha).ceil() {
        return Err(Fault::validation("smoothing power g must be at least ceil(-alpha)"));
    }
    if mus.iter().any(|m| !(*m > 0.0 && *m <= 1.0)) {
        return Err(Fault::validation("scales must lie in (0, 1]"));
    }
    let floor = resolvable_mu(&f.spec);
    let mut entries = Vec::with_capacity(mus.len());
    for &mu in mus {
        let raw = smoothed_sup(f, mu, g)?;
        let weighted = f.spec.scale(mu).powf(-alpha) * raw;
        entries.push(ScaleNormEntry { mu, raw, weighted, reliable: mu >= floor });
    }
    let good: Vec<&ScaleNormEntry> = entries.iter().filter(|e| e.reliable).collect();
    let sup = good.iter().fold(0.0, |m: f64, e| m.max(e.weighted));
    let xs: Vec<f64> = good.iter().map(|e| f.spec.scale(e.mu).ln()).collect();
    let ys: Vec<f64> = good.iter().map(|e| e.raw.max(1e-300).ln()).collect();
    let (slope, slope_stderr) = fit(&xs, &ys);
    Ok(ScaleNormReport { alpha, g, entries, sup, slope, slope_stderr })
}

/// Dyadic scales 2^{−j}, j = 0..count.
pub fn dyadic_scales(count: usize) -> Vec<f64> {
    (0..count).map(|j| 0.5f64.powi(j as i32)).collect()
}
