//! Invariant and diagnostic battery behind `flowpde kernels --check`.

use flowpde_core::kernels::{
    admissible_index, decomposition_error, dot_g_moment_norms, heat_propagate, loglog_slope, st_weight, KernelKind,
    SpectralKernel, StIndex, DEFAULT_EPS,
};
use flowpde_core::{Field, LatticeSpec};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::CliResult;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub check_name: String,
    pub parameter: String,
    pub value: f64,
    pub expected: String,
    pub pass: bool,
}

fn row(name: &str, parameter: String, value: f64, expected: &str, pass: bool) -> CheckRow {
    CheckRow { check_name: name.into(), parameter, value, expected: expected.into(), pass }
}

/// Weight scale for the R_ν-weighted moment norms. It sits far above the
/// tested μ range, where the norms scale as [μ]^{[a]−σ+ε}.
pub const SLOPE_WEIGHT_NU: f64 = 16.0;

/// max |P_μ(p) K̂_μ(p) − 1| over lattice frequencies and sample p⁰.
pub fn pk_identity(spec: LatticeSpec, mu: f64, g: u32) -> CliResult<f64> {
    let k = SpectralKernel::new(spec, KernelKind::K { mu, g })?;
    let s = spec.scale(mu);
    let mut worst: f64 = 0.0;
    for idx in 0..spec.n_space() {
        let kn = spec.freq_norm(idx);
        for p0 in [-40.0, -3.0, 0.0, 1.0, 17.0, 250.0] {
            let p = C64::new(1.0, mu * p0).powi(g as i32) * (1.0 + s * s * kn * kn).powi(g as i32);
            worst = worst.max((p * k.symbol(p0, kn) - 1.0).norm());
        }
    }
    Ok(worst)
}

/// max |e^{−sA} e^{−tA} φ − e^{−(s+t)A} φ| on a two-mode field.
pub fn semigroup_defect(spec: LatticeSpec, s: f64, t: f64) -> CliResult<f64> {
    let phi = Field::space_fn(spec, |x| {
        let y = if spec.d > 1 { x[1] } else { 0.5 * x[0] };
        (x[0] - 2.0 * y).sin() + y.cos() * (3.0 * x[0]).sin()
    });
    let a = heat_propagate(&heat_propagate(&phi, s)?, t)?;
    let b = heat_propagate(&phi, s + t)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Largest |Ġ_μ| multiplier on lattice times outside (μ, 2μ), and the
/// smallest peak |Ġ_μ| over modes inside.
pub fn dot_g_support(spec: LatticeSpec, mu: f64) -> CliResult<(f64, f64)> {
    let k = SpectralKernel::new(spec, KernelKind::DotG { mu, time_power: 0 })?;
    let mut outside: f64 = 0.0;
    let mut inside = vec![0.0f64; spec.n_space()];
    for j in 0..spec.n_time() {
        let t = spec.time(j) - spec.t_min;
        let out = t <= mu || t >= 2.0 * mu;
        for (idx, peak) in inside.iter_mut().enumerate() {
            let v = k.heat_multiplier(t, spec.freq_norm(idx)).abs();
            if out {
                outside = outside.max(v);
            } else {
                *peak = peak.max(v);
            }
        }
    }
    Ok((outside, inside.iter().copied().fold(f64::INFINITY, f64::min)))
}

/// Geometric μ values whose parabolic scale stays between four grid
/// cells and 0.3.
pub fn slope_scales(spec: &LatticeSpec, count: usize) -> Vec<f64> {
    let lo = (4.0 * spec.dx()).powf(spec.sigma);
    let hi = 0.3f64.powf(spec.sigma).min(0.2);
    (0..count).map(|j| lo * (hi / lo).powf(j as f64 / (count - 1) as f64)).collect()
}

/// Log-log slopes of the plain and R_ν-weighted L¹ norms of 𝒳^a Ġ_μ
/// against [μ].
pub fn moment_slopes(spec: LatticeSpec, a: &StIndex, eps: f64) -> CliResult<(f64, f64)> {
    let mus = slope_scales(&spec, 6);
    let scales: Vec<f64> = mus.iter().map(|m| spec.scale(*m)).collect();
    let plain: Vec<f64> = dot_g_moment_norms(spec, &mus, a, None)?.iter().map(|m| m.norm).collect();
    let weighted: Vec<f64> =
        dot_g_moment_norms(spec, &mus, a, Some((SLOPE_WEIGHT_NU, eps)))?.iter().map(|m| m.norm).collect();
    Ok((loglog_slope(&scales, &plain), loglog_slope(&scales, &weighted)))
}

fn index_label(a: &StIndex, d: usize) -> String {
    let parts: Vec<String> = a[..=d].iter().map(|v| v.to_string()).collect();
    format!("a=({})", parts.join(","))
}

/// Runs every check. `eps` is the global regularity parameter.
pub fn run_battery(eps: f64) -> CliResult<Vec<CheckRow>> {
    let mut rows = Vec::new();

    let sp = LatticeSpec::space(2, 16, 1.5)?;
    for (mu, g) in [(0.3, 4), (0.05, 2), (1.0, 1)] {
        let v = pk_identity(sp, mu, g)?;
        rows.push(row("pk_identity", format!("mu={mu};g={g}"), v, "<= 1e-12", v <= 1e-12));
    }

    for (spec, s, t) in [(LatticeSpec::space(2, 16, 1.5)?, 0.3, 0.45), (LatticeSpec::space(1, 64, 0.5)?, 0.05, 1.2)] {
        let v = semigroup_defect(spec, s, t)?;
        let p = format!("d={};sigma={};s={s};t={t}", spec.d, spec.sigma);
        rows.push(row("heat_semigroup", p, v, "<= 1e-10", v <= 1e-10));
    }

    let st = LatticeSpec::new(1, 16, 0.01, 0.0, 1.0, 0.5)?;
    for mu in [0.05, 0.1, 0.2] {
        let (outside, inside) = dot_g_support(st, mu)?;
        rows.push(row("dot_g_support_outside", format!("mu={mu}"), outside, "== 0", outside == 0.0));
        rows.push(row("dot_g_support_inside", format!("mu={mu}"), inside, "> 0", inside > 0.0));
    }

    let mut prev: Option<f64> = None;
    for per_octave in [16, 32, 64] {
        let e = decomposition_error(st, 1.0, per_octave)?;
        let last = per_octave == 64;
        let (exp, ok) = if last { ("<= 1e-4", e <= 1e-4) } else { ("finite", e.is_finite()) };
        rows.push(row("decomposition_error", format!("per_octave={per_octave}"), e, exp, ok));
        if let Some(p) = prev {
            let r = e / p;
            rows.push(row("decomposition_halving", format!("per_octave={per_octave}"), r, "<= 0.5", r <= 0.5));
        }
        prev = Some(e);
    }

    let indices: [StIndex; 7] =
        [[0, 0, 0, 0], [1, 0, 0, 0], [0, 1, 0, 0], [0, 2, 0, 0], [2, 0, 0, 0], [1, 1, 0, 0], [0, 1, 1, 0]];
    let lattices = [LatticeSpec::space(2, 128, 2.0)?, LatticeSpec::space(1, 4096, 0.5)?, LatticeSpec::space(1, 1024, 1.0)?];
    for spec in lattices {
        for a in indices.iter().filter(|a| admissible_index(a, spec.sigma)) {
            let (plain, weighted) = moment_slopes(spec, a, eps)?;
            let w = st_weight(a, spec.sigma);
            let p = format!("sigma={};{}", spec.sigma, index_label(a, spec.d));
            let target = w - spec.sigma;
            rows.push(row("dot_g_weighted_slope", p.clone(), weighted, &format!("{target} +- 0.1"), (weighted - target).abs() <= 0.1));
            rows.push(row("dot_g_plain_slope", p, plain, &format!("{w} +- 0.1"), (plain - w).abs() <= 0.1));
        }
    }
    Ok(rows)
}

/// Battery with the default ε.
pub fn default_battery() -> CliResult<Vec<CheckRow>> {
    run_battery(DEFAULT_EPS)
}
