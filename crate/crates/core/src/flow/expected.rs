//! Expected effective coefficients at first order in λ.
//!
//! With u = φ + ψ_μ, ψ_μ = (G − G_μ) ∗ Ξ, the first-order effective
//! coefficients are Gaussian averages of the force monomials:
//!   ⟨f^{1,m,a}_μ⟩ = Σ_{m'} f^{1,m',a'} · C(z', m'−m) · (m'−m−1)!! · C_μ^{(m'−m)/2}
//! where C_μ = ⟨ψ_μ(x)²⟩ is the tadpole and z' the number of underived
//! slots of the source monomial. The μ-derivative
//!   ∂_μ C_μ = 2 Σ_{l,l'} δ² (t_l/μ²) χ'(t_l/μ) h_μ(t_l') ρ_ν(t_l − t_l') S(t_l + t_l')
//! is integrated with Simpson's rule in log μ on a dyadic grid. Times are
//! midpoint nodes t_l = (l + ½)δ, S(s) = (2π)^{−d} Σ_k |M̂_k|² e^{−s|k|^σ}
//! over the lattice frequencies and ρ_ν is the time autocorrelation of
//! the mollifier.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Fault, Result};
use crate::kernels::{chi, chi_prime};
use crate::model::{classify, symmetry_filter, CoefKey, ModelSpec, RenormScheme, TOL};
use crate::noise::NoiseModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    /// Scale T at which relevant coefficients are pinned.
    pub t_anchor: f64,
    /// Fine μ-grid points per octave (a multiple of 4).
    pub per_octave: usize,
    /// Truncation order in λ.
    pub i_max: u32,
    /// Time nodes per unit of ν.
    pub time_refine: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { t_anchor: 1.0, per_octave: 64, i_max: 2, time_refine: 16 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_anchor > 0.0) || self.per_octave < 4 || self.per_octave % 4 != 0 || self.time_refine == 0 {
            return Err(Fault::validation("flow config needs t_anchor > 0, per_octave a positive multiple of 4"));
        }
        Ok(())
    }
}

/// Smallest power of two n with 2π/n ≤ [ν]/4.
pub fn resolving_n(nu: f64, sigma: f64) -> usize {
    let s = nu.powf(1.0 / sigma);
    let mut n = 8;
    while 2.0 * core::f64::consts::PI / n as f64 > s / 4.0 {
        n *= 2;
    }
    n
}

/// Per-axis squared multiplier |m̂(k[ν])|² for k in [0, n/2].
fn axis_weights(noise: &NoiseModel, d: usize, sigma: f64, n: usize) -> Vec<f64> {
    let s = noise.nu.powf(1.0 / sigma);
    (0..=n / 2).map(|k| noise.space_fourier(k as f64 * s, d).powi(2)).collect()
}

/// Time autocorrelation ρ_ν(jδ), j = 0..=B, B being the last lag inside
/// the support.
fn rho_table(noise: &NoiseModel, d: usize, delta: f64) -> Vec<f64> {
    let reach = noise.time_correlation_radius(d) * noise.nu;
    let b = (reach / delta).ceil() as usize;
    (0..=b).map(|j| noise.time_autocorrelation(j as f64 * delta / noise.nu, d) / noise.nu).collect()
}

/// Precomputed ingredients of the tadpole flow.
#[derive(Clone, Debug)]
pub struct Tadpole {
    pub d: usize,
    pub sigma: f64,
    pub nu: f64,
    pub n: usize,
    pub delta: f64,
    rho: Vec<f64>,
    /// S((j + 1)δ) for j = 0..2L.
    s: Vec<f64>,
}

impl Tadpole {
    pub fn new(d: usize, sigma: f64, noise: &NoiseModel, t_anchor: f64, time_refine: usize) -> Result<Self> {
        let nu = noise.nu;
        let n = resolving_n(nu, sigma);
        let delta = nu / time_refine as f64;
        let rho = rho_table(noise, d, delta);
        // radial bins of Σ_k |M̂_k|² by |k|², one axis at a time
        let w1 = axis_weights(noise, d, sigma, n);
        let mut axis: BTreeMap<u64, f64> = BTreeMap::new();
        for k in -((n / 2) as i64)..((n / 2) as i64) {
            let w = w1[k.unsigned_abs() as usize];
            if w > 1e-300 {
                *axis.entry((k * k) as u64).or_default() += w;
            }
        }
        let mut bins = axis.clone();
        for _ in 1..d {
            let mut next: BTreeMap<u64, f64> = BTreeMap::new();
            for (q, w) in &bins {
                for (q1, w1) in &axis {
                    let v = w * w1;
                    if v > 1e-300 {
                        *next.entry(q + q1).or_default() += v;
                    }
                }
            }
            bins = next;
        }
        let norm = (2.0 * core::f64::consts::PI).powi(d as i32);
        let l = (2.0 * t_anchor / delta).ceil() as usize;
        let mut s = vec![0.0; 2 * l + 1];
        for (q, w) in &bins {
            let a = (*q as f64).powf(sigma / 2.0);
            let r = (-a * delta).exp();
            let mut e = r;
            for v in s.iter_mut() {
                *v += w * e / norm;
                e *= r;
                if e < 1e-300 {
                    break;
                }
            }
        }
        Ok(Tadpole { d, sigma, nu, n, delta, rho, s })
    }

    fn t(&self, l: usize) -> f64 {
        (l as f64 + 0.5) * self.delta
    }

    fn band(&self) -> usize {
        self.rho.len() - 1
    }

    /// C_μ on the discrete time nodes.
    pub fn covariance(&self, mu: f64) -> f64 {
        let last = ((2.0 * mu / self.delta) as usize + 1).min(self.s.len() / 2);
        let h: Vec<f64> = (0..last).map(|l| 1.0 - chi(self.t(l) / mu)).collect();
        let b = self.band();
        let mut c = 0.0;
        for l in 0..last {
            if h[l] == 0.0 {
                continue;
            }
            for lp in l.saturating_sub(b)..(l + b + 1).min(last) {
                c += h[l] * h[lp] * self.rho[l.abs_diff(lp)] * self.s[l + lp];
            }
        }
        c * self.delta * self.delta
    }

    /// ∂_μ C_μ.
    pub fn derivative(&self, mu: f64) -> f64 {
        let last = ((2.0 * mu / self.delta) as usize + 1).min(self.s.len() / 2);
        let first = (mu / self.delta) as usize;
        let b = self.band();
        let mut c = 0.0;
        for l in first..last {
            let t = self.t(l);
            let g = chi_prime(t / mu) * t / (mu * mu);
            if g == 0.0 {
                continue;
            }
            for lp in l.saturating_sub(b)..(l + b + 1).min(last) {
                let h = 1.0 - chi(self.t(lp) / mu);
                c += g * h * self.rho[l.abs_diff(lp)] * self.s[l + lp];
            }
        }
        2.0 * c * self.delta * self.delta
    }
}

/// Independent evaluation of C_T: a frequency-by-frequency double sum
/// over the time nodes, truncated where e^{−|k|^σ t} < 1e−18.
pub fn tadpole_oracle(d: usize, sigma: f64, noise: &NoiseModel, t_anchor: f64, time_refine: usize) -> Result<f64> {
    let nu = noise.nu;
    let n = resolving_n(nu, sigma);
    let delta = nu / time_refine as f64;
    let rho = rho_table(noise, d, delta);
    let b = rho.len() - 1;
    let l_max = (2.0 * t_anchor / delta).ceil() as usize;
    let h: Vec<f64> = (0..l_max).map(|l| 1.0 - chi((l as f64 + 0.5) * delta / t_anchor)).collect();
    let s = nu.powf(1.0 / sigma);
    let m1: Vec<f64> = (0..=n / 2).map(|k| noise.space_fourier(k as f64 * s, d)).collect();
    let half = (n / 2) as i64;
    let count = n.pow(d as u32);
    let mut total = 0.0;
    let mut e = vec![0.0; l_max];
    for flat in 0..count {
        let mut rem = flat;
        let mut k2 = 0i64;
        let mut w = 1.0;
        for _ in 0..d {
            let k = (rem % n) as i64 - half;
            rem /= n;
            k2 += k * k;
            w *= m1[k.unsigned_abs() as usize];
        }
        let w = w * w;
        if w < 1e-300 {
            continue;
        }
        let a = (k2 as f64).powf(sigma / 2.0);
        let cut = if a > 0.0 { ((41.5 / a) / delta).ceil() as usize + 1 } else { l_max };
        let last = cut.min(l_max);
        for l in 0..last {
            e[l] = h[l] * (-a * (l as f64 + 0.5) * delta).exp();
        }
        let mut acc = 0.0;
        for l in 0..last {
            let lo = l.saturating_sub(b);
            let hi = (l + b + 1).min(last);
            let mut inner = 0.0;
            for lp in lo..hi {
                inner += rho[l.abs_diff(lp)] * e[lp];
            }
            acc += e[l] * inner;
        }
        total += w * acc;
    }
    Ok(total * delta * delta / (2.0 * core::f64::consts::PI).powi(d as i32))
}

/// Where a counterterm value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    FlowIntegrated,
    Oracle,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::FlowIntegrated => "flow_integrated",
            Provenance::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterTermEntry {
    pub key: CoefKey,
    pub value: f64,
    pub provenance: Provenance,
    pub quad_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowDiagnostics {
    /// C_T, the tadpole at the anchor scale.
    pub tadpole: f64,
    pub per_octave: usize,
    pub mu_min: f64,
    pub time_step: f64,
    pub lattice_n: usize,
    /// Largest quadrature error estimate over all entries.
    pub quad_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterTermResult {
    pub nu: f64,
    pub entries: Vec<CounterTermEntry>,
    pub diagnostics: FlowDiagnostics,
}

impl CounterTermResult {
    pub fn get(&self, key: &CoefKey) -> Option<f64> {
        self.entries.iter().find(|e| &e.key == key).map(|e| e.value)
    }

    pub fn values(&self) -> BTreeMap<CoefKey, f64> {
        self.entries.iter().map(|e| (e.key.clone(), e.value)).collect()
    }
}

/// One expected coefficient curve: values on the stored grid and
/// d/d(log μ) on the fine grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub values: Vec<f64>,
    pub rates: Vec<f64>,
    pub relevant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveCoefficients {
    pub i_max: u32,
    /// Largest stored arity per order, i·m_♭.
    pub m_max: Vec<u32>,
    /// Stored grid (every other fine node), increasing, ending at T.
    pub mu_grid: Vec<f64>,
    pub fine_grid: Vec<f64>,
    pub tadpole: Vec<f64>,
    pub curves: BTreeMap<CoefKey, Curve>,
}

fn simpson_step(h: f64, f0: f64, f1: f64, f2: f64) -> f64 {
    h / 3.0 * (f0 + 4.0 * f1 + f2)
}

impl EffectiveCoefficients {
    /// Re-integrates a curve forward from its smallest-μ value.
    pub fn integrate_forward(&self, key: &CoefKey) -> Option<Vec<f64>> {
        let c = self.curves.get(key)?;
        let h = (self.fine_grid[1] / self.fine_grid[0]).ln();
        let mut out = vec![c.values[0]];
        for j in 0..self.mu_grid.len() - 1 {
            let r = &c.rates[2 * j..2 * j + 3];
            out.push(out[j] + simpson_step(h, r[0], r[1], r[2]));
        }
        Some(out)
    }
}

fn double_factorial(n: i64) -> f64 {
    if n <= 0 {
        return 1.0;
    }
    let mut v = 1.0;
    let mut k = n;
    while k > 1 {
        v *= k as f64;
        k -= 2;
    }
    v
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|j| (n - j) as f64 / (j + 1) as f64).product()
}

/// A source monomial feeding a target coefficient: g·C_μ^p.
struct Feed {
    g: f64,
    p: i32,
}

/// Integrates the first-order expected flow and solves the renormalization
/// conditions ⟨f_T⟩ = 𝔣 for every relevant entry.
pub fn flow_expected(
    spec: &ModelSpec,
    nu: f64,
    scheme: &RenormScheme,
    cfg: &FlowConfig,
) -> Result<(EffectiveCoefficients, CounterTermResult)> {
    cfg.validate()?;
    let noise = spec.noise.as_ref().ok_or_else(|| Fault::validation("the flow needs a noise model"))?;
    let noise = noise.with_nu(nu)?;
    let class = classify(spec)?;
    let filtered = symmetry_filter(spec);
    let ints = class.integers;

    let relevant: Vec<CoefKey> = scheme.entries.keys().cloned().collect();
    for k in &relevant {
        if k.i > cfg.i_max {
            return Err(Fault::validation(format!(
                "truncation i_max = {} is insufficient for relevant {k}",
                cfg.i_max
            )));
        }
        if k.i >= 2 && scheme.entries[k].1 == crate::model::RenormFlag::UserValue {
            return Err(Fault::validation(format!(
                "relevant {k} needs second-order expected kernels, which are not integrated; only first-order entries are supported"
            )));
        }
    }

    // microscopic values of the first-order monomials
    let mut known: BTreeMap<CoefKey, f64> = BTreeMap::new();
    for mo in &filtered.monomials {
        if spec.rho_key(&mo.key) > TOL {
            known.insert(mo.key.clone(), crate::model::irrelevant_value(spec, mo, nu));
        }
    }

    let tad = Tadpole::new(spec.d, spec.sigma, &noise, cfg.t_anchor, cfg.time_refine)?;
    let t = cfg.t_anchor;
    let octaves = (4.0 * t / tad.delta).log2().ceil().max(1.0) as usize;
    let nf = octaves * cfg.per_octave;
    let h = core::f64::consts::LN_2 / cfg.per_octave as f64;
    let mu_min = t * 2f64.powi(-(octaves as i32));
    let fine: Vec<f64> = (0..=nf).map(|j| mu_min * (j as f64 * h).exp()).collect();
    let dc: Vec<f64> = fine.iter().map(|&mu| tad.derivative(mu) * mu).collect();
    // C_μ forward from C_{μ_min} = 0, on stored nodes
    let mut cvals = vec![0.0];
    for j in 0..nf / 2 {
        let v = cvals[j] + simpson_step(h, dc[2 * j], dc[2 * j + 1], dc[2 * j + 2]);
        cvals.push(v);
    }
    // C at odd fine nodes, needed inside the rates of powers p ≥ 2
    let c_fine: Vec<f64> = (0..=nf)
        .map(|j| if j % 2 == 0 { cvals[j / 2] } else { tad.covariance(fine[j]) })
        .collect();
    let mu_grid: Vec<f64> = fine.iter().step_by(2).copied().collect();

    // first-order targets: every stored key of order 1, from the top arity down
    let mut targets: Vec<CoefKey> = relevant.iter().filter(|k| k.i == 1).cloned().collect();
    for k in known.keys() {
        if k.i == 1 && !targets.contains(k) {
            targets.push(k.clone());
        }
    }
    targets.sort_by(|a, b| b.m.cmp(&a.m).then(a.cmp(b)));
    let m_flat = ints.m_flat;
    for k in &targets {
        if k.m > m_flat {
            return Err(Fault::numerical(format!("structural zero violated: {k} has arity above {m_flat}")));
        }
    }

    let mut curves = BTreeMap::new();
    let mut entries = Vec::new();
    let mut worst_err: f64 = 0.0;
    for key in &targets {
        let mut feeds: Vec<Feed> = Vec::new();
        for (src, &val) in known.iter().filter(|(s, _)| s.i == 1 && s.m > key.m && (s.m - key.m) % 2 == 0) {
            let drop = (src.m - key.m) as usize;
            let src_zero = src.a.iter().filter(|x| **x == [0; 4]).count();
            let mut rest: Vec<_> = src.a.clone();
            let mut ok = true;
            for _ in 0..drop {
                match rest.iter().position(|x| *x == [0; 4]) {
                    Some(p) => {
                        rest.remove(p);
                    }
                    None => ok = false,
                }
            }
            rest.sort_unstable();
            if !ok || rest != key.a {
                if src.a.iter().any(|x| *x != [0; 4]) && val != 0.0 && ok_derivative_mismatch(src, key) {
                    return Err(Fault::validation(format!(
                        "expected flow from {src} into {key} contracts differentiated slots, which is unsupported"
                    )));
                }
                continue;
            }
            let g = val * binomial(src_zero, drop) * double_factorial(drop as i64 - 1);
            feeds.push(Feed { g, p: (drop / 2) as i32 });
        }
        let rate = |j: usize| -> f64 {
            feeds
                .iter()
                .map(|f| {
                    let cp = if f.p == 1 { 1.0 } else { f.p as f64 * c_fine[j].powi(f.p - 1) };
                    f.g * cp * dc[j]
                })
                .sum()
        };
        let rates: Vec<f64> = (0..=nf).map(rate).collect();
        let fine_total: f64 = (0..nf / 2).map(|j| simpson_step(h, rates[2 * j], rates[2 * j + 1], rates[2 * j + 2])).sum();
        let coarse_total: f64 =
            (0..nf / 4).map(|j| simpson_step(2.0 * h, rates[4 * j], rates[4 * j + 2], rates[4 * j + 4])).sum();
        let err = (fine_total - coarse_total).abs();
        let is_relevant = scheme.entries.contains_key(key);
        let mut values = vec![0.0; mu_grid.len()];
        if is_relevant {
            // backward from ⟨f_T⟩ = 𝔣
            let last = mu_grid.len() - 1;
            values[last] = scheme.value(key);
            for j in (0..last).rev() {
                values[j] = values[j + 1] - simpson_step(h, rates[2 * j], rates[2 * j + 1], rates[2 * j + 2]);
            }
            let f_nu = scheme.value(key) - fine_total;
            known.insert(key.clone(), f_nu);
            worst_err = worst_err.max(err);
            entries.push(CounterTermEntry {
                key: key.clone(),
                value: f_nu,
                provenance: Provenance::FlowIntegrated,
                quad_err: err,
            });
        } else {
            values[0] = known[key];
            for j in 0..mu_grid.len() - 1 {
                values[j + 1] = values[j] + simpson_step(h, rates[2 * j], rates[2 * j + 1], rates[2 * j + 2]);
            }
        }
        // structural check: with no feeds the curve is flat
        if feeds.is_empty() && values.iter().any(|v| (v - values[0]).abs() > 1e-14 * values[0].abs().max(1.0)) {
            return Err(Fault::numerical(format!("curve of {key} moved without a source")));
        }
        curves.insert(key.clone(), Curve { values, rates, relevant: is_relevant });
    }
    // symmetry-pinned entries are reported as zero
    for (k, (v, flag)) in &scheme.entries {
        if *flag == crate::model::RenormFlag::FixedBySymmetryZero && !entries.iter().any(|e| &e.key == k) {
            entries.push(CounterTermEntry { key: k.clone(), value: *v, provenance: Provenance::FlowIntegrated, quad_err: 0.0 });
        }
    }
    entries.sort_by(|a, b| a.key.cmp(&b.key));
    let m_max = (0..=cfg.i_max).map(|i| i * m_flat).collect();
    let tadpole_t = *cvals.last().unwrap_or(&0.0);
    let eff = EffectiveCoefficients { i_max: cfg.i_max, m_max, mu_grid, fine_grid: fine, tadpole: cvals, curves };
    let diagnostics = FlowDiagnostics {
        tadpole: tadpole_t,
        per_octave: cfg.per_octave,
        mu_min,
        time_step: tad.delta,
        lattice_n: tad.n,
        quad_err: worst_err,
    };
    Ok((eff, CounterTermResult { nu, entries, diagnostics }))
}

/// True when `src` could only feed `key` by contracting a slot that
/// carries derivatives.
fn ok_derivative_mismatch(src: &CoefKey, key: &CoefKey) -> bool {
    let mut rest = src.a.clone();
    for a in &key.a {
        match rest.iter().position(|x| x == a) {
            Some(p) => {
                rest.remove(p);
            }
            None => return false,
        }
    }
    rest.iter().any(|x| *x != [0; 4])
}

/// Label used in JSON output, e.g. "(1,3,0)".
pub fn entry_label(key: &CoefKey) -> String {
    format!("{key}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::preset;

    fn desk(nu: f64) -> (ModelSpec, RenormScheme) {
        let spec = preset("phi4_desk").unwrap();
        let scheme = RenormScheme::new(&spec, &BTreeMap::new()).unwrap();
        let _ = nu;
        (spec, scheme)
    }

    #[test]
    fn resolving_n_matches_scale() {
        assert_eq!(resolving_n(0.1, 0.5), 4096);
        assert_eq!(resolving_n(1.0, 2.0), 32);
    }

    #[test]
    fn tadpole_matches_oracle() {
        let (spec, scheme) = desk(0.1);
        let (eff, ct) = flow_expected(&spec, 0.1, &scheme, &FlowConfig::default()).unwrap();
        let noise = spec.noise.unwrap().with_nu(0.1).unwrap();
        let oracle = tadpole_oracle(1, 0.5, &noise, 1.0, 16).unwrap();
        let rel = (ct.diagnostics.tadpole - oracle).abs() / oracle;
        assert!(rel < 1e-6, "{} {} {rel}", ct.diagnostics.tadpole, oracle);
        let direct = Tadpole::new(1, 0.5, &noise, 1.0, 16).unwrap().covariance(1.0);
        assert!((direct - oracle).abs() / oracle < 1e-12);
        let k13 = CoefKey::plain(1, 3);
        let c = &eff.curves[&k13];
        assert!(c.values.iter().all(|v| (v - c.values[0]).abs() <= 1e-14 * c.values[0].abs()));
    }
}
