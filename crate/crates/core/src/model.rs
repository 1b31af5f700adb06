//! Force specification, scaling dimensions and the relevant/irrelevant
//! split.
//!
//! A coefficient is indexed by (i, m, a): order i in λ, arity m, and a
//! sorted list of m spatial multi-indices. Its dimension is
//! ϱ(i, m, a) = −dim Ξ + i·dim λ + m·dim Φ + |a|.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use num_complex::Complex64 as C64;
use num_traits::Float;

use crate::error::{Fault, Result};
use crate::lattice::{forward_slice, inverse_slice, Field, LatticeSpec};
use crate::noise::{Mollifier, NoiseKind, NoiseModel, Profile};

pub const TOL: f64 = 1e-12;

/// Spatial multi-index.
pub type SpIndex = [u32; 4];

pub fn sp_len(a: &SpIndex) -> u32 {
    a.iter().sum()
}

/// Index (i, m, a) of a force coefficient; `a` is kept sorted so that
/// permutations of the φ slots share one key.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoefKey {
    pub i: u32,
    pub m: u32,
    pub a: Vec<SpIndex>,
}

impl CoefKey {
    pub fn new(i: u32, m: u32, mut a: Vec<SpIndex>) -> Self {
        if a.is_empty() {
            a = vec![[0; 4]; m as usize];
        }
        a.sort_unstable();
        CoefKey { i, m, a }
    }

    pub fn plain(i: u32, m: u32) -> Self {
        CoefKey::new(i, m, Vec::new())
    }

    pub fn total_derivatives(&self) -> u32 {
        self.a.iter().map(sp_len).sum()
    }

    pub fn is_underived(&self) -> bool {
        self.total_derivatives() == 0
    }

    /// Short label such as `f_1_3_0`; derivative lists are appended.
    pub fn label(&self) -> String {
        let mut s = format!("f_{}_{}", self.i, self.m);
        if self.is_underived() {
            s.push_str("_0");
        } else {
            for a in &self.a {
                s.push_str(&format!("_{}{}{}{}", a[0], a[1], a[2], a[3]));
            }
        }
        s
    }
}

impl fmt::Display for CoefKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_underived() {
            write!(f, "({},{},0)", self.i, self.m)
        } else {
            write!(f, "({},{},{:?})", self.i, self.m, self.a)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub key: CoefKey,
    /// Microscopic coefficient b.
    pub base: f64,
    /// ε_irr ≥ 0 added to the decay exponent of irrelevant entries.
    pub extra_exponent: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symmetry {
    None,
    /// φ ↦ −φ together with the lattice isometries of space.
    ParityZ2,
    /// φ ↦ φ + c.
    ShiftR,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub d: usize,
    pub sigma: f64,
    pub dim_lambda: f64,
    pub lambda: f64,
    pub monomials: Vec<Monomial>,
    pub symmetry: Symmetry,
    pub noise: Option<NoiseModel>,
}

impl ModelSpec {
    pub fn dim_phi(&self) -> f64 {
        (self.d as f64 - self.sigma) / 2.0
    }

    pub fn dim_xi(&self) -> f64 {
        (self.d as f64 + self.sigma) / 2.0
    }

    pub fn rho(&self, i: u32, m: u32, derivs: u32) -> f64 {
        -self.dim_xi() + i as f64 * self.dim_lambda + m as f64 * self.dim_phi() + derivs as f64
    }

    pub fn rho_key(&self, k: &CoefKey) -> f64 {
        self.rho(k.i, k.m, k.total_derivatives())
    }

    pub fn is_boundary_case(&self) -> bool {
        self.dim_phi().abs() < TOL
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.d) {
            return Err(Fault::validation(format!("d = {} not supported", self.d)));
        }
        if !(self.sigma > 0.0) {
            return Err(Fault::validation("sigma must be positive"));
        }
        if !(self.dim_lambda > 0.0) || self.dim_phi() < -TOL {
            return Err(Fault::validation(format!(
                "outside the supported regime: dim_lambda = {}, dim_phi = {}",
                self.dim_lambda,
                self.dim_phi()
            )));
        }
        for mo in &self.monomials {
            let k = &mo.key;
            if k.i == 0 || k.a.len() != k.m as usize {
                return Err(Fault::validation(format!("malformed monomial {k}")));
            }
            for a in &k.a {
                if sp_len(a) as f64 >= self.sigma - TOL {
                    return Err(Fault::validation(format!("monomial {k} has a derivative of order >= sigma")));
                }
                if a[self.d..].iter().any(|&v| v != 0) {
                    return Err(Fault::validation(format!("monomial {k} differentiates along a missing axis")));
                }
            }
            if mo.extra_exponent < 0.0 {
                return Err(Fault::validation("extra_exponent must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn max_order(&self) -> u32 {
        self.monomials.iter().map(|m| m.key.i).max().unwrap_or(0)
    }

    pub fn max_arity(&self) -> u32 {
        self.monomials.iter().map(|m| m.key.m).max().unwrap_or(0)
    }

    pub fn monomial(&self, key: &CoefKey) -> Option<&Monomial> {
        self.monomials.iter().find(|m| &m.key == key)
    }
}

/// Integers derived from the dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DerivedIntegers {
    pub i_diamond: u32,
    pub m_diamond: u32,
    pub i_flat: u32,
    pub m_flat: u32,
    /// Largest i with ϱ(i,0,0) + σ ≤ 0; −1 when there is none.
    pub i_triangle: i32,
}

pub fn derived_integers(spec: &ModelSpec) -> DerivedIntegers {
    let largest = |f: &dyn Fn(u32) -> f64| -> i64 {
        let mut best = -1i64;
        for i in 0..10_000u32 {
            if f(i) <= TOL {
                best = i as i64;
            } else if i > 0 {
                break;
            }
        }
        best
    };
    let i_diamond = largest(&|i| spec.rho(i, 0, 0)).max(0) as u32;
    let m_diamond = largest(&|m| spec.rho(1, m, 0)).max(0) as u32;
    let i_triangle = largest(&|i| spec.rho(i, 0, 0) + spec.sigma) as i32;
    DerivedIntegers {
        i_diamond,
        m_diamond,
        i_flat: spec.max_order().max(i_diamond),
        m_flat: spec.max_arity().max(m_diamond),
        i_triangle,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RhoEntry {
    pub i: u32,
    pub m: u32,
    pub derivs: u32,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    /// Relevant coefficients with explicit derivative lists, in key order.
    pub relevant: Vec<(CoefKey, f64)>,
    /// Irrelevant (i, m, |a|) cells of the enumeration.
    pub irrelevant: Vec<RhoEntry>,
    /// Full ϱ table over the enumerated (i, m, |a|) cells.
    pub table: Vec<RhoEntry>,
    pub integers: DerivedIntegers,
}

impl Classification {
    pub fn relevant_keys(&self) -> Vec<CoefKey> {
        self.relevant.iter().map(|(k, _)| k.clone()).collect()
    }

    pub fn is_relevant(&self, k: &CoefKey) -> bool {
        self.relevant.iter().any(|(r, _)| r == k)
    }
}

/// Spatial multi-indices in d dimensions with |a| = n.
fn indices_of_len(d: usize, n: u32) -> Vec<SpIndex> {
    let mut out = Vec::new();
    let mut a = [0u32; 4];
    fn rec(axis: usize, d: usize, left: u32, a: &mut SpIndex, out: &mut Vec<SpIndex>) {
        if axis + 1 == d {
            a[axis] = left;
            out.push(*a);
            a[axis] = 0;
            return;
        }
        for v in 0..=left {
            a[axis] = v;
            rec(axis + 1, d, left - v, a, out);
        }
        a[axis] = 0;
    }
    rec(0, d, n, &mut a, &mut out);
    out.sort_unstable();
    out
}

/// Sorted lists of `m` multi-indices with per-slot order < σ and total
/// order exactly `total`.
fn derivative_lists(d: usize, m: u32, total: u32, sigma: f64) -> Vec<Vec<SpIndex>> {
    let max_slot = (0..).take_while(|&k| (k as f64) < sigma - TOL).last().unwrap_or(0);
    let mut alphabet: Vec<SpIndex> = Vec::new();
    for k in 0..=max_slot.min(total) {
        alphabet.extend(indices_of_len(d, k));
    }
    alphabet.sort_unstable();
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, left: u32, slots: u32, alphabet: &[SpIndex], cur: &mut Vec<SpIndex>, out: &mut Vec<Vec<SpIndex>>) {
        if slots == 0 {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for (j, a) in alphabet.iter().enumerate().skip(start) {
            let l = sp_len(a);
            if l > left {
                continue;
            }
            cur.push(*a);
            rec(j, left - l, slots - 1, alphabet, cur, out);
            cur.pop();
        }
    }
    rec(0, total, m, &alphabet, &mut cur, &mut out);
    out
}

/// Enumerate 1 ≤ i ≤ i_♭ + i_♦, 0 ≤ m ≤ m_♭·i, derivative totals with
/// per-slot order < σ, and split by the sign of ϱ.
pub fn classify(spec: &ModelSpec) -> Result<Classification> {
    spec.validate()?;
    let ints = derived_integers(spec);
    let max_slot = (0..).take_while(|&k| (k as f64) < spec.sigma - TOL).last().unwrap_or(0u32);
    let mut relevant = Vec::new();
    let mut irrelevant = Vec::new();
    let mut table = Vec::new();
    for i in 1..=(ints.i_flat + ints.i_diamond) {
        for m in 0..=(ints.m_flat * i) {
            for derivs in 0..=(m * max_slot) {
                let rho = spec.rho(i, m, derivs);
                let e = RhoEntry { i, m, derivs, rho };
                table.push(e.clone());
                if rho <= TOL {
                    for a in derivative_lists(spec.d, m, derivs, spec.sigma) {
                        relevant.push((CoefKey::new(i, m, a), rho));
                    }
                } else {
                    irrelevant.push(e);
                }
            }
        }
    }
    relevant.sort_by(|x, y| x.0.cmp(&y.0));
    Ok(Classification { relevant, irrelevant, table, integers: ints })
}

/// Whether a coefficient survives the declared symmetry.
pub fn allowed_by_symmetry(sym: Symmetry, d: usize, k: &CoefKey) -> bool {
    match sym {
        Symmetry::None => true,
        Symmetry::ParityZ2 => {
            // odd arity flips sign under φ ↦ −φ; an odd number of
            // derivatives along any axis flips sign under its reflection
            k.m % 2 == 1 && (0..d).all(|ax| k.a.iter().map(|a| a[ax]).sum::<u32>() % 2 == 0)
        }
        Symmetry::ShiftR => k.a.iter().all(|a| sp_len(a) > 0),
    }
}

/// Removes monomials violating the symmetry. Idempotent.
pub fn symmetry_filter(spec: &ModelSpec) -> ModelSpec {
    let mut out = spec.clone();
    out.monomials.retain(|m| allowed_by_symmetry(spec.symmetry, spec.d, &m.key));
    out
}

/// Relevant coefficients after the symmetry filter.
pub fn relevant_after_symmetry(spec: &ModelSpec) -> Result<(Vec<CoefKey>, Vec<CoefKey>)> {
    let c = classify(spec)?;
    let (kept, zero): (Vec<_>, Vec<_>) =
        c.relevant_keys().into_iter().partition(|k| allowed_by_symmetry(spec.symmetry, spec.d, k));
    Ok((kept, zero))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenormFlag {
    FixedBySymmetryZero,
    UserValue,
}

/// Renormalization parameters 𝔣 for the relevant coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct RenormScheme {
    pub entries: BTreeMap<CoefKey, (f64, RenormFlag)>,
}

impl RenormScheme {
    /// Builds the scheme from user values; relevant entries removed by the
    /// symmetry are pinned to 0, missing user values default to 0.
    pub fn new(spec: &ModelSpec, user: &BTreeMap<CoefKey, f64>) -> Result<Self> {
        let c = classify(spec)?;
        for k in user.keys() {
            if !c.is_relevant(k) {
                return Err(Fault::validation(format!("renormalization value given for non-relevant {k}")));
            }
        }
        let mut entries = BTreeMap::new();
        for (k, _) in &c.relevant {
            if allowed_by_symmetry(spec.symmetry, spec.d, k) {
                entries.insert(k.clone(), (user.get(k).copied().unwrap_or(0.0), RenormFlag::UserValue));
            } else {
                entries.insert(k.clone(), (0.0, RenormFlag::FixedBySymmetryZero));
            }
        }
        Ok(RenormScheme { entries })
    }

    pub fn value(&self, k: &CoefKey) -> f64 {
        self.entries.get(k).map(|e| e.0).unwrap_or(0.0)
    }

    pub fn active(&self) -> impl Iterator<Item = (&CoefKey, f64)> {
        self.entries.iter().filter(|(_, v)| v.1 == RenormFlag::UserValue).map(|(k, v)| (k, v.0))
    }
}

/// Macroscopic coefficient of an irrelevant monomial,
/// b·[ν]^{ϱ ∨ 0 + ε_irr}.
pub fn irrelevant_value(spec: &ModelSpec, mono: &Monomial, nu: f64) -> f64 {
    let rho = spec.rho_key(&mono.key).max(0.0);
    mono.base * nu.powf((rho + mono.extra_exponent) / spec.sigma)
}

/// The resolved coefficients f^{i,m,a}_ν of the macroscopic force.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceCoefficients {
    pub nu: f64,
    pub lambda: f64,
    pub terms: Vec<(CoefKey, f64)>,
}

impl ForceCoefficients {
    /// Combines irrelevant monomial values with `relevant` values (the
    /// counterterms). Every symmetry-allowed relevant index must be given.
    pub fn resolve(spec: &ModelSpec, nu: f64, relevant: &BTreeMap<CoefKey, f64>) -> Result<Self> {
        let spec_f = symmetry_filter(spec);
        let (kept, _) = relevant_after_symmetry(spec)?;
        let missing: Vec<String> = kept.iter().filter(|k| !relevant.contains_key(*k)).map(|k| format!("{k}")).collect();
        if !missing.is_empty() {
            return Err(Fault::validation(format!("missing relevant coefficient(s): {}", missing.join(", "))));
        }
        let mut terms: Vec<(CoefKey, f64)> = kept.iter().map(|k| (k.clone(), relevant[k])).collect();
        for mo in &spec_f.monomials {
            if spec.rho_key(&mo.key) > TOL {
                terms.push((mo.key.clone(), irrelevant_value(spec, mo, nu)));
            }
        }
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(ForceCoefficients { nu, lambda: spec.lambda, terms })
    }

    /// Coefficients given directly, bypassing classification.
    pub fn explicit(nu: f64, lambda: f64, terms: Vec<(CoefKey, f64)>) -> Self {
        ForceCoefficients { nu, lambda, terms }
    }

    pub fn get(&self, k: &CoefKey) -> f64 {
        self.terms.iter().find(|(t, _)| t == k).map(|t| t.1).unwrap_or(0.0)
    }

    pub fn max_order(&self) -> u32 {
        self.terms.iter().map(|t| t.0.i).max().unwrap_or(0)
    }

    pub fn derivative_lists(&self) -> Vec<SpIndex> {
        let mut v: Vec<SpIndex> = self.terms.iter().flat_map(|t| t.0.a.iter().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Spectral derivative ∂^a of a single slice.
pub fn spectral_derivative(spec: &LatticeSpec, values: &[f64], a: &SpIndex) -> Vec<f64> {
    if sp_len(a) == 0 {
        return values.to_vec();
    }
    let fft = spec.fft();
    let mut c = forward_slice(&fft, values);
    for (idx, v) in c.iter_mut().enumerate() {
        let k = spec.freq(idx);
        let mut f = C64::new(1.0, 0.0);
        for ax in 0..spec.d {
            for _ in 0..a[ax] {
                f *= C64::new(0.0, k[ax] as f64);
            }
        }
        *v *= f;
    }
    inverse_slice(&fft, &c)
}

/// Nonlinear part Σ (−1)^{|a|} λ^i f^{i,m,a} Π ∂^{a_q}φ of the force on
/// one slice (without the noise).
pub fn force_slice(coefs: &ForceCoefficients, spec: &LatticeSpec, phi: &[f64]) -> Vec<f64> {
    let mut derivs: Vec<(SpIndex, Vec<f64>)> = Vec::new();
    for a in coefs.derivative_lists() {
        derivs.push((a, spectral_derivative(spec, phi, &a)));
    }
    let mut out = vec![0.0; phi.len()];
    for (k, c) in &coefs.terms {
        let sign = if k.total_derivatives() % 2 == 1 { -1.0 } else { 1.0 };
        let w = sign * coefs.lambda.powi(k.i as i32) * c;
        if w == 0.0 {
            continue;
        }
        let factors: Vec<&Vec<f64>> =
            k.a.iter().map(|a| &derivs.iter().find(|(b, _)| b == a).expect("derivative table").1).collect();
        for (x, o) in out.iter_mut().enumerate() {
            let p: f64 = factors.iter().map(|f| f[x]).product();
            *o += w * p;
        }
    }
    out
}

/// F_ν[φ] = Ξ_ν + Σ (−1)^{|a|} λ^i f^{i,m,a}_ν Π ∂^{a_q}φ, pointwise.
pub fn evaluate_force(coefs: &ForceCoefficients, phi: &Field, noise: &Field) -> Result<Field> {
    if !phi.spec.same_grid(&noise.spec) || phi.data.len() != noise.data.len() {
        return Err(Fault::validation("phi and noise live on different lattices"));
    }
    phi.check_finite()?;
    noise.check_finite()?;
    let mut out = noise.clone();
    for j in 0..phi.n_slices() {
        let f = force_slice(coefs, &phi.spec, phi.slice(j));
        out.slice_mut(j).iter_mut().zip(&f).for_each(|(o, v)| *o += v);
    }
    Ok(out)
}

fn default_noise() -> NoiseModel {
    let m = Mollifier { time: Profile::CosPower(4), space: Profile::CosPower(4) };
    NoiseModel { kind: NoiseKind::MollifiedWhite(m), nu: 0.1, seed: 0 }
}

fn mono(i: u32, m: u32, a: Vec<SpIndex>, base: f64) -> Monomial {
    Monomial { key: CoefKey::new(i, m, a), base, extra_exponent: 0.0 }
}

/// Preset configurations. All carry mollified white noise with cos⁴
/// profiles at ν = 0.1.
pub fn preset(name: &str) -> Result<ModelSpec> {
    let cubic = |d, sigma, dim_lambda| ModelSpec {
        d,
        sigma,
        dim_lambda,
        lambda: 1.0,
        monomials: vec![mono(1, 3, Vec::new(), -1.0)],
        symmetry: Symmetry::ParityZ2,
        noise: Some(default_noise()),
    };
    match name {
        "phi4_3" => Ok(cubic(3, 2.0, 1.0)),
        "frac4_cubic" => Ok(cubic(4, 2.5, 1.0)),
        "frac4_laplacian" => Ok(cubic(4, 2.5, 0.5)),
        "d4_linear" => Ok(ModelSpec { monomials: vec![mono(1, 1, Vec::new(), 0.0)], ..cubic(4, 2.0, 0.5) }),
        "phi4_desk" => Ok(cubic(1, 0.5, 0.3)),
        _ => Err(Fault::validation(format!("unknown preset '{name}'"))),
    }
}

pub const PRESETS: [&str; 5] = ["phi4_3", "frac4_cubic", "frac4_laplacian", "d4_linear", "phi4_desk"];
