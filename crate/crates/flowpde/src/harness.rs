//! Universality and irrelevance experiments: ensembles of solves over a
//! decreasing ν schedule and several model variants, compared through
//! smeared moments of the solution at fixed macroscopic times.
//!
//! Every cell starts at t = 0 from its stationary linear state Φ^▷(0),
//! the linear response to the noise over [−2, 0]. With coupling on, all
//! cells of one sample share the same white-noise realization, mollified
//! at each cell's ν by each variant's profiles.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use flowpde_core::flow::{flow_expected, FlowConfig};
use flowpde_core::kernels::DEFAULT_EPS;
use flowpde_core::lattice::{forward_slice, inverse_slice};
use flowpde_core::model::{relevant_after_symmetry, CoefKey, ForceCoefficients, ModelSpec, Monomial, RenormScheme, TOL};
use flowpde_core::noise::{sample_macroscopic_noise, white_noise, Mollification, NoiseKind, NoiseModel};
use flowpde_core::rng::mix;
use flowpde_core::solver::{linear_response, solve_mild, LinearStart, Noise, Scheme, SolveConfig, Status};
use flowpde_core::{Fault, Field, LatticeSpec};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{key_from_parts, ModelConfig, MonomialConfig};
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFn {
    /// cos(k x₁).
    Cos { k: u32 },
    /// Π_a (1 + cos x_a).
    OnePlusCos,
    /// Periodized Gaussian of the given width around `center` on every axis.
    Gaussian { center: f64, width: f64 },
}

impl TestFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TestFn::Cos { k } => (k as f64 * x[0]).cos(),
            TestFn::OnePlusCos => x.iter().map(|v| 1.0 + v.cos()).product(),
            TestFn::Gaussian { center, width } => x
                .iter()
                .map(|v| {
                    let mut z = (v - center).rem_euclid(2.0 * PI);
                    if z > PI {
                        z -= 2.0 * PI;
                    }
                    (-z * z / (2.0 * width * width)).exp()
                })
                .product(),
        }
    }

    fn label(&self) -> String {
        match *self {
            TestFn::Cos { k } => format!("cos{k}"),
            TestFn::OnePlusCos => "1+cos".into(),
            TestFn::Gaussian { center, width } => format!("gauss({center};{width})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableConfig {
    /// ⟨Φ(t), ψ⟩.
    SlicePairing {
        test: TestFn,
        #[serde(default)]
        time: Option<f64>,
    },
    /// Spatial average of Φ_ψ(x) Φ_ψ(x + ℓe_d) with Φ_ψ = ψ ⋆ Φ(t), per lag ℓ.
    TwoPoint {
        lags: Vec<f64>,
        test: TestFn,
        #[serde(default)]
        time: Option<f64>,
    },
    /// ⟨Φ(t), ψ⟩^p.
    SliceMoment {
        p: u32,
        test: TestFn,
        #[serde(default)]
        time: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub label: String,
    pub model: ModelConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub n: usize,
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Etd1,
    #[default]
    EtdRk2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub label: String,
    pub monomial: MonomialConfig,
}

fn yes() -> bool {
    true
}

fn half() -> f64 {
    0.5
}

fn default_observables() -> Vec<ObservableConfig> {
    vec![ObservableConfig::SliceMoment { p: 2, test: TestFn::OnePlusCos, time: None }]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub variants: Vec<VariantConfig>,
    pub nu: Vec<f64>,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub coupled: bool,
    /// When false every relevant coefficient is set to 0 (control runs).
    #[serde(default = "yes")]
    pub renormalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeConfig>,
    #[serde(default = "half")]
    pub t_obs: f64,
    #[serde(default = "default_observables")]
    pub observables: Vec<ObservableConfig>,
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Turns the run into an irrelevance probe around the first variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
}

/// One scalar statistic evaluated per sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    Pairing { test: TestFn, time: f64, power: u32 },
    TwoPoint { test: TestFn, time: f64, lag: f64 },
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Pairing { test, time, power: 1 } => format!("slice_pairing(psi={};t={time})", test.label()),
            Observable::Pairing { test, time, power } => {
                format!("slice_moment(p={power};psi={};t={time})", test.label())
            }
            Observable::TwoPoint { test, time, lag } => format!("two_point(lag={lag};psi={};t={time})", test.label()),
        }
    }

    fn time(&self) -> f64 {
        match self {
            Observable::Pairing { time, .. } | Observable::TwoPoint { time, .. } => *time,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub model: ModelSpec,
    pub renorm: BTreeMap<CoefKey, f64>,
}

/// Validated experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub variants: Vec<Variant>,
    pub nus: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub coupled: bool,
    pub renormalize: bool,
    pub n: usize,
    pub dt: f64,
    pub observables: Vec<Observable>,
    pub solve: SolveConfig,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::validation(msg)
}

impl ExperimentPlan {
    pub fn from_config(cfg: &PlanConfig) -> CliResult<Self> {
        let variants = cfg
            .variants
            .iter()
            .map(|v| {
                let (model, renorm) = v.model.to_spec()?;
                Ok(Variant { label: v.label.clone(), model, renorm })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let first = variants.first().ok_or_else(|| invalid("plan needs at least one variant"))?;
        let sigma = first.model.sigma;
        let nu_min = cfg.nu.last().copied().ok_or_else(|| invalid("empty nu schedule"))?;
        let (n, dt) = match cfg.lattice {
            Some(l) => (l.n, l.dt),
            None => {
                let n = flowpde_core::flow::expected::resolving_n(nu_min, sigma);
                (n, nu_min / 8.0)
            }
        };
        let eps = cfg.eps.unwrap_or(DEFAULT_EPS);
        let mut times: Vec<f64> = Vec::new();
        let mut observables = Vec::new();
        for o in &cfg.observables {
            match o {
                ObservableConfig::SlicePairing { test, time } => {
                    observables.push(Observable::Pairing { test: *test, time: time.unwrap_or(cfg.t_obs), power: 1 })
                }
                ObservableConfig::SliceMoment { p, test, time } => {
                    if !(1..=4).contains(p) {
                        return Err(invalid("slice moments need p in 1..=4"));
                    }
                    observables.push(Observable::Pairing { test: *test, time: time.unwrap_or(cfg.t_obs), power: *p })
                }
                ObservableConfig::TwoPoint { lags, test, time } => {
                    if lags.is_empty() {
                        return Err(invalid("two_point needs at least one lag"));
                    }
                    for lag in lags {
                        observables.push(Observable::TwoPoint { test: *test, time: time.unwrap_or(cfg.t_obs), lag: *lag });
                    }
                }
            }
        }
        if observables.is_empty() {
            return Err(invalid("plan needs at least one observable"));
        }
        for o in &observables {
            let t = o.time();
            if !(t > 0.0) {
                return Err(invalid("observable times must be positive"));
            }
            times.push(t);
        }
        let horizon = times.iter().copied().fold(0.0, f64::max);
        let solve = SolveConfig {
            scheme: match cfg.scheme {
                SchemeName::Etd1 => Scheme::Etd1,
                SchemeName::EtdRk2 => Scheme::EtdRk2,
            },
            dt,
            horizon,
            radius: cfg.radius.unwrap_or(1e8),
            gamma: sigma - eps,
            keep_trajectory: times.iter().any(|t| (t - horizon).abs() > 1e-12),
            ..SolveConfig::new(sigma)
        };
        let plan = ExperimentPlan {
            variants,
            nus: cfg.nu.clone(),
            samples: cfg.samples,
            seed: cfg.seed,
            coupled: cfg.coupled,
            renormalize: cfg.renormalize,
            n,
            dt,
            observables,
            solve,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.samples < 2 {
            return Err(invalid("need at least two samples per cell"));
        }
        if self.nus.is_empty() || self.nus.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(invalid("nu schedule must be non-empty and strictly decreasing"));
        }
        self.solve.validate()?;
        let first = &self.variants[0];
        let m0 = &first.model;
        let (rel0, _) = relevant_after_symmetry(m0)?;
        let scheme0 = RenormScheme::new(m0, &first.renorm)?;
        let mut labels: Vec<&str> = Vec::new();
        for v in &self.variants {
            let m = &v.model;
            if labels.contains(&v.label.as_str()) {
                return Err(invalid(format!("duplicate variant label '{}'", v.label)));
            }
            labels.push(&v.label);
            if m.d != m0.d || (m.sigma - m0.sigma).abs() > TOL || (m.dim_lambda - m0.dim_lambda).abs() > TOL {
                return Err(invalid(format!("variant '{}' differs in (d, sigma, dim_lambda)", v.label)));
            }
            if relevant_after_symmetry(m)?.0 != rel0 || RenormScheme::new(m, &v.renorm)? != scheme0 {
                return Err(invalid(format!("variant '{}' has a different renormalization scheme", v.label)));
            }
            let noise = m.noise.ok_or_else(|| invalid(format!("variant '{}' has no noise model", v.label)))?;
            let spec = self.cell_spec(m)?;
            for &nu in &self.nus {
                noise.with_nu(nu)?.check_resolution(&spec)?;
            }
        }
        Ok(())
    }

    fn cell_spec(&self, m: &ModelSpec) -> CliResult<LatticeSpec> {
        Ok(LatticeSpec::new(m.d, self.n, self.dt, 0.0, self.solve.horizon, m.sigma)?)
    }

    fn noise_at(&self, v: &Variant, nu: f64) -> CliResult<NoiseModel> {
        let base = v.model.noise.ok_or_else(|| invalid("variant without noise"))?;
        Ok(NoiseModel { seed: self.seed, ..base.with_nu(nu)? })
    }
}

/// Force coefficients of one (variant, ν) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellCoefficients {
    pub variant: usize,
    pub nu: f64,
    pub coefs: ForceCoefficients,
    pub counterterms: BTreeMap<CoefKey, f64>,
}

pub fn cell_coefficients(plan: &ExperimentPlan) -> CliResult<Vec<CellCoefficients>> {
    let cells: Vec<(usize, f64)> =
        (0..plan.variants.len()).flat_map(|v| plan.nus.iter().map(move |&nu| (v, nu))).collect();
    cells
        .par_iter()
        .map(|&(vi, nu)| {
            let v = &plan.variants[vi];
            let mut model = v.model.clone();
            model.noise = Some(plan.noise_at(v, nu)?);
            let counterterms = if plan.renormalize {
                let scheme = RenormScheme::new(&model, &v.renorm)?;
                flow_expected(&model, nu, &scheme, &FlowConfig::default())?.1.values()
            } else {
                relevant_after_symmetry(&model)?.0.into_iter().map(|k| (k, 0.0)).collect()
            };
            let coefs = ForceCoefficients::resolve(&model, nu, &counterterms)?;
            Ok(CellCoefficients { variant: vi, nu, coefs, counterterms })
        })
        .collect()
}

fn pairing(phi: &[f64], psi: &[f64], vol: f64) -> f64 {
    phi.iter().zip(psi).map(|(a, b)| a * b).sum::<f64>() * vol
}

struct ObservableTables {
    psi: Vec<Vec<f64>>,
    psi_hat: Vec<Vec<C64>>,
}

impl ObservableTables {
    fn new(spec: &LatticeSpec, obs: &[Observable]) -> Self {
        let fft = spec.fft();
        let mut psi = Vec::new();
        let mut psi_hat = Vec::new();
        for o in obs {
            let test = match o {
                Observable::Pairing { test, .. } | Observable::TwoPoint { test, .. } => test,
            };
            let table: Vec<f64> = (0..spec.n_space()).map(|i| test.eval(&spec.position(i)[..spec.d])).collect();
            psi_hat.push(forward_slice(&fft, &table));
            psi.push(table);
        }
        ObservableTables { psi, psi_hat }
    }
}

fn evaluate(spec: &LatticeSpec, obs: &[Observable], tables: &ObservableTables, at: impl Fn(f64) -> Vec<f64>) -> Vec<f64> {
    let vol = spec.cell_volume();
    obs.iter()
        .enumerate()
        .map(|(q, o)| match o {
            Observable::Pairing { time, power, .. } => pairing(&at(*time), &tables.psi[q], vol).powi(*power as i32),
            Observable::TwoPoint { time, lag, .. } => {
                let fft = spec.fft();
                let mut c = forward_slice(&fft, &at(*time));
                // Φ_ψ(x) = Σ_y ψ(y − x) Φ(y) vol: correlation, so conj(ψ̂)
                c.iter_mut().zip(&tables.psi_hat[q]).for_each(|(a, b)| *a *= b.conj() * vol);
                let smeared = inverse_slice(&fft, &c);
                let shift = (lag / spec.dx()).round() as i64;
                let n = spec.n as i64;
                let ns = spec.n_space();
                let mut acc = 0.0;
                for (idx, v) in smeared.iter().enumerate() {
                    // shift along the last (fastest) axis
                    let xl = (idx % spec.n) as i64;
                    let j = idx - xl as usize + (xl + shift).rem_euclid(n) as usize;
                    acc += v * smeared[j];
                }
                acc / ns as f64
            }
        })
        .collect()
}

/// Per-sample statistics for every cell; `None` marks a sample that blew up
/// before the last observable time.
type SampleRow = Vec<Option<Vec<f64>>>;

/// Noise history before t = 0 that feeds the stationary start Φ^▷(0).
const HISTORY: f64 = 2.0;

impl ExperimentPlan {
    /// Lattice of the history window [−H, 0], H ≥ 2 a multiple of dt.
    fn history_spec(&self, m: &ModelSpec) -> CliResult<LatticeSpec> {
        let h = (HISTORY / self.dt - 1e-9).ceil() * self.dt;
        Ok(LatticeSpec::new(m.d, self.n, self.dt, -h, 0.0, m.sigma)?)
    }
}

/// Mollification of one white-noise cell on the solve window, and its
/// stationary start folded over the history window.
struct CellNoise {
    main: Mollification,
    start: LinearStart,
}

/// Per-cell mollifications, `None` for shot-noise cells.
fn cell_mollifications(plan: &ExperimentPlan, cells: &[CellCoefficients]) -> CliResult<Vec<Option<CellNoise>>> {
    let first = &plan.variants[0].model;
    let spec = plan.cell_spec(first)?;
    let hist = plan.history_spec(first)?;
    cells
        .par_iter()
        .map(|c| {
            let nm = plan.noise_at(&plan.variants[c.variant], c.nu)?;
            Ok(match nm.kind {
                NoiseKind::MollifiedWhite(_) => {
                    let start = LinearStart::new(&Mollification::new(&nm, &hist)?, &plan.solve)?;
                    Some(CellNoise { main: Mollification::new(&nm, &spec)?, start })
                }
                NoiseKind::PoissonShot { .. } => None,
            })
        })
        .collect()
}

fn spectra_of(field: &Field) -> Vec<Vec<C64>> {
    let fft = field.spec.fft();
    (0..field.n_slices()).map(|j| forward_slice(&fft, field.slice(j))).collect()
}

fn run_sample(
    plan: &ExperimentPlan,
    cells: &[CellCoefficients],
    moll: &[Option<CellNoise>],
    sample: u64,
) -> CliResult<SampleRow> {
    let first = &plan.variants[0].model;
    let spec = plan.cell_spec(first)?;
    let hist = plan.history_spec(first)?;
    let tables = ObservableTables::new(&spec, &plan.observables);

    // shared white noise over the union of the cells' ranges
    let mut shared = None;
    if plan.coupled {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for m in moll.iter().flatten() {
            for (a, b) in [m.start.white_range(), m.main.white_range()?] {
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        if lo <= hi {
            shared = Some(white_noise(plan.seed, sample, &spec, lo, hi));
        }
    }

    let mut out = Vec::with_capacity(cells.len());
    for (ci, c) in cells.iter().enumerate() {
        let v = &plan.variants[c.variant];
        let id = if plan.coupled { sample } else { mix(&[sample, ci as u64]) };
        // every cell starts from its own stationary linear state Φ^▷(0)
        let result = match &moll[ci] {
            Some(m) => {
                let own;
                let white = match &shared {
                    Some(w) => w,
                    None => {
                        let (a, _) = m.start.white_range();
                        let (_, b) = m.main.white_range()?;
                        own = white_noise(plan.seed, id, &spec, a, b);
                        &own
                    }
                };
                let phi0 = m.start.state(white)?;
                let slices = m.main.apply(white)?;
                solve_mild(&c.coefs, Noise::Spectral { t0: 0.0, dt: spec.dt, slices: &slices }, &phi0, 0.0, &plan.solve)
            }
            None => {
                let nm = plan.noise_at(v, c.nu)?;
                let past = sample_macroscopic_noise(&nm, &hist, id)?;
                let phi0 = linear_response(hist, &plan.solve, &spectra_of(&past))?;
                let field = sample_macroscopic_noise(&nm, &spec, id)?;
                solve_mild(&c.coefs, Noise::Field(&field), &phi0, 0.0, &plan.solve)
            }
        };
        let res = match result {
            Ok(r) => r,
            Err(Fault::Numerical(_)) => {
                out.push(None);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if res.status == Status::BlewUp {
            out.push(None);
            continue;
        }
        let values = match &res.trajectory {
            Some(tr) => evaluate(&spec, &plan.observables, &tables, |t| tr.slice(tr.spec.slice_at(t)).to_vec()),
            None => evaluate(&spec, &plan.observables, &tables, |_| res.final_state.data.clone()),
        };
        out.push(Some(values));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub variant: String,
    pub nu: f64,
    pub observable: String,
    pub estimate: f64,
    pub se: f64,
    pub gap: Option<f64>,
    pub verdict: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapPoint {
    pub nu: f64,
    pub gap: f64,
    /// Combined SE √(SE₁² + SE₂²) of the two estimates.
    pub se: f64,
    /// SE of the per-sample differences, when coupled.
    pub paired_se: Option<f64>,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossVariantVerdict {
    pub variant: String,
    pub reference: String,
    pub observable: String,
    pub gaps: Vec<GapPoint>,
    pub verdict: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CauchyStep {
    pub nu_from: f64,
    pub nu_to: f64,
    pub diff: f64,
    pub se: f64,
    pub paired_se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CauchyGaps {
    pub variant: String,
    pub observable: String,
    pub steps: Vec<CauchyStep>,
    /// Every successive difference exceeds 3 SE.
    pub drift_exceeds_3se: bool,
    /// Successive differences grow in magnitude along the schedule.
    pub drift_grows: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellFlag {
    pub variant: String,
    pub nu: f64,
    pub blown_up: usize,
    pub valid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellCounterterms {
    pub variant: String,
    pub nu: f64,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub universal: bool,
    pub samples: usize,
    pub coupled: bool,
    pub renormalize: bool,
    pub lattice_n: usize,
    pub dt: f64,
    pub rows: Vec<ReportRow>,
    pub verdicts: Vec<CrossVariantVerdict>,
    pub cauchy: Vec<CauchyGaps>,
    pub flagged_cells: Vec<CellFlag>,
    pub counterterms: Vec<CellCounterterms>,
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (m, f64::NAN);
    }
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Difference of two cells' means. When coupled both means run over the
/// samples valid in both cells and the paired SE is reported as well.
struct Difference {
    value: f64,
    se: f64,
    paired_se: Option<f64>,
    samples: usize,
}

fn difference(a: &[Option<f64>], b: &[Option<f64>], coupled: bool) -> Difference {
    let (xa, xb): (Vec<f64>, Vec<f64>) = if coupled {
        a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip()
    } else {
        (a.iter().flatten().copied().collect(), b.iter().flatten().copied().collect())
    };
    let (ma, sa) = mean_se(&xa);
    let (mb, sb) = mean_se(&xb);
    let paired_se = coupled.then(|| {
        let d: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x - y).collect();
        mean_se(&d).1
    });
    Difference { value: ma - mb, se: (sa * sa + sb * sb).sqrt(), paired_se, samples: xa.len().min(xb.len()) }
}

/// Final gap within 3 SE, and |gap| non-increasing along the schedule up
/// to a single increase of at most one SE.
pub fn universality_verdict(gaps: &[GapPoint]) -> &'static str {
    if gaps.is_empty() || gaps.iter().any(|g| !g.gap.is_finite() || !g.se.is_finite()) {
        return "inconclusive";
    }
    let last = gaps.last().unwrap();
    let mut violations = 0;
    let mut oversized = false;
    for w in gaps.windows(2) {
        let rise = w[1].gap.abs() - w[0].gap.abs();
        if rise > 0.0 {
            violations += 1;
            oversized |= rise > w[1].se;
        }
    }
    if last.gap.abs() <= 3.0 * last.se && violations <= 1 && !oversized {
        "universal"
    } else {
        "not_universal"
    }
}

/// Runs the solver ensemble for every (variant, ν) cell and aggregates.
pub fn run_universality(plan: &ExperimentPlan) -> CliResult<ExperimentReport> {
    plan.validate()?;
    let cells = cell_coefficients(plan)?;
    let moll = cell_mollifications(plan, &cells)?;
    let per_sample: Vec<SampleRow> = (0..plan.samples as u64)
        .into_par_iter()
        .map(|s| run_sample(plan, &cells, &moll, s))
        .collect::<CliResult<_>>()?;
    Ok(aggregate(plan, &cells, &per_sample))
}

fn aggregate(plan: &ExperimentPlan, cells: &[CellCoefficients], per_sample: &[SampleRow]) -> ExperimentReport {
    let nv = plan.variants.len();
    let nn = plan.nus.len();
    let cell = |v: usize, j: usize| v * nn + j;
    // column (cell, observable) → per-sample values
    let column = |c: usize, q: usize| -> Vec<Option<f64>> {
        per_sample.iter().map(|row| row[c].as_ref().map(|vals| vals[q])).collect()
    };
    let names: Vec<String> = plan.observables.iter().map(|o| o.name()).collect();

    let mut verdicts = Vec::new();
    let mut verdict_of: BTreeMap<(usize, usize), String> = BTreeMap::new();
    let mut gap_of: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for v in 1..nv {
        for (q, name) in names.iter().enumerate() {
            let gaps: Vec<GapPoint> = (0..nn)
                .map(|j| {
                    let d = difference(&column(cell(v, j), q), &column(cell(0, j), q), plan.coupled);
                    gap_of.insert((v, j, q), d.value);
                    GapPoint { nu: plan.nus[j], gap: d.value, se: d.se, paired_se: d.paired_se, samples: d.samples }
                })
                .collect();
            let verdict = universality_verdict(&gaps).to_string();
            verdict_of.insert((v, q), verdict.clone());
            verdicts.push(CrossVariantVerdict {
                variant: plan.variants[v].label.clone(),
                reference: plan.variants[0].label.clone(),
                observable: name.clone(),
                gaps,
                verdict,
            });
        }
    }

    let mut cauchy = Vec::new();
    for v in 0..nv {
        for (q, name) in names.iter().enumerate() {
            let steps: Vec<CauchyStep> = (0..nn.saturating_sub(1))
                .map(|j| {
                    let d = difference(&column(cell(v, j + 1), q), &column(cell(v, j), q), plan.coupled);
                    CauchyStep { nu_from: plan.nus[j], nu_to: plan.nus[j + 1], diff: d.value, se: d.se, paired_se: d.paired_se }
                })
                .collect();
            let drift_exceeds_3se = !steps.is_empty() && steps.iter().all(|s| s.diff.abs() > 3.0 * s.se);
            let drift_grows = !steps.is_empty() && steps.windows(2).all(|w| w[1].diff.abs() >= w[0].diff.abs());
            cauchy.push(CauchyGaps {
                variant: plan.variants[v].label.clone(),
                observable: name.clone(),
                steps,
                drift_exceeds_3se,
                drift_grows,
            });
        }
    }

    let mut rows = Vec::new();
    let mut flagged_cells = Vec::new();
    for v in 0..nv {
        for j in 0..nn {
            let c = cell(v, j);
            let valid = per_sample.iter().filter(|r| r[c].is_some()).count();
            if valid < per_sample.len() {
                flagged_cells.push(CellFlag {
                    variant: plan.variants[v].label.clone(),
                    nu: plan.nus[j],
                    blown_up: per_sample.len() - valid,
                    valid,
                });
            }
            for (q, name) in names.iter().enumerate() {
                let x: Vec<f64> = column(c, q).into_iter().flatten().collect();
                let (estimate, se) = mean_se(&x);
                let (gap, verdict) = if v == 0 {
                    (None, "reference".to_string())
                } else {
                    (gap_of.get(&(v, j, q)).copied(), verdict_of[&(v, q)].clone())
                };
                rows.push(ReportRow {
                    variant: plan.variants[v].label.clone(),
                    nu: plan.nus[j],
                    observable: name.clone(),
                    estimate,
                    se,
                    gap,
                    verdict,
                });
            }
        }
    }

    let counterterms = cells
        .iter()
        .map(|c| CellCounterterms {
            variant: plan.variants[c.variant].label.clone(),
            nu: c.nu,
            values: c.counterterms.iter().map(|(k, v)| (k.label(), *v)).collect(),
        })
        .collect();

    ExperimentReport {
        universal: !verdicts.is_empty() && verdicts.iter().all(|v| v.verdict == "universal"),
        samples: plan.samples,
        coupled: plan.coupled,
        renormalize: plan.renormalize,
        lattice_n: plan.n,
        dt: plan.dt,
        rows,
        verdicts,
        cauchy,
        flagged_cells,
        counterterms,
    }
}

/// Compares the first variant with and without an added irrelevant
/// monomial. A monomial of non-positive dimension is rejected.
pub fn run_irrelevance_probe(plan: &ExperimentPlan, label: &str, extra: &Monomial) -> CliResult<ExperimentReport> {
    let base = plan.variants.first().ok_or_else(|| invalid("plan needs a base variant"))?;
    let rho = base.model.rho_key(&extra.key);
    if rho <= TOL {
        return Err(invalid(format!("perturbation {} is not irrelevant (rho = {rho:.4})", extra.key)));
    }
    let mut plain = base.clone();
    plain.model.monomials.retain(|m| m.key != extra.key);
    let mut perturbed = plain.clone();
    perturbed.label = label.to_string();
    perturbed.model.monomials.push(extra.clone());
    let probe = ExperimentPlan { variants: vec![plain, perturbed], ..plan.clone() };
    run_universality(&probe)
}

pub fn perturbation_monomial(d: usize, p: &PerturbationConfig) -> CliResult<Monomial> {
    let m = &p.monomial;
    Ok(Monomial { key: key_from_parts(d, m.i, m.m, &m.a)?, base: m.base, extra_exponent: m.extra_exponent })
}

/// Runs the experiment a plan file describes: an irrelevance probe when it
/// carries a perturbation, a universality run otherwise.
pub fn run_plan(cfg: &PlanConfig) -> CliResult<ExperimentReport> {
    let plan = ExperimentPlan::from_config(cfg)?;
    match &cfg.perturbation {
        Some(p) => {
            let mono = perturbation_monomial(plan.variants[0].model.d, p)?;
            run_irrelevance_probe(&plan, &p.label, &mono)
        }
        None => run_universality(&plan),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gp(gap: f64, se: f64) -> GapPoint {
        GapPoint { nu: 0.1, gap, se, paired_se: None, samples: 10 }
    }

    #[test]
    fn verdict_rule() {
        assert_eq!(universality_verdict(&[gp(0.5, 0.1), gp(0.2, 0.1), gp(0.1, 0.1)]), "universal");
        assert_eq!(universality_verdict(&[gp(0.5, 0.1), gp(0.55, 0.1), gp(0.1, 0.1)]), "universal");
        assert_eq!(universality_verdict(&[gp(0.5, 0.1), gp(0.8, 0.1), gp(0.1, 0.1)]), "not_universal");
        assert_eq!(universality_verdict(&[gp(0.5, 0.1), gp(0.55, 0.1), gp(0.6, 0.3)]), "not_universal");
        assert_eq!(universality_verdict(&[gp(0.5, 0.1), gp(0.4, 0.1)]), "not_universal");
        assert_eq!(universality_verdict(&[gp(f64::NAN, 0.1)]), "inconclusive");
    }

    #[test]
    fn paired_and_independent_differences() {
        let a = [Some(1.0), Some(2.0), None, Some(4.0)];
        let b = [Some(0.5), Some(1.5), Some(9.0), Some(3.5)];
        let d = difference(&a, &b, true);
        assert!((d.value - 0.5).abs() < 1e-12 && d.paired_se.unwrap() < 1e-12 && d.samples == 3);
        assert!(d.se > 1.0);
        let d = difference(&a, &b, false);
        assert!((d.value - (7.0 / 3.0 - 14.5 / 4.0)).abs() < 1e-12);
        assert_eq!(d.paired_se, None);
    }

    #[test]
    fn test_functions() {
        assert_eq!(TestFn::OnePlusCos.eval(&[0.0]), 2.0);
        assert!((TestFn::Cos { k: 2 }.eval(&[PI / 2.0]) + 1.0).abs() < 1e-15);
        let g = TestFn::Gaussian { center: 0.1, width: 0.2 };
        assert!((g.eval(&[0.1 + 2.0 * PI]) - 1.0).abs() < 1e-12);
    }
}
