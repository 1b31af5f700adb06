//! Exponential time differencing for the mild equation
//! Φ = G ∗ (1_{[t0,∞)} F_ν[Φ] + δ_{t0} ⊗ φ).
//!
//! The linear part is propagated exactly per Fourier mode. Nonlinear
//! products are formed in physical space. The shifted variant solves for
//! Φ̆ = Φ − Φ^▷ with Φ^▷ = (G − G_1) ∗ f^▷, whose force is
//!   F̂[φ] = F[φ + Φ^▷] − f^▷ + (μ^{−1}χ'(·/μ)G)|_{μ=1} ∗ f^▷.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64 as C64;
use num_traits::Float;

use crate::error::{Fault, Result};
use crate::fft::FftNd;
use crate::flow::pathwise::expand_pathwise;
use crate::kernels::{convolve, KernelKind, SpectralKernel, DEFAULT_EPS};
use crate::lattice::{forward_slice, inverse_slice, Domain, Field, LatticeSpec};
use crate::model::{force_slice, ForceCoefficients};
use crate::noise::{Mollification, WhiteNoise};
use crate::norms::{c_gamma_spectral, c_gamma_weights};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Etd1,
    EtdRk2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_loc: f64,
    /// Blow-up radius R on the 𝒞^γ norm.
    pub radius: f64,
    pub horizon: f64,
    pub dealias: bool,
    pub gamma: f64,
    pub keep_trajectory: bool,
}

impl SolveConfig {
    pub fn new(sigma: f64) -> Self {
        SolveConfig {
            scheme: Scheme::EtdRk2,
            dt: 1e-3,
            t_loc: 0.25,
            radius: 1e3,
            horizon: 1.0,
            dealias: true,
            gamma: sigma - DEFAULT_EPS,
            keep_trajectory: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(Fault::validation("dt and horizon must be positive"));
        }
        if !(self.t_loc > 0.0 && self.t_loc <= 1.0) {
            return Err(Fault::validation("T_loc must lie in (0, 1]"));
        }
        if !(self.radius > 1.0) {
            return Err(Fault::validation("blow-up radius must exceed 1"));
        }
        if !(self.gamma > 0.0) {
            return Err(Fault::validation("gamma must be positive"));
        }
        Ok(())
    }

    fn steps(&self, length: f64) -> Result<usize> {
        let s = length / self.dt;
        if (s - s.round()).abs() > 1e-6 * s.max(1.0) {
            return Err(Fault::validation(format!("length {length} is not a multiple of dt = {}", self.dt)));
        }
        Ok(s.round() as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Completed,
    BlewUp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub times: Vec<f64>,
    /// 𝒞^γ norm of the monitored variable per slice.
    pub norms: Vec<f64>,
    pub status: Status,
    /// Stop time: first slice with norm ≥ R, or the horizon.
    pub breve_t: f64,
    /// Φ at the last slice.
    pub final_state: Field,
    /// Φ on every slice, when kept.
    pub trajectory: Option<Field>,
    /// Φ̆ at the last slice for shifted runs.
    pub remainder: Option<Field>,
    pub windows: usize,
}

/// Additive noise seen by the solver, sampled at the step times.
#[derive(Clone, Copy, Debug)]
pub enum Noise<'a> {
    Zero,
    Field(&'a Field),
    /// Spectral slices at times t0 + j·dt.
    Spectral { t0: f64, dt: f64, slices: &'a [Vec<C64>] },
}

fn slice_index(t_min: f64, dt: f64, len: usize, t: f64) -> Result<usize> {
    let x = (t - t_min) / dt;
    let j = x.round();
    if (x - j).abs() > 1e-6 || j < 0.0 || j as usize >= len {
        return Err(Fault::validation(format!("forcing has no slice at t = {t}")));
    }
    Ok(j as usize)
}

fn field_slice(f: &Field, t: f64) -> Result<&[f64]> {
    if f.domain != Domain::SpaceTime {
        return Err(Fault::validation("time-dependent forcing must be a space-time field"));
    }
    Ok(f.slice(slice_index(f.spec.t_min, f.spec.dt, f.n_slices(), t)?))
}

/// Precomputed Φ^▷ window with its forcing corrections.
#[derive(Clone, Debug)]
pub struct StationaryShift {
    /// Φ^▷ = (G − G_1) ∗ f^▷.
    pub field: Field,
    /// f^▷ = Σ_{i ≤ i_▷} λ^i f^i.
    pub f_sharp: Field,
    /// (χ'G) ∗ f^▷.
    pub correction: Field,
    /// First time at which all three carry full history.
    pub valid_from: f64,
}

/// Builds Φ^▷ from the pathwise expansion to order `order`.
pub fn build_stationary_shift(coefs: &ForceCoefficients, noise: &Field, order: usize) -> Result<StationaryShift> {
    let spec = noise.spec;
    let need = 2.0 * (order as f64 + 1.0);
    if spec.t_max - spec.t_min <= need {
        return Err(Fault::validation(format!(
            "window too short for kernel support: need more than {need} before the solve window"
        )));
    }
    let exp = expand_pathwise(coefs, noise, order)?;
    let f_sharp = exp.f_sum(coefs.lambda, order);
    let field = exp.psi_sum(coefs.lambda, order);
    let rate = SpectralKernel::new(spec, KernelKind::CutoffRate { mu: 1.0 })?;
    let correction = convolve(&rate, &f_sharp)?;
    Ok(StationaryShift { field, f_sharp, correction, valid_from: spec.t_min + need })
}

/// φ₁(z) = (e^z − 1)/z and φ₂(z) = (e^z − 1 − z)/z².
fn phi_functions(z: f64) -> (f64, f64) {
    if z.abs() < 1e-4 {
        (1.0 + z / 2.0 + z * z / 6.0, 0.5 + z / 6.0 + z * z / 24.0)
    } else {
        let e = z.exp();
        ((e - 1.0) / z, (e - 1.0 - z) / (z * z))
    }
}

struct Stepper<'a> {
    spec: LatticeSpec,
    fft: FftNd,
    cg_weights: Vec<f64>,
    e: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
    mask: Vec<f64>,
    coefs: &'a ForceCoefficients,
    cfg: SolveConfig,
    noise: Noise<'a>,
    shift: Option<&'a StationaryShift>,
}

impl<'a> Stepper<'a> {
    fn new(
        spec: LatticeSpec,
        coefs: &'a ForceCoefficients,
        cfg: SolveConfig,
        noise: Noise<'a>,
        shift: Option<&'a StationaryShift>,
    ) -> Self {
        let knorm = spec.freq_norms();
        let h = cfg.dt;
        let mut e = Vec::with_capacity(knorm.len());
        let mut p1 = Vec::with_capacity(knorm.len());
        let mut p2 = Vec::with_capacity(knorm.len());
        for &k in &knorm {
            let z = -h * k.powf(spec.sigma);
            let (a, b) = phi_functions(z);
            e.push(z.exp());
            p1.push(a * h);
            p2.push(b * h);
        }
        let cut = spec.n as i64 / 3;
        let mask = (0..spec.n_space())
            .map(|i| {
                let k = spec.freq(i);
                if cfg.dealias && k[..spec.d].iter().any(|v| v.abs() > cut) {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        let cg_weights = c_gamma_weights(cfg.gamma, &knorm);
        Stepper { spec, fft: spec.fft(), cg_weights, e, p1, p2, mask, coefs, cfg, noise, shift }
    }

    /// Spectral force at time t for state û.
    fn force(&self, u: &[C64], t: f64) -> Result<Vec<C64>> {
        let mut out = if self.coefs.terms.is_empty() {
            vec![C64::new(0.0, 0.0); u.len()]
        } else {
            let mut phys = inverse_slice(&self.fft, u);
            if let Some(s) = self.shift {
                phys.iter_mut().zip(field_slice(&s.field, t)?).for_each(|(a, b)| *a += b);
            }
            let f = force_slice(self.coefs, &self.spec, &phys);
            let mut c = forward_slice(&self.fft, &f);
            c.iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= m);
            c
        };
        match self.noise {
            Noise::Zero => {}
            Noise::Field(f) => {
                let c = forward_slice(&self.fft, field_slice(f, t)?);
                out.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            }
            Noise::Spectral { t0, dt, slices } => {
                let c = &slices[slice_index(t0, dt, slices.len(), t)?];
                out.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            }
        }
        if let Some(s) = self.shift {
            let mut extra = field_slice(&s.correction, t)?.to_vec();
            extra.iter_mut().zip(field_slice(&s.f_sharp, t)?).for_each(|(a, b)| *a -= b);
            let c = forward_slice(&self.fft, &extra);
            out.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        }
        Ok(out)
    }

    fn step(&self, u: &[C64], t: f64) -> Result<Vec<C64>> {
        let n0 = self.force(u, t)?;
        let a: Vec<C64> = (0..u.len()).map(|s| u[s] * self.e[s] + n0[s] * self.p1[s]).collect();
        let next = match self.cfg.scheme {
            Scheme::Etd1 => a,
            Scheme::EtdRk2 => {
                let n1 = self.force(&a, t + self.cfg.dt)?;
                (0..u.len()).map(|s| a[s] + (n1[s] - n0[s]) * self.p2[s]).collect()
            }
        };
        if next.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Fault::numerical(format!("numerical overflow before threshold at t = {}", t + self.cfg.dt)));
        }
        Ok(next)
    }

    fn norm(&self, u: &[C64]) -> f64 {
        c_gamma_spectral(&self.fft, u, &self.cg_weights)
    }
}

fn run(
    stepper: &Stepper,
    phi0: &Field,
    t0: f64,
    windows: &[usize],
    keep: bool,
) -> Result<(SolveResult, Vec<C64>)> {
    let spec = stepper.spec;
    let dt = stepper.cfg.dt;
    let mut u = forward_slice(&stepper.fft, &phi0.data);
    let mut times = vec![t0];
    let mut norms = vec![stepper.norm(&u)];
    let mut traj: Vec<f64> = if keep { phi0.data.clone() } else { Vec::new() };
    let mut status = Status::Completed;
    let mut t = t0;
    let mut used = 0;
    if norms[0] >= stepper.cfg.radius {
        status = Status::BlewUp;
    }
    'outer: for &steps in windows {
        if status == Status::BlewUp {
            break;
        }
        used += 1;
        // re-anchor: the window starts from the current state
        let mut w = u.clone();
        let start = t;
        for s in 0..steps {
            let tn = start + s as f64 * dt;
            w = stepper.step(&w, tn)?;
            t = start + (s + 1) as f64 * dt;
            times.push(t);
            let nrm = stepper.norm(&w);
            norms.push(nrm);
            if keep {
                traj.extend(inverse_slice(&stepper.fft, &w));
            }
            if nrm >= stepper.cfg.radius {
                status = Status::BlewUp;
                u = w;
                break 'outer;
            }
        }
        u = w;
    }
    let breve_t = *times.last().unwrap_or(&t0);
    let final_state = Field::from_data(
        LatticeSpec { t_min: breve_t, t_max: breve_t, ..spec },
        Domain::SpaceOnly,
        inverse_slice(&stepper.fft, &u),
    )?;
    let trajectory = if keep {
        let tspec = LatticeSpec { t_min: t0, t_max: breve_t, dt, ..spec };
        Some(Field::from_data(tspec, Domain::SpaceTime, traj)?)
    } else {
        None
    };
    Ok((
        SolveResult { times, norms, status, breve_t, final_state, trajectory, remainder: None, windows: used },
        u,
    ))
}

fn check_initial(phi: &Field, noise: &Noise) -> Result<()> {
    if phi.domain != Domain::SpaceOnly {
        return Err(Fault::validation("initial data must be a space-only field"));
    }
    phi.check_finite()?;
    if let Noise::Field(f) = noise {
        if !f.spec.same_grid(&phi.spec) {
            return Err(Fault::validation("noise and initial data live on different lattices"));
        }
    }
    if let Noise::Spectral { slices, .. } = noise {
        if slices.first().is_some_and(|s| s.len() != phi.spec.n_space()) {
            return Err(Fault::validation("noise spectra and initial data live on different lattices"));
        }
    }
    Ok(())
}

/// Linear response at the end of a noise history: zero data at the first
/// slice of `slices`, integrated with the configured exponential scheme
/// and no force terms, one step per slice gap. With a history of length
/// ≥ 2 this is the stationary part Φ^▷(0) of a sharp-cutoff window.
pub fn linear_response(spec: LatticeSpec, cfg: &SolveConfig, slices: &[Vec<C64>]) -> Result<Field> {
    cfg.validate()?;
    let space = LatticeSpec { t_min: 0.0, t_max: 0.0, ..spec };
    if slices.iter().any(|s| s.len() != space.n_space()) {
        return Err(Fault::validation("noise spectra and lattice disagree"));
    }
    let none = ForceCoefficients::explicit(0.0, 0.0, Vec::new());
    let noise = Noise::Spectral { t0: 0.0, dt: cfg.dt, slices };
    let stepper = Stepper::new(space, &none, *cfg, noise, None);
    let mut u = vec![C64::new(0.0, 0.0); space.n_space()];
    for j in 0..slices.len().saturating_sub(1) {
        u = stepper.step(&u, j as f64 * cfg.dt)?;
    }
    Field::from_data(space, Domain::SpaceOnly, inverse_slice(&stepper.fft, &u))
}

/// `linear_response` over a mollified history, folded into one weight per
/// (white-noise slice, mode). Building it costs about one history solve;
/// afterwards each realization is a single weighted sum.
#[derive(Clone, Debug)]
pub struct LinearStart {
    space: LatticeSpec,
    first: i64,
    weights: Vec<Vec<f64>>,
}

impl LinearStart {
    pub fn new(moll: &Mollification, cfg: &SolveConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = *moll.spec();
        let space = LatticeSpec { t_min: 0.0, t_max: 0.0, ..spec };
        let (lo, hi) = moll.white_range()?;
        let taps = moll.taps();
        let half = taps.len() / 2;
        let last = spec.n_time() - 1;
        let knorm = space.freq_norms();
        let mut weights = vec![vec![0.0; space.n_space()]; (hi - lo + 1) as usize];
        let mut a = vec![0.0; last + 1];
        for (s, &k) in knorm.iter().enumerate() {
            let z = -cfg.dt * k.powf(spec.sigma);
            let (f1, f2) = phi_functions(z);
            let (e, p1, p2) = (z.exp(), f1 * cfg.dt, f2 * cfg.dt);
            // weight of slice j in the final state
            let mut decay = 1.0;
            for j in (0..=last).rev() {
                a[j] = match (cfg.scheme, j == last) {
                    (_, true) if last == 0 => 0.0,
                    (Scheme::EtdRk2, true) => p2,
                    (Scheme::EtdRk2, false) => {
                        let v = decay * (p1 - p2) + decay * e * p2;
                        decay *= e;
                        v
                    }
                    (Scheme::Etd1, true) => 0.0,
                    (Scheme::Etd1, false) => {
                        let v = decay * p1;
                        decay *= e;
                        v
                    }
                };
            }
            if cfg.scheme == Scheme::EtdRk2 && last > 0 {
                // slice 0 has no step ending on it
                a[0] -= e.powi(last as i32) * p2;
            }
            let m = moll.multiplier()[s];
            for (ti, w) in taps.iter().enumerate() {
                // slice j reads white index lo + j + 2·half − ti
                for (j, aj) in a.iter().enumerate() {
                    weights[j + 2 * half - ti][s] += m * w * aj;
                }
            }
        }
        Ok(LinearStart { space, first: lo, weights })
    }

    pub fn white_range(&self) -> (i64, i64) {
        (self.first, self.first + self.weights.len() as i64 - 1)
    }

    /// Φ^▷(0) for one white-noise realization.
    pub fn state(&self, white: &WhiteNoise) -> Result<Field> {
        let (lo, hi) = self.white_range();
        if lo < white.first || hi > white.first + white.slices.len() as i64 - 1 {
            return Err(Fault::validation("white noise does not cover the history window"));
        }
        let mut u = vec![C64::new(0.0, 0.0); self.space.n_space()];
        for (off, w) in self.weights.iter().enumerate() {
            let src = &white.slices[(lo + off as i64 - white.first) as usize];
            for ((acc, x), g) in u.iter_mut().zip(src).zip(w) {
                *acc += x * g;
            }
        }
        Field::from_data(self.space, Domain::SpaceOnly, inverse_slice(&self.space.fft(), &u))
    }
}

/// Solves from `t0` with data φ over the configured horizon in a single
/// window.
pub fn solve_mild(coefs: &ForceCoefficients, noise: Noise, phi: &Field, t0: f64, cfg: &SolveConfig) -> Result<SolveResult> {
    cfg.validate()?;
    check_initial(phi, &noise)?;
    let steps = cfg.steps(cfg.horizon)?;
    let stepper = Stepper::new(phi.spec, coefs, *cfg, noise, None);
    Ok(run(&stepper, phi, t0, &[steps], cfg.keep_trajectory)?.0)
}

/// Solves for Φ̆ on windows of length T_loc, starting from φ^△ at `t0`.
/// The returned trajectory and final state are Φ = Φ^▷ + Φ̆; norms and
/// the stop rule refer to Φ̆.
pub fn solve_with_patching(
    coefs: &ForceCoefficients,
    noise: Noise,
    shift: &StationaryShift,
    phi_triangle: &Field,
    t0: f64,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    check_initial(phi_triangle, &noise)?;
    if t0 < shift.valid_from - 1e-9 {
        return Err(Fault::validation(format!(
            "solve starts at {t0} but the stationary shift is only valid from {}",
            shift.valid_from
        )));
    }
    let total = cfg.steps(cfg.horizon)?;
    let per = cfg.steps(cfg.t_loc)?.max(1);
    let mut windows = vec![per; total / per];
    if total % per != 0 {
        windows.push(total % per);
    }
    let stepper = Stepper::new(phi_triangle.spec, coefs, *cfg, noise, Some(shift));
    let (mut res, _) = run(&stepper, phi_triangle, t0, &windows, cfg.keep_trajectory)?;
    let remainder = res.final_state.clone();
    let mut total_state = res.final_state.clone();
    total_state.data.iter_mut().zip(field_slice(&shift.field, res.breve_t)?).for_each(|(a, b)| *a += b);
    res.final_state = total_state;
    if let Some(tr) = res.trajectory.as_mut() {
        for (j, &t) in res.times.iter().enumerate() {
            let add = field_slice(&shift.field, t)?.to_vec();
            tr.slice_mut(j).iter_mut().zip(&add).for_each(|(a, b)| *a += b);
        }
    }
    res.remainder = Some(remainder);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefKey;

    fn cubic(c: f64) -> ForceCoefficients {
        ForceCoefficients::explicit(0.1, 1.0, vec![(CoefKey::plain(1, 3), c)])
    }

    #[test]
    fn zero_stays_zero() {
        let spec = LatticeSpec::space(1, 32, 0.5).unwrap();
        let cfg = SolveConfig { horizon: 0.1, dt: 0.01, ..SolveConfig::new(0.5) };
        let r = solve_mild(&cubic(-1.0), Noise::Zero, &Field::zeros(spec, Domain::SpaceOnly), 0.0, &cfg).unwrap();
        assert_eq!(r.final_state.max_abs(), 0.0);
        assert_eq!(r.status, Status::Completed);
    }

    #[test]
    fn linear_flow_is_exact() {
        let spec = LatticeSpec::space(1, 32, 0.5).unwrap();
        let phi = Field::space_fn(spec, |x| x[0].cos() + 0.3 * (4.0 * x[0]).sin());
        let cfg = SolveConfig { horizon: 0.5, dt: 0.01, ..SolveConfig::new(0.5) };
        let none = ForceCoefficients::explicit(0.1, 1.0, Vec::new());
        let r = solve_mild(&none, Noise::Zero, &phi, 0.0, &cfg).unwrap();
        let expect = Field::space_fn(spec, |x| (-0.5f64).exp() * x[0].cos() + 0.3 * (-0.5 * 2.0f64).exp() * (4.0 * x[0]).sin());
        let err = r.final_state.data.iter().zip(&expect.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn folded_start_matches_history_solve() {
        use crate::noise::{white_noise, Mollifier, NoiseKind, NoiseModel, Profile};
        let spec = LatticeSpec::new(1, 128, 0.01, -2.0, 0.0, 0.5).unwrap();
        let kind = NoiseKind::MollifiedWhite(Mollifier { time: Profile::Bump, space: Profile::CosPower(4) });
        let model = NoiseModel::new(kind, 0.5, 3).unwrap();
        let moll = Mollification::new(&model, &spec).unwrap();
        let (lo, hi) = moll.white_range().unwrap();
        let white = white_noise(3, 1, &spec, lo, hi);
        for scheme in [Scheme::Etd1, Scheme::EtdRk2] {
            let cfg = SolveConfig { scheme, dt: 0.01, ..SolveConfig::new(0.5) };
            let direct = linear_response(spec, &cfg, &moll.apply(&white).unwrap()).unwrap();
            let folded = LinearStart::new(&moll, &cfg).unwrap().state(&white).unwrap();
            let scale = direct.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = direct.data.iter().zip(&folded.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(scale > 0.1 && err < 1e-10 * scale, "{scheme:?}: {err} vs {scale}");
        }
    }

    #[test]
    fn ode_blow_up_time() {
        let spec = LatticeSpec::space(1, 8, 0.5).unwrap();
        let phi = Field::space_fn(spec, |_| 1.0);
        let cfg = SolveConfig { horizon: 1.0, dt: 1e-4, radius: 10.0, ..SolveConfig::new(0.5) };
        let r = solve_mild(&cubic(1.0), Noise::Zero, &phi, 0.0, &cfg).unwrap();
        assert_eq!(r.status, Status::BlewUp);
        assert!((r.breve_t - 0.495).abs() <= 2e-4, "{}", r.breve_t);
        let r2 = solve_mild(&cubic(1.0), Noise::Zero, &phi, 0.0, &SolveConfig { radius: 20.0, ..cfg }).unwrap();
        assert!(r2.breve_t >= r.breve_t);
    }

    #[test]
    fn windows_agree_with_single_run() {
        let spec = LatticeSpec::space(1, 32, 1.0).unwrap();
        let phi = Field::space_fn(spec, |x| (2.0 * x[0]).sin());
        let lin = ForceCoefficients::explicit(0.1, 1.0, vec![(CoefKey::plain(1, 1), -0.3)]);
        let cfg = SolveConfig { horizon: 0.5, dt: 0.01, ..SolveConfig::new(1.0) };
        let one = solve_mild(&lin, Noise::Zero, &phi, 0.0, &cfg).unwrap();
        assert_eq!(one.windows, 1);
        let tspec = LatticeSpec::new(1, 32, 0.01, -4.0, 0.6, 1.0).unwrap();
        let noise = Field::zeros(tspec, Domain::SpaceTime);
        let shift = build_stationary_shift(&lin, &noise, 0).unwrap();
        let two = solve_with_patching(&lin, Noise::Field(&noise), &shift, &phi, 0.0, &SolveConfig { t_loc: 0.25, ..cfg })
            .unwrap();
        assert_eq!(two.windows, 2);
        let err = one.final_state.data.iter().zip(&two.final_state.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8);
    }

    #[test]
    fn shifted_solve_matches_direct() {
        let noise_at = |t: f64, x: &[f64]| 3.0 * (2.0 * t).sin() * x[0].cos() + (t + 2.0 * x[0]).cos();
        let coefs = ForceCoefficients::explicit(0.2, 1.0, vec![(CoefKey::plain(1, 1), 0.5), (CoefKey::plain(1, 3), -1.0)]);
        let phi = Field::space_fn(LatticeSpec::space(1, 64, 1.0).unwrap(), |x| 0.5 * x[0].sin());
        let cfg = SolveConfig { horizon: 0.5, dt: 0.0025, ..SolveConfig::new(1.0) };
        let short = Field::space_time_fn(LatticeSpec::new(1, 64, 0.0025, -1.5, 0.5, 1.0).unwrap(), noise_at);
        assert!(build_stationary_shift(&coefs, &short, 0).is_err());
        let noise = Field::space_time_fn(LatticeSpec::new(1, 64, 0.0025, -2.0, 0.5, 1.0).unwrap(), noise_at);
        let shift = build_stationary_shift(&coefs, &noise, 0).unwrap();
        let direct = solve_mild(&coefs, Noise::Field(&noise), &phi, 0.0, &cfg).unwrap();
        let mut tri = phi.clone();
        tri.data.iter_mut().zip(field_slice(&shift.field, 0.0).unwrap()).for_each(|(a, b)| *a -= b);
        let shifted = solve_with_patching(&coefs, Noise::Field(&noise), &shift, &tri, 0.0, &cfg).unwrap();
        let scale = direct.final_state.max_abs();
        let err = direct.final_state.data.iter().zip(&shifted.final_state.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err / scale < 1e-4, "{err} {scale}");
    }
}
