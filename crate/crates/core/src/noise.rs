//! Microscopic noise families and their macroscopic rescaling
//! Ξ_ν(t, x) = [ν]^{−dim Ξ} Ξ_0(t/ν, x/[ν]), plus empirical cumulants.
//!
//! Mollified white noise is M ∗ W with a product mollifier M. Because W
//! is scale invariant in law, the macroscopic field is S_ν M ∗ W, which is
//! what gets sampled: discrete white noise on the lattice, a temporal tap
//! filter, then a spectral spatial filter.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64 as C64;
use num_traits::Float;
use rand_distr::{Distribution, Poisson};

use crate::error::{Fault, Result};
use crate::lattice::{forward_slice, inverse_slice, Domain, Field, LatticeSpec};
use crate::quad;
use crate::rng;

/// Even bump shapes on [−1, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    /// cos(πu/2)^p.
    CosPower(u32),
    /// exp(−1/(1 − u²)).
    Bump,
}

impl Profile {
    pub fn raw(&self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        match *self {
            Profile::CosPower(p) => (core::f64::consts::FRAC_PI_2 * u).cos().powi(p as i32),
            Profile::Bump => (-1.0 / (1.0 - u * u)).exp(),
        }
    }

    fn moment_raw(&self, power: i32) -> f64 {
        let (x, w) = quad::composite(-1.0, 1.0, 16, 16);
        x.iter().zip(&w).map(|(u, w)| w * self.raw(*u).powi(power)).sum()
    }

    /// Unit-mass profile with half-width `r`.
    pub fn density(&self, x: f64, r: f64) -> f64 {
        self.raw(x / r) / (r * self.moment_raw(1))
    }

    /// ∫ m_r(x) e^{−iξx} dx for the unit-mass profile of half-width `r`.
    pub fn fourier(&self, xi: f64, r: f64) -> f64 {
        let z = (xi * r).abs();
        let panels = 16usize.max((z / 2.0).ceil() as usize);
        let (x, w) = quad::composite(-1.0, 1.0, panels, 16);
        let s: f64 = x.iter().zip(&w).map(|(u, w)| w * self.raw(*u) * (z * u).cos()).sum();
        s / self.moment_raw(1)
    }

    /// ∫ m_r(x)^p dx.
    pub fn power_integral(&self, p: i32, r: f64) -> f64 {
        self.moment_raw(p) / (self.moment_raw(1).powi(p) * r.powi(p - 1))
    }
}

/// Product mollifier on time × space with a common half-width chosen so
/// the support box fits in the ball of radius 1/2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mollifier {
    pub time: Profile,
    pub space: Profile,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    MollifiedWhite(Mollifier),
    /// Ξ_0(x) = Σ_j M(s_j, x − y_j) over a Poisson process of marks s_j
    /// and points y_j on ℝ × 𝕄, with M(s, z) = c·q(s)·m(z) and ∫q = 0.
    PoissonShot { mollifier: Mollifier, mark: Profile, intensity: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub nu: f64,
    pub seed: u64,
}

/// Parabolic dimension of the noise, (d + σ)/2.
pub fn dim_xi(d: usize, sigma: f64) -> f64 {
    (d as f64 + sigma) / 2.0
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, nu: f64, seed: u64) -> Result<Self> {
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Fault::validation(format!("nu = {nu} outside (0, 1]")));
        }
        if let NoiseKind::PoissonShot { intensity, .. } = kind {
            if !(intensity > 0.0) {
                return Err(Fault::validation("shot-noise intensity must be positive"));
            }
        }
        Ok(NoiseModel { kind, nu, seed })
    }

    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        NoiseModel::new(self.kind, nu, self.seed)
    }

    pub fn mollifier(&self) -> Mollifier {
        match self.kind {
            NoiseKind::MollifiedWhite(m) => m,
            NoiseKind::PoissonShot { mollifier, .. } => mollifier,
        }
    }

    /// Microscopic half-width of each factor of the product support.
    pub fn half_width(&self, d: usize) -> f64 {
        let dims = match self.kind {
            NoiseKind::MollifiedWhite(_) => d + 1,
            NoiseKind::PoissonShot { .. } => d + 2,
        };
        0.5 / (dims as f64).sqrt()
    }

    pub fn check_resolution(&self, spec: &LatticeSpec) -> Result<()> {
        let s = spec.scale(self.nu);
        if spec.dx() > s / 4.0 || spec.dt > self.nu / 4.0 {
            let need_n = (8.0 * core::f64::consts::PI / s).ceil();
            return Err(Fault::validation(format!(
                "lattice does not resolve nu = {}: need dx <= {:.3e} (n >= {need_n}) and dt <= {:.3e}",
                self.nu,
                s / 4.0,
                self.nu / 4.0
            )));
        }
        Ok(())
    }

    /// Temporal taps: mass of m_ν on each cell [(j − ½)dt, (j + ½)dt].
    pub fn time_taps(&self, spec: &LatticeSpec) -> Vec<f64> {
        let r = self.half_width(spec.d) * self.nu;
        let h = spec.dt;
        let j = (r / h + 0.5).ceil() as i64;
        let prof = self.mollifier().time;
        // mass of each time cell, so the taps sum to 1 on any grid
        (-j..=j)
            .map(|i| {
                let a = ((i as f64 - 0.5) * h).max(-r);
                let b = ((i as f64 + 0.5) * h).min(r);
                if b <= a {
                    return 0.0;
                }
                let (x, w) = quad::composite(a, b, 4, 16);
                x.iter().zip(&w).map(|(t, w)| w * prof.density(*t, r)).sum()
            })
            .collect()
    }

    /// Spatial multiplier M̂(ν-scaled) per spectral index.
    pub fn spatial_multiplier(&self, spec: &LatticeSpec) -> Vec<f64> {
        let r = self.half_width(spec.d);
        let s = spec.scale(self.nu);
        let prof = self.mollifier().space;
        let per_axis: Vec<f64> = (0..spec.n).map(|i| prof.fourier(spec.freq_1d(i) as f64 * s, r)).collect();
        (0..spec.n_space())
            .map(|idx| {
                let mut rem = idx;
                let mut v = 1.0;
                for _ in 0..spec.d {
                    v *= per_axis[rem % spec.n];
                    rem /= spec.n;
                }
                v
            })
            .collect()
    }

    /// Exact lattice covariance of the mollified white noise between
    /// points separated by `lag_t` slices and spatial offset `lag_x`
    /// (grid steps).
    pub fn exact_covariance(&self, spec: &LatticeSpec, lag_t: i64, lag_x: [i64; 3]) -> Result<f64> {
        if !matches!(self.kind, NoiseKind::MollifiedWhite(_)) {
            return Err(Fault::validation("exact covariance only for mollified white noise"));
        }
        let taps = self.time_taps(spec);
        let l = lag_t.unsigned_abs() as usize;
        let time: f64 = (0..taps.len().saturating_sub(l)).map(|j| taps[j] * taps[j + l]).sum::<f64>() / spec.dt;
        let m = self.spatial_multiplier(spec);
        let mut space = 0.0;
        for (idx, mk) in m.iter().enumerate() {
            let k = spec.freq(idx);
            let ph: f64 = (0..spec.d).map(|a| (k[a] * lag_x[a]) as f64 * spec.dx()).sum();
            space += mk * mk * ph.cos();
        }
        Ok(time * space / (2.0 * core::f64::consts::PI).powi(spec.d as i32))
    }

    /// Microscopic autocorrelation ∫ m_t(s) m_t(s + τ) ds of the time
    /// factor. Both families share it, since the shot amplitude is
    /// normalized against the mark.
    pub fn time_autocorrelation(&self, tau: f64, d: usize) -> f64 {
        let r = self.half_width(d);
        let lo = (-r).max(-r - tau);
        let hi = r.min(r - tau);
        if hi <= lo {
            return 0.0;
        }
        let prof = self.mollifier().time;
        let (x, w) = quad::composite(lo, hi, 8, 16);
        x.iter().zip(&w).map(|(s, w)| w * prof.density(*s, r) * prof.density(s + tau, r)).sum()
    }

    /// Microscopic support radius of the time autocorrelation.
    pub fn time_correlation_radius(&self, d: usize) -> f64 {
        2.0 * self.half_width(d)
    }

    /// One-axis Fourier factor of the spatial mollifier at microscopic
    /// frequency ξ.
    pub fn space_fourier(&self, xi: f64, d: usize) -> f64 {
        self.mollifier().space.fourier(xi, self.half_width(d))
    }

    /// Third cumulant of the macroscopic shot noise at coincident points.
    pub fn shot_third_cumulant(&self, spec: &LatticeSpec) -> Result<f64> {
        let NoiseKind::PoissonShot { mollifier, mark, intensity } = self.kind else {
            return Err(Fault::validation("third cumulant oracle only for shot noise"));
        };
        let r = self.half_width(spec.d);
        let c = shot_amplitude(mark, r, intensity);
        let q3 = mark_integral(mark, r, 3);
        let m3 = mollifier.time.power_integral(3, r) * mollifier.space.power_integral(3, r).powi(spec.d as i32);
        let dim = dim_xi(spec.d, spec.sigma);
        Ok(spec.scale(self.nu).powf(-3.0 * dim) * intensity * c.powi(3) * q3 * m3)
    }
}

/// Mark profile q(s) = m_r(s) − 2 m_r(2s): mean zero, not odd.
fn mark_value(mark: Profile, s: f64, r: f64) -> f64 {
    mark.density(s, r) - 2.0 * mark.density(2.0 * s, r)
}

fn mark_integral(mark: Profile, r: f64, p: i32) -> f64 {
    let (x, w) = quad::composite(-r, r, 16, 16);
    x.iter().zip(&w).map(|(s, w)| w * mark_value(mark, *s, r).powi(p)).sum()
}

/// Amplitude c making intensity · ∫ds (∫M(s, ·))² = 1.
fn shot_amplitude(mark: Profile, r: f64, intensity: f64) -> f64 {
    1.0 / (intensity * mark_integral(mark, r, 2)).sqrt()
}

/// White-noise slice spectra addressed by absolute time index
/// `round(t/dt)`, so every window and every ν sees the same draws.
#[derive(Clone, Debug)]
pub struct WhiteNoise {
    pub first: i64,
    pub slices: Vec<Vec<C64>>,
}

pub fn white_noise(seed: u64, sample: u64, spec: &LatticeSpec, first: i64, last: i64) -> WhiteNoise {
    let ns = spec.n_space();
    let fft = spec.fft();
    let sd = 1.0 / (spec.dt * spec.cell_volume()).sqrt();
    let mut buf = vec![0.0; ns];
    let slices = (first..=last)
        .map(|m| {
            let mut r = rng::stream(seed, "white", sample);
            // two 32-bit words per u64, ns u64 per slice
            let offset = (m as i128 + (1i128 << 40)) as u128 * 2 * ns as u128;
            r.set_word_pos(offset);
            rng::fill_normals(&mut r, &mut buf);
            buf.iter_mut().for_each(|v| *v *= sd);
            forward_slice(&fft, &buf)
        })
        .collect();
    WhiteNoise { first, slices }
}

fn absolute_index(spec: &LatticeSpec) -> Result<i64> {
    let m = spec.t_min / spec.dt;
    if (m - m.round()).abs() > 1e-6 {
        return Err(Fault::validation("t_min must be a multiple of dt for coupled noise"));
    }
    Ok(m.round() as i64)
}

/// Time taps and spatial multiplier of one noise model on one lattice.
/// Building it costs a Fourier quadrature per mode, so ensembles keep one
/// per cell and reuse it across samples.
#[derive(Clone, Debug)]
pub struct Mollification {
    spec: LatticeSpec,
    taps: Vec<f64>,
    mult: Vec<f64>,
    active: Vec<usize>,
}

impl Mollification {
    pub fn new(model: &NoiseModel, spec: &LatticeSpec) -> Result<Self> {
        model.check_resolution(spec)?;
        let taps = model.time_taps(spec);
        let mult = model.spatial_multiplier(spec);
        let active = (0..mult.len()).filter(|&i| mult[i].abs() > 1e-300).collect();
        Ok(Mollification { spec: *spec, taps, mult, active })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn multiplier(&self) -> &[f64] {
        &self.mult
    }

    /// White-noise index range the window needs.
    pub fn white_range(&self) -> Result<(i64, i64)> {
        let half = (self.taps.len() / 2) as i64;
        let m0 = absolute_index(&self.spec)?;
        Ok((m0 - half, m0 + self.spec.n_time() as i64 - 1 + half))
    }

    pub fn apply(&self, white: &WhiteNoise) -> Result<Vec<Vec<C64>>> {
        let (lo, hi) = self.white_range()?;
        if lo < white.first || hi > white.first + white.slices.len() as i64 - 1 {
            return Err(Fault::validation("white noise does not cover the mollified window"));
        }
        let half = (self.taps.len() / 2) as i64;
        let m0 = lo + half;
        let ns = self.spec.n_space();
        let out = (0..self.spec.n_time() as i64)
            .map(|j| {
                let mut acc = vec![C64::new(0.0, 0.0); ns];
                for (ti, w) in self.taps.iter().enumerate() {
                    let m = m0 + j - (ti as i64 - half);
                    let src = &white.slices[(m - white.first) as usize];
                    for &s in &self.active {
                        acc[s] += src[s] * *w;
                    }
                }
                for &s in &self.active {
                    acc[s] *= self.mult[s];
                }
                acc
            })
            .collect();
        Ok(out)
    }
}

/// Spectra of Ξ_ν on every slice of `spec`, built from shared white noise.
pub fn mollified_spectra(model: &NoiseModel, spec: &LatticeSpec, white: &WhiteNoise) -> Result<Vec<Vec<C64>>> {
    Mollification::new(model, spec)?.apply(white)
}

/// White-noise index range needed to mollify the window of `spec`.
pub fn white_range(model: &NoiseModel, spec: &LatticeSpec) -> Result<(i64, i64)> {
    let half = (model.time_taps(spec).len() / 2) as i64;
    let m0 = absolute_index(spec)?;
    Ok((m0 - half, m0 + spec.n_time() as i64 - 1 + half))
}

/// One macroscopic noise realization on the window of `spec`, reproducible
/// from (master seed, sample index).
pub fn sample_macroscopic_noise(model: &NoiseModel, spec: &LatticeSpec, sample: u64) -> Result<Field> {
    model.check_resolution(spec)?;
    match model.kind {
        NoiseKind::MollifiedWhite(_) => {
            let (lo, hi) = white_range(model, spec)?;
            let white = white_noise(model.seed, sample, spec, lo, hi);
            let spectra = mollified_spectra(model, spec, &white)?;
            let fft = spec.fft();
            let mut f = Field::zeros(*spec, Domain::SpaceTime);
            for (j, c) in spectra.iter().enumerate() {
                f.slice_mut(j).copy_from_slice(&inverse_slice(&fft, c));
            }
            Ok(f)
        }
        NoiseKind::PoissonShot { mollifier, mark, intensity } => {
            shot_noise(model, spec, sample, mollifier, mark, intensity)
        }
    }
}

fn shot_noise(
    model: &NoiseModel,
    spec: &LatticeSpec,
    sample: u64,
    mollifier: Mollifier,
    mark: Profile,
    intensity: f64,
) -> Result<Field> {
    let d = spec.d;
    let nu = model.nu;
    let s_nu = spec.scale(nu);
    let r = model.half_width(d);
    let amp = shot_amplitude(mark, r, intensity) * s_nu.powf(-dim_xi(d, spec.sigma));
    let side = 2.0 * core::f64::consts::PI / s_nu; // microscopic torus side
    let t_lo = spec.t_min / nu - r;
    let t_hi = spec.t_max / nu + r;
    let cells_x = side.ceil() as i64;
    // marks live in [−r, r]; expected points per unit cell with such a mark
    let pois = Poisson::new(intensity * 2.0 * r).map_err(|_| Fault::validation("bad Poisson rate"))?;
    let mut f = Field::zeros(*spec, Domain::SpaceTime);
    let ns = spec.n_space();
    let nt = spec.n_time() as i64;
    let reach_t = (r * nu / spec.dt).ceil() as i64 + 1;
    let reach_x = (r * s_nu / spec.dx()).ceil() as i64 + 1;
    let mut cell = [0i64; 3];
    // unit cells in microscopic (time, space) coordinates, each with its
    // own substream so a cell's points do not depend on the window
    for ct in t_lo.floor() as i64..=t_hi.floor() as i64 {
        for cx in 0..cells_x.pow(d as u32) {
            let mut rem = cx;
            for c in cell.iter_mut().take(d) {
                *c = rem % cells_x;
                rem /= cells_x;
            }
            let id = rng::mix(&[sample, ct as u64, cell[0] as u64, cell[1] as u64, cell[2] as u64]);
            let mut rg = rng::stream(model.seed, "shot", id);
            let count = pois.sample(&mut rg) as usize;
            for _ in 0..count {
                let q = mark_value(mark, (2.0 * rng::uniform_open(&mut rg) - 1.0) * r, r);
                let yt = ct as f64 + rng::uniform_open(&mut rg);
                let mut yx = [0.0f64; 3];
                let mut inside = true;
                for a in 0..d {
                    yx[a] = cell[a] as f64 + rng::uniform_open(&mut rg);
                    inside &= yx[a] < side;
                }
                if !inside {
                    continue;
                }
                let jc = ((yt * nu - spec.t_min) / spec.dt).round() as i64;
                let xc: Vec<f64> = (0..d).map(|a| yx[a] * s_nu).collect();
                for jt in (jc - reach_t).max(0)..=(jc + reach_t).min(nt - 1) {
                    let mt = mollifier.time.density(spec.time(jt as usize) / nu - yt, r);
                    if mt == 0.0 {
                        continue;
                    }
                    let slice = &mut f.data[jt as usize * ns..(jt as usize + 1) * ns];
                    add_spatial(slice, spec, &xc, reach_x, s_nu, amp * q * mt, |z| mollifier.space.density(z, r));
                }
            }
        }
    }
    Ok(f)
}

/// Adds `scale · Π_a m((x_a − c_a)/[ν])` around centre `c` on the torus.
fn add_spatial(slice: &mut [f64], spec: &LatticeSpec, c: &[f64], reach: i64, s_nu: f64, scale: f64, m: impl Fn(f64) -> f64) {
    let d = spec.d;
    let n = spec.n as i64;
    let base: Vec<i64> = c.iter().map(|x| (x / spec.dx()).round() as i64).collect();
    let width = 2 * reach + 1;
    let factors: Vec<Vec<f64>> = (0..d)
        .map(|a| (0..width).map(|o| m(((base[a] + o - reach) as f64 * spec.dx() - c[a]) / s_nu)).collect())
        .collect();
    let mut off = vec![0i64; d];
    for o in 0..width.pow(d as u32) {
        let mut rem = o;
        for v in off.iter_mut().rev() {
            *v = rem % width;
            rem /= width;
        }
        let mut idx = 0usize;
        let mut val = scale;
        for a in 0..d {
            val *= factors[a][off[a] as usize];
            idx = idx * spec.n + (base[a] + off[a] - reach).rem_euclid(n) as usize;
        }
        slice[idx] += val;
    }
}

/// Offset of a comparison point relative to the base point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lag {
    pub t: i64,
    pub x: [i64; 3],
}

impl Lag {
    pub const ZERO: Lag = Lag { t: 0, x: [0; 3] };
}

#[derive(Clone, Debug, PartialEq)]
pub struct CumulantEstimate {
    pub order: usize,
    pub lags: Vec<Vec<Lag>>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub samples: usize,
}

/// Joint cumulant of (Ξ(z), Ξ(z + ℓ_1), …, Ξ(z + ℓ_{n−1})) for each lag
/// tuple, averaged over base points z by stationarity. `lags[i]` must have
/// `order − 1` entries.
pub fn estimate_cumulants(fields: &[Field], order: usize, lags: &[Vec<Lag>]) -> Result<CumulantEstimate> {
    if !(1..=4).contains(&order) {
        return Err(Fault::validation("cumulant order must be 1..=4"));
    }
    if fields.len() < 2 {
        return Err(Fault::validation("need at least two samples for cumulant estimates"));
    }
    let mut values = Vec::new();
    let mut errors = Vec::new();
    for tuple in lags {
        if tuple.len() + 1 != order {
            return Err(Fault::validation(String::from("lag tuple length must be order - 1")));
        }
        let mut offsets = vec![Lag::ZERO];
        offsets.extend_from_slice(tuple);
        let masks = 1usize << order;
        let mut pooled = vec![0.0; masks];
        let mut pooled_n = 0.0;
        let mut per_sample = Vec::with_capacity(fields.len());
        for f in fields {
            let (sums, count) = subset_sums(f, &offsets);
            for m in 0..masks {
                pooled[m] += sums[m];
            }
            pooled_n += count;
            let means: Vec<f64> = sums.iter().map(|s| s / count).collect();
            per_sample.push(joint_cumulant(&means, order, count));
        }
        let means: Vec<f64> = pooled.iter().map(|s| s / pooled_n).collect();
        values.push(joint_cumulant(&means, order, pooled_n));
        let k = per_sample.len() as f64;
        let mean = per_sample.iter().sum::<f64>() / k;
        let var = per_sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
        errors.push((var / k).sqrt());
    }
    Ok(CumulantEstimate { order, lags: lags.to_vec(), values, std_errors: errors, samples: fields.len() })
}

/// Sums over base points of Π_{q∈S} X_q for every subset S.
fn subset_sums(f: &Field, offsets: &[Lag]) -> (Vec<f64>, f64) {
    let spec = f.spec;
    let n = spec.n as i64;
    let nt = f.n_slices() as i64;
    let order = offsets.len();
    let tmin = offsets.iter().map(|o| o.t).min().unwrap_or(0);
    let tmax = offsets.iter().map(|o| o.t).max().unwrap_or(0);
    let mut sums = vec![0.0; 1 << order];
    let mut count = 0.0;
    let mut vals = [0.0f64; 4];
    for j in (-tmin).max(0)..(nt - tmax.max(0)) {
        for i in 0..spec.n_space() {
            let mut rem = i;
            let mut pos = [0i64; 3];
            for a in (0..spec.d).rev() {
                pos[a] = (rem % spec.n) as i64;
                rem /= spec.n;
            }
            for (q, o) in offsets.iter().enumerate() {
                let mut idx = 0usize;
                for a in 0..spec.d {
                    idx = idx * spec.n + (pos[a] + o.x[a]).rem_euclid(n) as usize;
                }
                vals[q] = f.data[(j + o.t) as usize * spec.n_space() + idx];
            }
            for (m, s) in sums.iter_mut().enumerate() {
                let mut p = 1.0;
                for (q, v) in vals.iter().enumerate().take(order) {
                    if m & (1 << q) != 0 {
                        p *= v;
                    }
                }
                *s += p;
            }
            count += 1.0;
        }
    }
    (sums, count)
}

/// Joint cumulant from subset moments, with k-statistic corrections for
/// orders 2 and 3.
fn joint_cumulant(m: &[f64], order: usize, n: f64) -> f64 {
    match order {
        1 => m[1],
        2 => n / (n - 1.0) * (m[3] - m[1] * m[2]),
        3 => {
            let raw = m[7] - m[1] * m[6] - m[2] * m[5] - m[4] * m[3] + 2.0 * m[1] * m[2] * m[4];
            n * n / ((n - 1.0) * (n - 2.0)) * raw
        }
        _ => partition_cumulant(m, 4),
    }
}

fn partition_cumulant(m: &[f64], order: usize) -> f64 {
    // sum over set partitions of {0..order}: (−1)^{b−1}(b−1)! Π m_B
    let mut total = 0.0;
    let mut blocks: Vec<usize> = Vec::new();
    partitions(0, order, &mut blocks, &mut |bs: &[usize]| {
        let b = bs.len();
        let sign = if b % 2 == 1 { 1.0 } else { -1.0 };
        let fact: f64 = (1..b).map(|k| k as f64).product();
        total += sign * fact * bs.iter().map(|&mask| m[mask]).product::<f64>();
    });
    total
}

fn partitions(i: usize, n: usize, blocks: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    if i == n {
        visit(blocks);
        return;
    }
    for b in 0..blocks.len() {
        blocks[b] |= 1 << i;
        partitions(i + 1, n, blocks, visit);
        blocks[b] &= !(1 << i);
    }
    blocks.push(1 << i);
    partitions(i + 1, n, blocks, visit);
    blocks.pop();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn white_model(nu: f64) -> NoiseModel {
        let m = Mollifier { time: Profile::CosPower(4), space: Profile::CosPower(4) };
        NoiseModel::new(NoiseKind::MollifiedWhite(m), nu, 11).unwrap()
    }

    #[test]
    fn profiles_have_unit_mass() {
        for p in [Profile::CosPower(2), Profile::CosPower(4), Profile::Bump] {
            let (x, w) = quad::composite(-0.3, 0.3, 8, 16);
            let mass: f64 = x.iter().zip(&w).map(|(x, w)| w * p.density(*x, 0.3)).sum();
            assert!((mass - 1.0).abs() < 1e-8);
            assert!((p.fourier(0.0, 0.3) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_formula_matches_closed_forms() {
        // Gaussian-free check: cumulants of a degenerate variable X = c
        let m = vec![1.0, 2.0, 2.0, 4.0, 2.0, 4.0, 4.0, 8.0, 2.0, 4.0, 4.0, 8.0, 4.0, 8.0, 8.0, 16.0];
        assert!(partition_cumulant(&m, 4).abs() < 1e-12);
        let mut count = 0;
        partitions(0, 4, &mut Vec::new(), &mut |_| count += 1);
        assert_eq!(count, 15);
    }

    #[test]
    fn resolution_is_enforced() {
        let spec = LatticeSpec::new(1, 64, 0.01, 0.0, 0.1, 0.5).unwrap();
        let e = sample_macroscopic_noise(&white_model(0.2), &spec, 0).unwrap_err();
        assert!(e.message().contains("dx"));
        assert!(NoiseModel::new(NoiseKind::MollifiedWhite(white_model(0.2).mollifier()), 1.5, 0).is_err());
    }

    #[test]
    fn same_sample_same_field_and_coupled_windows() {
        let spec = LatticeSpec::new(1, 1024, 0.01, 0.0, 0.2, 0.5).unwrap();
        let m = white_model(0.2);
        let a = sample_macroscopic_noise(&m, &spec, 3).unwrap();
        let b = sample_macroscopic_noise(&m, &spec, 3).unwrap();
        assert_eq!(a, b);
        // a later window reuses the same white noise on the overlap
        let later = LatticeSpec::new(1, 1024, 0.01, 0.1, 0.3, 0.5).unwrap();
        let c = sample_macroscopic_noise(&m, &later, 3).unwrap();
        for (x, y) in a.slice(15).iter().zip(c.slice(5)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shot_noise_is_reproducible_and_centered() {
        let spec = LatticeSpec::new(1, 1024, 0.02, 0.0, 0.4, 0.5).unwrap();
        let m = Mollifier { time: Profile::CosPower(4), space: Profile::CosPower(4) };
        let kind = NoiseKind::PoissonShot { mollifier: m, mark: Profile::CosPower(2), intensity: 2.0 };
        let model = NoiseModel::new(kind, 0.2, 5).unwrap();
        let a = sample_macroscopic_noise(&model, &spec, 1).unwrap();
        assert_eq!(a, sample_macroscopic_noise(&model, &spec, 1).unwrap());
        assert!(a.max_abs() > 0.0);
    }
}
