//! Space-time lattice on ℝ × 𝕋^d (torus of side 2π) and the discrete
//! Fourier transform conventions used throughout the crate.
//!
//! Forward transforms carry no factor and inverses carry `1/n^d`, so a
//! kernel multiplier is its continuum symbol sampled at integer
//! frequencies. Continuum pairings always include `Δx^d` (and `dt`).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64 as C64;
use num_traits::Float;

use crate::error::{Fault, Result};
use crate::fft::FftNd;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeSpec {
    pub d: usize,
    pub n: usize,
    pub dt: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub sigma: f64,
}

impl LatticeSpec {
    pub fn new(d: usize, n: usize, dt: f64, t_min: f64, t_max: f64, sigma: f64) -> Result<Self> {
        let spec = LatticeSpec { d, n, dt, t_min, t_max, sigma };
        spec.validate()?;
        Ok(spec)
    }

    /// A spec with a single time slice, for space-only fields.
    pub fn space(d: usize, n: usize, sigma: f64) -> Result<Self> {
        Self::new(d, n, 1.0, 0.0, 1.0, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return Err(Fault::validation(format!("d = {} outside 1..=3", self.d)));
        }
        if self.n < 2 || !self.n.is_power_of_two() {
            return Err(Fault::validation(format!("n = {} is not a power of two", self.n)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Fault::validation("dt must be positive"));
        }
        if !(self.t_min < self.t_max) {
            return Err(Fault::validation("t_min must be below t_max"));
        }
        if !(self.sigma > 0.0 && self.sigma <= self.d as f64) {
            return Err(Fault::validation(format!(
                "sigma = {} outside (0, d = {}]",
                self.sigma, self.d
            )));
        }
        Ok(())
    }

    /// σ = d is admitted but sits on the dim(Φ) = 0 boundary.
    pub fn is_boundary_case(&self) -> bool {
        self.sigma == self.d as f64
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    pub fn n_space(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn n_time(&self) -> usize {
        ((self.t_max - self.t_min) / self.dt + 1e-9).floor() as usize + 1
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t_min + j as f64 * self.dt
    }

    /// Index of the slice closest to `t`.
    pub fn slice_at(&self, t: f64) -> usize {
        let j = ((t - self.t_min) / self.dt).round();
        (j.max(0.0) as usize).min(self.n_time() - 1)
    }

    /// Parabolic scale [μ] = μ^{1/σ}.
    pub fn scale(&self, mu: f64) -> f64 {
        mu.powf(1.0 / self.sigma)
    }

    /// Parabolic dimension D = σ + d.
    pub fn parabolic_dim(&self) -> f64 {
        self.sigma + self.d as f64
    }

    pub fn freq_1d(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Integer frequency vector of flat spectral index `idx`.
    pub fn freq(&self, idx: usize) -> [i64; 3] {
        let mut k = [0i64; 3];
        let mut r = idx;
        for axis in (0..self.d).rev() {
            k[axis] = self.freq_1d(r % self.n);
            r /= self.n;
        }
        k
    }

    pub fn freq_norm(&self, idx: usize) -> f64 {
        let k = self.freq(idx);
        (0..self.d).map(|a| (k[a] * k[a]) as f64).sum::<f64>().sqrt()
    }

    /// |k̄| for every spectral index.
    pub fn freq_norms(&self) -> Vec<f64> {
        (0..self.n_space()).map(|i| self.freq_norm(i)).collect()
    }

    /// Grid coordinates of flat spatial index `idx`, in [0, 2π).
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut r = idx;
        for axis in (0..self.d).rev() {
            x[axis] = (r % self.n) as f64 * self.dx();
            r /= self.n;
        }
        x
    }

    /// Representative of the grid point in [−π, π) per axis.
    pub fn centered_position(&self, idx: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut r = idx;
        for axis in (0..self.d).rev() {
            x[axis] = self.freq_1d(r % self.n) as f64 * self.dx();
            r /= self.n;
        }
        x
    }

    pub fn fft(&self) -> FftNd {
        FftNd::new(self.n, self.d)
    }

    pub fn same_grid(&self, other: &LatticeSpec) -> bool {
        self.d == other.d && self.n == other.n && self.sigma == other.sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    SpaceOnly,
    SpaceTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Space,
    SpaceTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub spec: LatticeSpec,
    pub domain: Domain,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(spec: LatticeSpec, domain: Domain) -> Self {
        let len = match domain {
            Domain::SpaceOnly => spec.n_space(),
            Domain::SpaceTime => spec.n_time() * spec.n_space(),
        };
        Field { spec, domain, data: vec![0.0; len] }
    }

    pub fn from_data(spec: LatticeSpec, domain: Domain, data: Vec<f64>) -> Result<Self> {
        let f = Field { spec, domain, data };
        let want = match domain {
            Domain::SpaceOnly => spec.n_space(),
            Domain::SpaceTime => spec.n_time() * spec.n_space(),
        };
        if f.data.len() != want {
            return Err(Fault::validation(format!(
                "field has {} values, lattice needs {want}",
                f.data.len()
            )));
        }
        Ok(f)
    }

    pub fn space_fn(spec: LatticeSpec, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let data = (0..spec.n_space()).map(|i| f(&spec.position(i)[..spec.d])).collect();
        Field { spec, domain: Domain::SpaceOnly, data }
    }

    pub fn space_time_fn(spec: LatticeSpec, mut f: impl FnMut(f64, &[f64]) -> f64) -> Self {
        let ns = spec.n_space();
        let mut data = Vec::with_capacity(spec.n_time() * ns);
        for j in 0..spec.n_time() {
            let t = spec.time(j);
            for i in 0..ns {
                data.push(f(t, &spec.position(i)[..spec.d]));
            }
        }
        Field { spec, domain: Domain::SpaceTime, data }
    }

    pub fn n_slices(&self) -> usize {
        match self.domain {
            Domain::SpaceOnly => 1,
            Domain::SpaceTime => self.spec.n_time(),
        }
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        let ns = self.spec.n_space();
        &self.data[j * ns..(j + 1) * ns]
    }

    pub fn slice_mut(&mut self, j: usize) -> &mut [f64] {
        let ns = self.spec.n_space();
        &mut self.data[j * ns..(j + 1) * ns]
    }

    /// Space-only copy of slice `j`.
    pub fn slice_field(&self, j: usize) -> Field {
        Field { spec: self.spec, domain: Domain::SpaceOnly, data: self.slice(j).to_vec() }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Fault::numerical(format!("non-finite value at flat index {i}"))),
            None => Ok(()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&mut self, a: f64, other: &Field) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> Field {
        let mut f = self.clone();
        f.data.iter_mut().for_each(|v| *v *= a);
        f
    }
}

/// Spatial DFT of one slice.
pub fn forward_slice(fft: &FftNd, values: &[f64]) -> Vec<C64> {
    let mut buf: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft.forward(&mut buf);
    buf
}

/// Inverse spatial DFT of one slice; the imaginary part is discarded.
pub fn inverse_slice(fft: &FftNd, coeffs: &[C64]) -> Vec<f64> {
    let mut buf = coeffs.to_vec();
    fft.inverse(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// Coefficients are laid out like the field (time outermost). With
/// `Axis::SpaceTime` the time direction gets a plain O(n_t²) DFT.
pub fn forward_transform(f: &Field, axis: Axis) -> Result<Vec<C64>> {
    f.check_finite()?;
    let fft = f.spec.fft();
    let ns = f.spec.n_space();
    let mut out = Vec::with_capacity(f.data.len());
    for j in 0..f.n_slices() {
        out.extend(forward_slice(&fft, f.slice(j)));
    }
    if axis == Axis::SpaceTime && f.domain == Domain::SpaceTime {
        time_dft(&mut out, f.n_slices(), ns, false);
    }
    Ok(out)
}

pub fn inverse_transform(
    coeffs: &[C64],
    spec: LatticeSpec,
    domain: Domain,
    axis: Axis,
) -> Result<Field> {
    let ns = spec.n_space();
    let nt = match domain {
        Domain::SpaceOnly => 1,
        Domain::SpaceTime => spec.n_time(),
    };
    if coeffs.len() != nt * ns {
        return Err(Fault::validation("coefficient array does not match lattice"));
    }
    let mut c = coeffs.to_vec();
    if axis == Axis::SpaceTime && domain == Domain::SpaceTime {
        time_dft(&mut c, nt, ns, true);
    }
    let fft = spec.fft();
    let mut data = Vec::with_capacity(nt * ns);
    for j in 0..nt {
        data.extend(inverse_slice(&fft, &c[j * ns..(j + 1) * ns]));
    }
    Field::from_data(spec, domain, data)
}

fn time_dft(c: &mut [C64], nt: usize, ns: usize, inverse: bool) {
    let sign = if inverse { 1.0 } else { -1.0 };
    let tw: Vec<C64> = (0..nt)
        .map(|m| {
            let th = sign * 2.0 * PI * m as f64 / nt as f64;
            C64::new(th.cos(), th.sin())
        })
        .collect();
    let mut col = vec![C64::new(0.0, 0.0); nt];
    for s in 0..ns {
        for (p, out) in col.iter_mut().enumerate() {
            *out = (0..nt).fold(C64::new(0.0, 0.0), |acc, j| acc + c[j * ns + s] * tw[(p * j) % nt]);
        }
        for (p, v) in col.iter().enumerate() {
            c[p * ns + s] = if inverse { *v / nt as f64 } else { *v };
        }
    }
}

/// Riemann-sum pairing ⟨f, ψ⟩ with the `Δx^d` (and `dt`) measure.
pub fn pair_with_test_function(f: &Field, psi: &Field) -> Result<f64> {
    if f.spec != psi.spec || f.domain != psi.domain {
        return Err(Fault::validation("pairing of fields on different lattices"));
    }
    let mut w = f.spec.cell_volume();
    if f.domain == Domain::SpaceTime {
        w *= f.spec.dt;
    }
    Ok(w * f.data.iter().zip(&psi.data).map(|(a, b)| a * b).sum::<f64>())
}

/// The same pairing evaluated from spatial coefficients (Parseval).
pub fn pair_spectral(f: &Field, psi: &Field) -> Result<f64> {
    if f.spec != psi.spec || f.domain != psi.domain {
        return Err(Fault::validation("pairing of fields on different lattices"));
    }
    let a = forward_transform(f, Axis::Space)?;
    let b = forward_transform(psi, Axis::Space)?;
    let ns = f.spec.n_space() as f64;
    let mut w = f.spec.cell_volume() / ns;
    if f.domain == Domain::SpaceTime {
        w *= f.spec.dt;
    }
    Ok(w * a.iter().zip(&b).map(|(x, y)| (x * y.conj()).re).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_like(spec: LatticeSpec) -> Field {
        let mut s = 0x2545_f491_4f6c_dd1du64;
        Field::space_fn(spec, |_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    #[test]
    fn constant_has_only_zero_mode() {
        let spec = LatticeSpec::space(1, 4, 0.5).unwrap();
        let f = Field::space_fn(spec, |_| 3.0);
        let c = forward_transform(&f, Axis::Space).unwrap();
        assert!((c[0].re - 12.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn roundtrip_all_sizes() {
        for d in 1..=2 {
            let mut n = 4;
            while n <= 512 {
                if d == 2 && n > 128 {
                    break;
                }
                let spec = LatticeSpec::space(d, n, 0.5).unwrap();
                let f = noise_like(spec);
                let c = forward_transform(&f, Axis::Space).unwrap();
                let g = inverse_transform(&c, spec, Domain::SpaceOnly, Axis::Space).unwrap();
                for (a, b) in f.data.iter().zip(&g.data) {
                    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
                n *= 2;
            }
        }
    }

    #[test]
    fn space_time_roundtrip() {
        let spec = LatticeSpec::new(1, 8, 0.1, 0.0, 0.6, 0.5).unwrap();
        let f = Field::space_time_fn(spec, |t, x| (3.0 * t).sin() + x[0].cos() * t);
        let c = forward_transform(&f, Axis::SpaceTime).unwrap();
        let g = inverse_transform(&c, spec, Domain::SpaceTime, Axis::SpaceTime).unwrap();
        for (a, b) in f.data.iter().zip(&g.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cosine_mode() {
        let spec = LatticeSpec::space(1, 16, 0.5).unwrap();
        let f = Field::space_fn(spec, |x| x[0].cos());
        let c = forward_transform(&f, Axis::Space).unwrap();
        let nonzero: Vec<usize> = (0..16).filter(|&i| c[i].norm() > 1e-10).collect();
        assert_eq!(nonzero, vec![1, 15]);
    }

    #[test]
    fn pairings() {
        let spec = LatticeSpec::space(1, 64, 0.5).unwrap();
        let one = Field::space_fn(spec, |_| 1.0);
        assert!((pair_with_test_function(&one, &one).unwrap() - 2.0 * PI).abs() < 1e-12);
        let c = Field::space_fn(spec, |x| x[0].cos());
        let s = Field::space_fn(spec, |x| x[0].sin());
        assert!((pair_with_test_function(&c, &c).unwrap() - PI).abs() < 1e-10);
        assert!(pair_with_test_function(&c, &s).unwrap().abs() < 1e-12);
    }

    #[test]
    fn parseval() {
        let spec = LatticeSpec::space(2, 16, 1.0).unwrap();
        let f = noise_like(spec);
        let g = Field::space_fn(spec, |x| (x[0] + 2.0 * x[1]).sin() + 0.3);
        let a = pair_with_test_function(&f, &g).unwrap();
        let b = pair_spectral(&f, &g).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_specs_and_values() {
        assert!(LatticeSpec::space(1, 12, 0.5).is_err());
        assert!(LatticeSpec::space(1, 16, 1.5).is_err());
        let spec = LatticeSpec::space(1, 8, 0.5).unwrap();
        let mut f = Field::zeros(spec, Domain::SpaceOnly);
        f.data[5] = f64::NAN;
        let e = forward_transform(&f, Axis::Space).unwrap_err();
        assert!(e.message().contains("index 5"));
    }
}
