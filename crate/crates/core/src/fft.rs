//! Iterative radix-2 complex FFT and its tensor-product extension to
//! d-dimensional cubic grids. Forward transforms carry no factor; the
//! inverse divides by the number of points.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64 as C64;

#[derive(Clone, Debug)]
pub struct Fft {
    n: usize,
    rev: Vec<usize>,
    twiddle: Vec<C64>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "fft length must be a power of two");
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if n == 1 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddle = (0..n / 2)
            .map(|k| {
                let th = -2.0 * PI * k as f64 / n as f64;
                C64::new(libm::cos(th), libm::sin(th))
            })
            .collect();
        Fft { n, rev, twiddle }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place unnormalized transform; `inverse` flips the sign of the
    /// exponent but does not rescale.
    pub fn process(&self, buf: &mut [C64], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.rev[i];
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddle[k * step];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// Transform over a row-major `n^d` block, one axis at a time.
#[derive(Clone, Debug)]
pub struct FftNd {
    d: usize,
    plan: Fft,
}

impl FftNd {
    pub fn new(n: usize, d: usize) -> Self {
        FftNd { d, plan: Fft::new(n) }
    }

    pub fn size(&self) -> usize {
        self.plan.len().pow(self.d as u32)
    }

    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, false);
    }

    /// Inverse including the `1/n^d` factor.
    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, true);
        let s = 1.0 / self.size() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    fn run(&self, data: &mut [C64], inverse: bool) {
        let n = self.plan.len();
        let total = self.size();
        debug_assert_eq!(data.len(), total);
        if self.d == 1 {
            self.plan.process(data, inverse);
            return;
        }
        let mut line = vec![C64::new(0.0, 0.0); n];
        for axis in 0..self.d {
            let stride = n.pow((self.d - 1 - axis) as u32);
            for base in 0..total {
                // visit each line once: its first element has a zero digit on `axis`
                if (base / stride) % n != 0 {
                    continue;
                }
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[base + j * stride];
                }
                self.plan.process(&mut line, inverse);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}
