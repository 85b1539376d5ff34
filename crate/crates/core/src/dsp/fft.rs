//! Iterative radix-2 FFT with a precomputed plan.

use alloc::vec::Vec;
use core::f64::consts::TAU;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    #[inline]
    fn mul(self, o: Complex) -> Complex {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

/// Forward transform plan for a fixed power-of-two size.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    /// Returns `None` unless `n` is a power of two.
    pub fn new(n: usize) -> Option<Self> {
        if n == 0 || !n.is_power_of_two() {
            return None;
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| {
                let angle = -TAU * k as f64 / n as f64;
                Complex::new(libm::cos(angle), libm::sin(angle))
            })
            .collect();
        Some(FftPlan { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward DFT, `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
    pub fn forward(&self, buf: &mut [Complex]) {
        assert_eq!(buf.len(), self.n, "buffer length must match plan size");
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= self.n {
            let half = size / 2;
            let stride = self.n / size;
            for start in (0..self.n).step_by(size) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half].mul(w);
                    buf[start + k] = Complex::new(a.re + b.re, a.im + b.im);
                    buf[start + k + half] = Complex::new(a.re - b.re, a.im - b.im);
                }
            }
            size *= 2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn naive_dft(x: &[Complex]) -> Vec<Complex> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex::ZERO;
                for (t, v) in x.iter().enumerate() {
                    let ang = -TAU * (k * t % n) as f64 / n as f64;
                    acc.re += v.re * ang.cos() - v.im * ang.sin();
                    acc.im += v.re * ang.sin() + v.im * ang.cos();
                }
                acc
            })
            .collect()
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(FftPlan::new(400).is_none());
        assert!(FftPlan::new(0).is_none());
        assert!(FftPlan::new(1).is_some());
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = SeededRng::new(11);
        for n in [1usize, 2, 8, 64, 512] {
            let x: Vec<Complex> =
                (0..n).map(|_| Complex::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0))).collect();
            let mut y = x.clone();
            FftPlan::new(n).unwrap().forward(&mut y);
            let reference = naive_dft(&x);
            for (a, b) in y.iter().zip(&reference) {
                assert!((a.re - b.re).abs() < 1e-9 && (a.im - b.im).abs() < 1e-9);
            }
        }
    }
}
