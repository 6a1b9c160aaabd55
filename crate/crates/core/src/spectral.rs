//! Periodic spectral operators in θ and fourth-order stencils in t.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// FFT-based operators on `n` equispaced points of `[0, 2π)`.
#[derive(Clone)]
pub struct Fourier {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fourier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier").field("n", &self.n).finish()
    }
}

impl Fourier {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fourier { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Signed wavenumber of FFT bin `k`; the Nyquist bin maps to `None`.
    pub fn wavenumber(&self, k: usize) -> Option<f64> {
        let n = self.n;
        if 2 * k == n {
            None
        } else if k < n / 2 + n % 2 {
            Some(k as f64)
        } else {
            Some(k as f64 - n as f64)
        }
    }

    pub fn coefficients(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut buf = x.to_vec();
        self.forward.process(&mut buf);
        buf
    }

    fn synthesize(&self, mut buf: Vec<Complex64>) -> Vec<Complex64> {
        self.inverse.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|v| *v *= s);
        buf
    }

    /// Spectral derivative; the Nyquist mode is dropped.
    pub fn derivative(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut c = self.coefficients(x);
        for (k, v) in c.iter_mut().enumerate() {
            *v *= match self.wavenumber(k) {
                Some(w) => Complex64::new(0.0, w),
                None => Complex64::new(0.0, 0.0),
            };
        }
        self.synthesize(c)
    }

    pub fn derivative_real(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.derivative(&z).iter().map(|v| v.re).collect()
    }

    /// `∫_0^{θ_k} f` at the grid nodes, exact for band-limited `f`.
    pub fn cumulative_integral_real(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut c = self.coefficients(&z);
        let mean = c[0].re / self.n as f64;
        for (k, v) in c.iter_mut().enumerate() {
            *v = match self.wavenumber(k) {
                Some(w) if w != 0.0 => *v / Complex64::new(0.0, w),
                _ => Complex64::new(0.0, 0.0),
            };
        }
        let p = self.synthesize(c);
        let h = 2.0 * PI / self.n as f64;
        (0..self.n).map(|k| mean * k as f64 * h + p[k].re - p[0].re).collect()
    }

    /// Trigonometric interpolant evaluated at `theta`, with the Nyquist mode
    /// split symmetrically so that real data interpolate to real values.
    pub fn interpolate(&self, coeffs: &[Complex64], theta: f64) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for (k, c) in coeffs.iter().enumerate() {
            match self.wavenumber(k) {
                Some(w) => s += c * Complex64::from_polar(1.0, w * theta),
                None => s += c * (0.5 * self.n as f64 * theta).cos(),
            }
        }
        s / self.n as f64
    }

    /// Drops the Nyquist mode.
    pub fn band_limit(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut c = self.coefficients(x);
        if self.n % 2 == 0 {
            c[self.n / 2] = Complex64::new(0.0, 0.0);
        }
        self.synthesize(c)
    }

    /// Largest coefficient magnitude among the top `frac` of wavenumbers,
    /// relative to the largest coefficient overall.
    pub fn tail_fraction(&self, x: &[Complex64], frac: f64) -> f64 {
        let c = self.coefficients(x);
        let cutoff = (self.n as f64 * 0.5 * (1.0 - frac)).floor();
        let mut tail: f64 = 0.0;
        let mut all: f64 = 0.0;
        for (k, v) in c.iter().enumerate() {
            let w = self.wavenumber(k).map_or(self.n as f64 / 2.0, f64::abs);
            all = all.max(v.norm());
            if w > cutoff {
                tail = tail.max(v.norm());
            }
        }
        if all == 0.0 {
            0.0
        } else {
            tail / all
        }
    }
}

/// Dense spectral differentiation matrix on `n` (even) points.
pub fn spectral_diff_matrix(n: usize) -> nalgebra::DMatrix<f64> {
    let h = 2.0 * PI / n as f64;
    nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            let k = i as f64 - j as f64;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            0.5 * sign / (0.5 * k * h).tan()
        }
    })
}

/// Stencil of the fourth-order first derivative at row `i` of `n` uniform
/// points, as `(first index, coefficients)` to be divided by `12 h`.
pub fn fd4_stencil(i: usize, n: usize) -> (usize, [f64; 5]) {
    const C: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
    const B0: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
    const B1: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0];
    let rev = |c: [f64; 5]| [-c[4], -c[3], -c[2], -c[1], -c[0]];
    match i {
        0 => (0, B0),
        1 => (0, B1),
        _ if i == n - 1 => (n - 5, rev(B0)),
        _ if i == n - 2 => (n - 5, rev(B1)),
        _ => (i - 2, C),
    }
}

/// Fourth-order derivative of a uniformly sampled sequence with spacing `h`.
pub fn fd4_derivative<T>(f: &[T], h: f64) -> Vec<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
{
    let n = f.len();
    (0..n)
        .map(|i| {
            let (s, c) = fd4_stencil(i, n);
            let mut acc = T::default();
            for k in 0..5 {
                if c[k] != 0.0 {
                    acc = acc + f[s + k] * (c[k] / (12.0 * h));
                }
            }
            acc
        })
        .collect()
}

/// Gregory-corrected trapezoid weights on `n ≥ 8` uniform points; fourth
/// order for smooth integrands on an interval.
pub fn gregory_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 8, "Gregory weights need at least 8 points");
    let end = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];
    (0..n)
        .map(|i| {
            let k = i.min(n - 1 - i);
            h * if k < 3 { end[k] } else { 1.0 }
        })
        .collect()
}

/// Fourth-order cumulative integral `∫_{x_0}^{x_i} f` on uniform points.
///
/// Each interval uses the cubic through the four nearest nodes.
pub fn cumulative_integral_fd4(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    for i in 0..n - 1 {
        // integral over [x_i, x_{i+1}] of the cubic through a window of 4 points
        let s = if i == 0 { 0 } else if i + 2 >= n { n - 4 } else { i - 1 };
        let off = i - s; // position of x_i within the window
        let w = interval_weights(off);
        let mut v = 0.0;
        for k in 0..4 {
            v += w[k] * f[s + k];
        }
        out[i + 1] = out[i] + h * v;
    }
    out
}

/// Weights of `∫_{x_off}^{x_off+1}` of the cubic through nodes 0..3 (unit spacing).
fn interval_weights(off: usize) -> [f64; 4] {
    match off {
        0 => [9.0 / 24.0, 19.0 / 24.0, -5.0 / 24.0, 1.0 / 24.0],
        1 => [-1.0 / 24.0, 13.0 / 24.0, 13.0 / 24.0, -1.0 / 24.0],
        _ => [1.0 / 24.0, -5.0 / 24.0, 19.0 / 24.0, 9.0 / 24.0],
    }
}

/// Compensated sum.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for x in it {
        let y = x - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
    }

    #[test]
    fn derivative_of_band_limited_function() {
        let f = Fourier::new(32);
        let th = grid(32);
        let x: Vec<f64> = th.iter().map(|t| (3.0 * t).sin() + 0.5 * (7.0 * t).cos() + 2.0).collect();
        let dx = f.derivative_real(&x);
        for (t, d) in th.iter().zip(&dx) {
            let exact = 3.0 * (3.0 * t).cos() - 3.5 * (7.0 * t).sin();
            assert!((d - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn cumulative_integral_is_exact() {
        let f = Fourier::new(16);
        let th = grid(16);
        let x: Vec<f64> = th.iter().map(|t| 0.3 + (2.0 * t).cos()).collect();
        let c = f.cumulative_integral_real(&x);
        for (t, v) in th.iter().zip(&c) {
            assert!((v - (0.3 * t + 0.5 * (2.0 * t).sin())).abs() < 1e-13);
        }
    }

    #[test]
    fn interpolation_reproduces_band_limited_values() {
        let f = Fourier::new(16);
        let th = grid(16);
        let x: Vec<Complex64> = th.iter().map(|t| Complex64::new((2.0 * t).sin(), t.cos())).collect();
        let c = f.coefficients(&x);
        for s in [0.1, 1.7, 4.4] {
            let v = f.interpolate(&c, s);
            assert!((v - Complex64::new((2.0 * s).sin(), s.cos())).norm() < 1e-13);
        }
    }

    #[test]
    fn dense_matrix_matches_fft() {
        let n = 16;
        let f = Fourier::new(n);
        let d = spectral_diff_matrix(n);
        let x: Vec<f64> = grid(n).iter().map(|t| (t.sin() * 2.0).exp()).collect();
        let a = f.derivative_real(&x);
        let b = &d * nalgebra::DVector::from_column_slice(&x);
        for i in 0..n {
            assert!((a[i] - b[i]).abs() < 1e-10);
        }
        assert!((&d + d.transpose()).amax() < 1e-13);
    }

    #[test]
    fn fd4_is_fourth_order() {
        let err = |n: usize| {
            let h = 1.0 / (n - 1) as f64;
            let f: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 * h).exp()).collect();
            fd4_derivative(&f, h)
                .iter()
                .enumerate()
                .map(|(i, d)| (d - 1.3 * (1.3 * i as f64 * h).exp()).abs())
                .fold(0.0, f64::max)
        };
        let r = err(33) / err(65);
        assert!(r > 13.0 && r < 20.0, "ratio {r}");
    }

    #[test]
    fn gregory_and_cumulative_are_fourth_order() {
        let run = |n: usize| {
            let h = 2.0 / (n - 1) as f64;
            let f: Vec<f64> = (0..n).map(|i| (i as f64 * h).cos()).collect();
            let q: f64 = gregory_weights(n, h).iter().zip(&f).map(|(w, v)| w * v).sum();
            let c = cumulative_integral_fd4(&f, h);
            ((q - 2.0f64.sin()).abs(), (c[n - 1] - 2.0f64.sin()).abs())
        };
        let (a1, b1) = run(33);
        let (a2, b2) = run(65);
        assert!(a1 / a2 > 12.0, "gregory ratio {}", a1 / a2);
        assert!(b1 / b2 > 12.0, "cumulative ratio {}", b1 / b2);
    }

    #[test]
    fn kahan() {
        let naive: f64 = std::iter::repeat_n(0.1, 10).sum();
        assert_ne!(naive, 1.0);
        assert_eq!(kahan_sum(std::iter::repeat_n(0.1, 10)), 1.0);
    }
}
