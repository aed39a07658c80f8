//! Fast Chebyshev transforms between Gauss–Lobatto values and coefficients.
//!
//! Both directions are a DCT-I computed through a complex FFT of the even
//! extension of length `2n`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct ChebTransform {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ChebTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChebTransform").field("n", &self.n).finish()
    }
}

impl ChebTransform {
    /// Transform for `n + 1` nodes.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "transform needs at least two nodes");
        let fft = FftPlanner::new().plan_fft_forward(2 * n);
        Self { n, fft }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn even_fft(&self, v: &[Complex64], buf: &mut Vec<Complex64>) {
        let n = self.n;
        buf.clear();
        buf.extend_from_slice(&v[..=n]);
        buf.extend(v[1..n].iter().rev());
        self.fft.process(buf);
    }

    /// Node values (ordered `y = 1 → -1`) to Chebyshev coefficients.
    pub fn forward(&self, values: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        assert_eq!(values.len(), n + 1);
        let mut buf = Vec::with_capacity(2 * n);
        self.even_fft(values, &mut buf);
        let nf = n as f64;
        (0..=n)
            .map(|k| {
                let cbar = if k == 0 || k == n { 2.0 } else { 1.0 };
                buf[k] / (nf * cbar)
            })
            .collect()
    }

    /// Chebyshev coefficients to node values.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        assert_eq!(coeffs.len(), n + 1);
        let scaled: Vec<Complex64> = coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| if k == 0 || k == n { *c } else { c * 0.5 })
            .collect();
        let mut buf = Vec::with_capacity(2 * n);
        self.even_fft(&scaled, &mut buf);
        buf.truncate(n + 1);
        buf
    }
}

/// Resamples node values from `from.n()` to `to.n()` nodes by zero-padding or
/// truncating the Chebyshev series.
pub fn resample(from: &ChebTransform, to: &ChebTransform, values: &[Complex64]) -> Vec<Complex64> {
    let mut c = from.forward(values);
    c.resize(to.n() + 1, Complex64::new(0.0, 0.0));
    to.inverse(&c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn nodes(n: usize) -> Vec<f64> {
        (0..=n).map(|j| (PI * j as f64 / n as f64).cos()).collect()
    }

    #[test]
    fn coefficients_of_known_polynomial() {
        let n = 8;
        // T_3 = 4y^3 - 3y
        let vals: Vec<Complex64> = nodes(n)
            .iter()
            .map(|&y| Complex64::new(2.0 + 4.0 * y.powi(3) - 3.0 * y, 0.0))
            .collect();
        let c = ChebTransform::new(n).forward(&vals);
        for (k, ck) in c.iter().enumerate() {
            let expect = match k {
                0 => 2.0,
                3 => 1.0,
                _ => 0.0,
            };
            assert!((ck.re - expect).abs() < 1e-13 && ck.im.abs() < 1e-13, "k={k} {ck}");
        }
    }

    #[test]
    fn roundtrip_and_resample() {
        let t = ChebTransform::new(16);
        let vals: Vec<Complex64> = nodes(16)
            .iter()
            .map(|&y| Complex64::new(y.sin(), y * y))
            .collect();
        let back = t.inverse(&t.forward(&vals));
        for (a, b) in vals.iter().zip(&back) {
            assert!((a - b).norm() < 1e-13);
        }
        let big = ChebTransform::new(24);
        let up = resample(&t, &big, &vals);
        let down = resample(&big, &t, &up);
        for (a, b) in vals.iter().zip(&down) {
            assert!((a - b).norm() < 1e-13);
        }
        for (y, v) in nodes(24).iter().zip(&up) {
            assert!((v.re - y.sin()).abs() < 1e-12);
        }
    }
}
