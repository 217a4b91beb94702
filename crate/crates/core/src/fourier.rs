//! Fourier series of `D`-periodic signals sampled on a uniform grid.
//!
//! Samples are taken at `t_j = jD/N`, `j = 0 … N−1`; the endpoint `t = D` is
//! identified with `t = 0`, so the trapezoidal rule reduces to a plain sum.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSpectrum {
    pub period: f64,
    /// `a₀ … a_{k_max}`.
    pub a: Vec<f64>,
    /// `b₀ … b_{k_max}`; `b₀` is always zero.
    pub b: Vec<f64>,
    pub k_max: usize,
}

/// Minimum sample count accepted for a given `k_max`.
pub fn min_samples(k_max: usize) -> usize {
    4 * k_max + 4
}

/// `a_k = (2/D)∫₀ᴰ v cos(2πkt/D) dt`, `b_k` likewise with `sin`.
pub fn coefficients(samples: &[f64], period: f64, k_max: usize) -> Result<FourierSpectrum> {
    let n = samples.len();
    if n < min_samples(k_max) {
        return Err(Error::InsufficientSamples { needed: min_samples(k_max), got: n, k_max });
    }
    if !(period > 0.0) {
        return Err(Error::InvalidParams(format!("period must be positive, got {period}")));
    }
    let mut a = vec![0.0; k_max + 1];
    let mut b = vec![0.0; k_max + 1];
    for k in 0..=k_max {
        let (mut ca, mut cb) = (0.0, 0.0);
        for (j, v) in samples.iter().enumerate() {
            // reduce kj mod N first so the angle stays in [0, 2π)
            let th = 2.0 * PI * ((k * j) % n) as f64 / n as f64;
            ca += v * th.cos();
            cb += v * th.sin();
        }
        a[k] = 2.0 * ca / n as f64;
        b[k] = if k == 0 { 0.0 } else { 2.0 * cb / n as f64 };
    }
    Ok(FourierSpectrum { period, a, b, k_max })
}

/// `(1/D)∫₀ᴰ v² dt` by the same rule.
pub fn mean_square(samples: &[f64]) -> f64 {
    samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64
}

/// `|∫v² − (D/2)(a₀²/2 + Σ(a_k² + b_k²))|`.
pub fn parseval_residual(samples: &[f64], spec: &FourierSpectrum) -> f64 {
    let lhs = spec.period * mean_square(samples);
    let tail: f64 = (1..=spec.k_max).map(|k| spec.a[k].powi(2) + spec.b[k].powi(2)).sum();
    let rhs = spec.period / 2.0 * (spec.a[0].powi(2) / 2.0 + tail);
    (lhs - rhs).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullingResult {
    pub ok: bool,
    /// Largest `|a_k|`, `|b_k|` over `k = 0 … ℓ`.
    pub max_coeff: f64,
    pub worst_k: usize,
}

/// Checks that `a₀ … a_ℓ` and `b₁ … b_ℓ` are all within `tol`.
pub fn nulling_check(spec: &FourierSpectrum, ell: usize, tol: f64) -> Result<NullingResult> {
    if spec.k_max < ell {
        return Err(Error::InvalidParams(format!("spectrum has k_max = {}, need {ell}", spec.k_max)));
    }
    let (mut max_coeff, mut worst_k) = (0.0_f64, 0);
    for k in 0..=ell {
        let c = spec.a[k].abs().max(spec.b[k].abs());
        if c > max_coeff {
            max_coeff = c;
            worst_k = k;
        }
    }
    Ok(NullingResult { ok: max_coeff <= tol, max_coeff, worst_k })
}

/// Mean-square bound `v̄² / ((2π/D)² (ℓ+1)²)` for a periodic signal whose
/// first `ℓ+1` harmonics vanish and whose derivative is bounded by `v̄`.
pub fn l2_bound(v_dot_max: f64, period: f64, ell: usize) -> f64 {
    let w = 2.0 * PI / period * (ell as f64 + 1.0);
    v_dot_max * v_dot_max / (w * w)
}

impl FourierSpectrum {
    /// `k,a_k,b_k` per line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,a_k,b_k\n");
        for k in 0..=self.k_max {
            let _ = writeln!(s, "{k},{:.16e},{:.16e}", self.a[k], self.b[k]);
        }
        s
    }

    /// `√(a_k² + b_k²)` for each `k`.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| a.hypot(*b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, d: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|j| f(j as f64 * d / n as f64)).collect()
    }

    #[test]
    fn constant_signal() {
        let v = grid(64, 3.0, |_| 1.7);
        let s = coefficients(&v, 3.0, 5).unwrap();
        assert!((s.a[0] - 3.4).abs() < 1e-12);
        assert!(s.a[1..].iter().chain(&s.b).all(|c| c.abs() < 1e-12));
        assert!(parseval_residual(&v, &s) < 1e-10);
    }

    #[test]
    fn pure_sine_and_shifted_cosine() {
        let d = 2.0;
        let w = 2.0 * PI / d;
        let v = grid(64, d, |t| (w * t).sin());
        let s = coefficients(&v, d, 6).unwrap();
        assert!((s.b[1] - 1.0).abs() < 1e-12);
        assert!((parseval_residual(&v, &s)) < 1e-10);
        let v = grid(64, d, |t| (3.0 * w * t).cos() + 0.5);
        let s = coefficients(&v, d, 6).unwrap();
        assert!((s.a[0] - 1.0).abs() < 1e-12 && (s.a[3] - 1.0).abs() < 1e-12);
        assert!(s.b.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn too_few_samples() {
        let v = vec![0.0; 11];
        assert!(matches!(
            coefficients(&v, 1.0, 2),
            Err(Error::InsufficientSamples { needed: 12, got: 11, k_max: 2 })
        ));
        assert!(coefficients(&[0.0; 12], 1.0, 2).is_ok());
    }

    #[test]
    fn nulling_examples() {
        let d = 1.0;
        let ell = 3;
        let v = grid(128, d, |t| (((ell + 1) as f64) * 2.0 * PI * t / d).sin());
        let s = coefficients(&v, d, 8).unwrap();
        assert!(nulling_check(&s, ell, 1e-12).unwrap().ok);
        let s = coefficients(&[1.0; 64], d, 8).unwrap();
        let r = nulling_check(&s, ell, 1.99).unwrap();
        assert!(!r.ok && r.worst_k == 0);
        assert!(nulling_check(&s, 9, 1.0).is_err());
    }

    #[test]
    fn bound_examples() {
        assert_eq!(l2_bound(0.0, 1.0, 3), 0.0);
        let b: Vec<f64> = (0..6).map(|l| l2_bound(1.0, 2.0, l)).collect();
        assert!(b.windows(2).all(|w| w[1] < w[0]));
        // v = (1/(ℓ+1))(D/2π) sin((ℓ+1)2πt/D): max|v̇| = 1, mean square = bound / 2
        let (d, ell) = (2.5, 2usize);
        let k = (ell + 1) as f64;
        let v = grid(256, d, |t| d / (2.0 * PI * k) * (k * 2.0 * PI * t / d).sin());
        let ms = mean_square(&v);
        assert!((ms - l2_bound(1.0, d, ell) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = coefficients(&[1.0; 16], 1.0, 2).unwrap();
        let csv = s.to_csv();
        assert!(csv.starts_with("k,a_k,b_k\n0,2.0"));
        assert_eq!(csv.lines().count(), 4);
    }
}
