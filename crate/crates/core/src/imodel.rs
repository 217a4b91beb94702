//! Internal-model pair `(Φ, G)` driven by the regulation error: `η̇ = Φη + Ge`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(deny_unknown_fields)]
pub enum InternalModelKind {
    /// Integrator plus `ell` oscillators at multiples of `2π/period`.
    Harmonic { ell: usize, period: f64, gamma: f64, n: [f64; 2] },
    /// Block companion realization of the minimal polynomial.
    Companion { min_poly: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalModel {
    phi: DMatrix<f64>,
    g: DMatrix<f64>,
    p: usize,
    kind: InternalModelKind,
}

impl InternalModel {
    /// Harmonic bank: `p` copies of `φ = diag(0, φ₁ … φ_ℓ)` with
    /// `φ_k = [[0, ω_k], [−ω_k, 0]]`, `ω_k = 2πk/D`, and input column
    /// `Γ = col(γ, N, …, N)`.
    pub fn harmonic(p: usize, ell: usize, period: f64, gamma: f64, n: [f64; 2]) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParams("need at least one error channel".into()));
        }
        if !(period > 0.0) {
            return Err(Error::InvalidParams(format!("period must be positive, got {period}")));
        }
        if gamma == 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidParams("gamma must be a nonzero real".into()));
        }
        if n == [0.0, 0.0] || !n.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParams("N must be a nonzero vector".into()));
        }
        let size = 2 * ell + 1;
        let mut phi_k = DMatrix::zeros(size, size);
        let mut gamma_col = DMatrix::zeros(size, 1);
        gamma_col[(0, 0)] = gamma;
        for k in 1..=ell {
            let omega = k as f64 * 2.0 * PI / period;
            let r = 2 * k - 1;
            phi_k[(r, r + 1)] = omega;
            phi_k[(r + 1, r)] = -omega;
            gamma_col[(r, 0)] = n[0];
            gamma_col[(r + 1, 0)] = n[1];
        }
        let phi = linalg::block_diag(&vec![phi_k; p]);
        let g = linalg::block_diag(&vec![gamma_col; p]);
        Ok(Self { phi, g, p, kind: InternalModelKind::Harmonic { ell, period, gamma, n } })
    }

    /// Companion form from the minimal polynomial `s₀ + s₁λ + … + λ^d`,
    /// given as `[s₀, …, s_{d−1}]`.
    pub fn companion(p: usize, min_poly: &[f64]) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParams("need at least one error channel".into()));
        }
        if min_poly.is_empty() {
            return Err(Error::InvalidParams("minimal polynomial must have degree >= 1".into()));
        }
        let d = min_poly.len();
        let ne = p * d;
        let mut phi = DMatrix::zeros(ne, ne);
        for blk in 0..d - 1 {
            for i in 0..p {
                phi[(blk * p + i, (blk + 1) * p + i)] = 1.0;
            }
        }
        for (blk, s) in min_poly.iter().enumerate() {
            for i in 0..p {
                phi[((d - 1) * p + i, blk * p + i)] = -s;
            }
        }
        let mut g = DMatrix::zeros(ne, p);
        for i in 0..p {
            g[((d - 1) * p + i, i)] = 1.0;
        }
        Ok(Self { phi, g, p, kind: InternalModelKind::Companion { min_poly: min_poly.to_vec() } })
    }

    pub fn from_kind(p: usize, kind: &InternalModelKind) -> Result<Self> {
        match kind {
            InternalModelKind::Harmonic { ell, period, gamma, n } => {
                Self::harmonic(p, *ell, *period, *gamma, *n)
            }
            InternalModelKind::Companion { min_poly } => Self::companion(p, min_poly),
        }
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn n_eta(&self) -> usize {
        self.phi.nrows()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> &InternalModelKind {
        &self.kind
    }

    /// Number of embedded harmonics, if this is a harmonic bank.
    pub fn ell(&self) -> Option<usize> {
        match self.kind {
            InternalModelKind::Harmonic { ell, .. } => Some(ell),
            InternalModelKind::Companion { .. } => None,
        }
    }

    /// `[G, ΦG, …, Φ^{n−1}G]` with `Φ` divided by its spectral radius, which
    /// leaves the column space unchanged and keeps high harmonics from
    /// swamping the low powers.
    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let n = self.n_eta();
        let scale = linalg::eigenvalues(&self.phi).iter().fold(0.0_f64, |m, (re, im)| m.max(re.hypot(*im)));
        let phi = if scale > 0.0 { &self.phi / scale } else { self.phi.clone() };
        let mut blocks = Vec::with_capacity(n);
        let mut cur = self.g.clone();
        for _ in 0..n {
            let next = &phi * &cur;
            blocks.push(cur);
            cur = next;
        }
        let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
        linalg::hstack(&refs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrator_only() {
        let im = InternalModel::harmonic(1, 0, 2.0 * PI, 1.0, [0.0, 1.0]).unwrap();
        assert_eq!(im.phi(), &DMatrix::zeros(1, 1));
        assert_eq!(im.g(), &DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn dimension_and_fundamental() {
        let im = InternalModel::harmonic(1, 4, 2.0 * PI, 1.0, [0.0, 1.0]).unwrap();
        assert_eq!(im.n_eta(), 9);
        let im = InternalModel::harmonic(1, 1, 2.0 * PI, 1.0, [0.0, 1.0]).unwrap();
        assert!((im.phi()[(1, 2)] - 1.0).abs() < 1e-15);
        assert!((im.phi()[(2, 1)] + 1.0).abs() < 1e-15);
        assert_eq!(im.g().column(0).as_slice(), &[1.0, 0.0, 1.0]);
        let im = InternalModel::harmonic(2, 3, 1.0, 2.0, [1.0, 1.0]).unwrap();
        assert_eq!(im.n_eta(), 14);
        assert_eq!(im.g().shape(), (14, 2));
    }

    #[test]
    fn rejects_degenerate_gains() {
        assert!(InternalModel::harmonic(1, 2, 1.0, 0.0, [0.0, 1.0]).is_err());
        assert!(InternalModel::harmonic(1, 2, 1.0, 1.0, [0.0, 0.0]).is_err());
        assert!(InternalModel::harmonic(1, 2, 0.0, 1.0, [0.0, 1.0]).is_err());
    }

    #[test]
    fn rolling_mill_companion() {
        let im = InternalModel::companion(1, &[0.0, 1.0, 0.0]).unwrap();
        let phi = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 0., -1., 0.]);
        assert_eq!(im.phi(), &phi);
        assert_eq!(im.g().column(0).as_slice(), &[0.0, 0.0, 1.0]);
        let im = InternalModel::companion(1, &[0.0]).unwrap();
        assert_eq!(im.phi(), &DMatrix::zeros(1, 1));
        assert_eq!(im.g(), &DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn companion_spectrum_repeats_per_channel() {
        // m(λ) = λ² + 3λ + 2 → roots −1, −2, each twice for p = 2
        let im = InternalModel::companion(2, &[2.0, 3.0]).unwrap();
        assert_eq!(im.n_eta(), 4);
        let mut re: Vec<f64> = linalg::eigenvalues(im.phi()).iter().map(|z| z.0).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [-2.0, -2.0, -1.0, -1.0];
        for (a, b) in re.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{re:?}");
        }
    }

    #[test]
    fn kind_roundtrips_through_toml() {
        let kind = InternalModelKind::Harmonic { ell: 3, period: 6.0, gamma: 1.0, n: [0.0, 1.0] };
        let text = toml::to_string(&kind).unwrap();
        assert_eq!(toml::from_str::<InternalModelKind>(&text).unwrap(), kind);
    }
}
