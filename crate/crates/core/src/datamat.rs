//! Data matrices `U₀`, `𝓩₀`, `𝓩₁` and the reduced signal matrix `𝓜`.
//!
//! With `W₀` the (unmeasured) exosystem samples, the data obey
//! `𝓩₁ = 𝓐 𝓩₀ + 𝓑 U₀ + 𝓟 W₀` and `W₀ = 𝓣 L M`, so any `𝓖` with `𝓜 𝓖 = 0`
//! removes the exogenous contribution from `𝓩₁ 𝓖`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exo::{build_m, SpectralSpec};
use crate::imodel::InternalModel;
use crate::linalg;
use crate::plant::{calz, BasisLibrary, Dataset, Mode};

/// Relative singular-value threshold for numerical rank.
pub const RANK_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub u0: DMatrix<f64>,
    /// Rows `x, η, Q(x)` (nonlinear) or `x, η` (linear).
    pub z0: DMatrix<f64>,
    /// Rows `ẋ, η̇`.
    pub z1: DMatrix<f64>,
    pub m_red: DMatrix<f64>,
    pub mode: Mode,
    pub n: usize,
    pub n_eta: usize,
    pub times: Vec<f64>,
}

impl DataMatrices {
    pub fn t(&self) -> usize {
        self.u0.ncols()
    }

    pub fn m(&self) -> usize {
        self.u0.nrows()
    }

    pub fn d(&self) -> usize {
        self.m_red.nrows()
    }

    /// `n + n_η`, the row count of `𝓩₁`.
    pub fn n_state(&self) -> usize {
        self.n + self.n_eta
    }

    /// Rows of `𝓩₀`: `q + n_η` or `n + n_η`.
    pub fn n_z(&self) -> usize {
        self.z0.nrows()
    }

    /// `[U₀; 𝓩₀; 𝓜]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.u0, &self.z0, &self.m_red])
    }

    /// Write `U0.csv`, `Z0.csv`, `Z1.csv` and `M.csv` into `dir`.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        for (name, m) in [("U0", &self.u0), ("Z0", &self.z0), ("Z1", &self.z1), ("M", &self.m_red)] {
            crate::io::write_atomic(&dir.join(format!("{name}.csv")), matrix_csv(m).as_bytes())?;
        }
        Ok(())
    }
}

/// One matrix row per line, 17 significant digits.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| crate::plant::fmt_f64(*v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn read_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::Config(format!("matrix line {}: {e}", ln + 1)))?);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config("ragged matrix CSV".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn assemble(
    ds: &Dataset,
    basis: &BasisLibrary,
    imodel: &InternalModel,
    spec: &SpectralSpec,
    mode: Mode,
) -> Result<DataMatrices> {
    let n = basis.n;
    let ne = imodel.n_eta();
    if ds.x.nrows() != n || ds.dx.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} states, basis expects {n}",
            ds.x.nrows()
        )));
    }
    if ds.eta.nrows() != ne || ds.e.nrows() != imodel.p() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} internal-model states and {} errors, model expects {ne} and {}",
            ds.eta.nrows(),
            ds.e.nrows(),
            imodel.p()
        )));
    }
    if mode == Mode::Linear && !basis.terms.is_empty() {
        return Err(Error::DimensionMismatch("linear mode requires an empty Q(x)".into()));
    }
    let t = ds.len();
    let z_rows = match mode {
        Mode::Nonlinear => basis.q() + ne,
        Mode::Linear => n + ne,
    };
    let mut z0 = DMatrix::zeros(z_rows, t);
    for i in 0..t {
        let x: Vec<f64> = ds.x.column(i).iter().copied().collect();
        let eta: Vec<f64> = ds.eta.column(i).iter().copied().collect();
        z0.set_column(i, &calz(basis, &x, &eta, mode));
    }
    let z1 = linalg::vstack(&[&ds.dx, &ds.eta_dot(imodel)]);
    let m_red = build_m(spec, &ds.times, true).values;
    Ok(DataMatrices { u0: ds.u.clone(), z0, z1, m_red, mode, n, n_eta: ne, times: ds.times.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    /// Rank of `[U₀; 𝓩₀; 𝓜]`.
    pub rank: usize,
    pub rows: usize,
    pub singular_values: Vec<f64>,
    pub full_row_rank: bool,
    /// Rank of `[𝓩₀; 𝓜]`, reported alongside.
    pub rank_z0_m: usize,
    pub rows_z0_m: usize,
    /// Rank after scaling each row block to unit max-abs (diagnostic).
    pub rank_scaled: usize,
}

fn scaled(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = linalg::max_abs(m);
    if s > 0.0 {
        m / s
    } else {
        m.clone()
    }
}

pub fn rank_report(dm: &DataMatrices) -> RankReport {
    let stacked = dm.stacked();
    let sv = linalg::singular_values(&stacked);
    let rank = linalg::rank(&stacked, RANK_REL_TOL);
    let zm = linalg::vstack(&[&dm.z0, &dm.m_red]);
    let rank_scaled = linalg::rank(
        &linalg::vstack(&[&scaled(&dm.u0), &scaled(&dm.z0), &scaled(&dm.m_red)]),
        RANK_REL_TOL,
    );
    RankReport {
        rank,
        rows: stacked.nrows(),
        singular_values: sv,
        full_row_rank: rank == stacked.nrows(),
        rank_z0_m: linalg::rank(&zm, RANK_REL_TOL),
        rows_z0_m: zm.nrows(),
        rank_scaled,
    }
}

/// Largest entry of `|𝓜 𝓖|`.
pub fn verify_annihilation(dm: &DataMatrices, g: &DMatrix<f64>) -> Result<f64> {
    if g.nrows() != dm.t() {
        return Err(Error::DimensionMismatch(format!("G has {} rows, T = {}", g.nrows(), dm.t())));
    }
    Ok(linalg::max_abs(&(&dm.m_red * g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exo::Exosystem;
    use crate::plant::{run_experiment, Excitation, ExperimentConfig, PlantModel};
    use nalgebra::DVector;

    fn integrator_data(t: usize) -> (DataMatrices, PlantModel, InternalModel) {
        let plant = PlantModel::new(
            BasisLibrary::linear(1),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, -1.0),
        )
        .unwrap();
        let spec = SpectralSpec::from_real(&[(0.0, 1)]).unwrap();
        let exo =
            Exosystem::new(DMatrix::zeros(1, 1), DVector::from_element(1, 1.0), Some(1.0), spec.clone())
                .unwrap();
        let im = InternalModel::harmonic(1, 0, 1.0, 1.0, [0.0, 1.0]).unwrap();
        let cfg = ExperimentConfig {
            samples: t,
            sample_period: 0.05,
            step: 0.01,
            excitation: Excitation { amplitude: 0.1, hold: None },
            seed: 11,
            x0: None,
            eta0: None,
        };
        let ds = run_experiment(&plant, &exo, &im, &cfg).unwrap();
        (assemble(&ds, &plant.basis, &im, &spec, Mode::Linear).unwrap(), plant, im)
    }

    #[test]
    fn integrator_shapes_and_m_row() {
        let (dm, _, _) = integrator_data(8);
        assert_eq!(dm.z0.shape(), (2, 8));
        assert_eq!(dm.z1.shape(), (2, 8));
        assert_eq!(dm.m_red.shape(), (1, 8));
        assert!(dm.m_red.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn data_identity_holds_exactly() {
        let (dm, plant, im) = integrator_data(12);
        let (a, b, p) = crate::plant::augmented_matrices(&plant, &im, Mode::Linear).unwrap();
        // W₀ is the constant 1 here
        let w0 = DMatrix::from_element(1, dm.t(), 1.0);
        let resid = &dm.z1 - (&a * &dm.z0 + &b * &dm.u0 + &p * w0);
        assert!(linalg::max_abs(&resid) < 1e-12);
    }

    #[test]
    fn rank_flags() {
        let (dm, _, _) = integrator_data(3);
        let r = rank_report(&dm);
        assert_eq!(r.rows, 4);
        assert!(!r.full_row_rank);
        let (dm, _, _) = integrator_data(20);
        let r = rank_report(&dm);
        assert!(r.full_row_rank, "{r:?}");
        let mut dup = dm.clone();
        let extra = |m: &DMatrix<f64>| linalg::hstack(&[m, &m.columns(0, 1).into_owned()]);
        dup.u0 = extra(&dm.u0);
        dup.z0 = extra(&dm.z0);
        dup.z1 = extra(&dm.z1);
        dup.m_red = extra(&dm.m_red);
        assert_eq!(rank_report(&dup).rank, r.rank);
    }

    #[test]
    fn annihilation_residuals() {
        let (dm, _, _) = integrator_data(10);
        assert_eq!(verify_annihilation(&dm, &DMatrix::zeros(10, 2)).unwrap(), 0.0);
        let g = DMatrix::from_element(10, 1, 1.0 / 10f64.sqrt());
        assert!(verify_annihilation(&dm, &g).unwrap() > 1e-3);
        assert!(verify_annihilation(&dm, &DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn matrix_csv_roundtrip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 1e-17, 3.0, 0.1, 7.0]);
        assert_eq!(read_matrix_csv(&matrix_csv(&m)).unwrap(), m);
    }
}
