//! TOML run configuration: the system, internal model, experiment,
//! synthesis, evaluation and acceptance settings for one scenario.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalrep::{EvalConfig, Scenario};
use crate::exo::{Exosystem, SpectralSpec};
use crate::imodel::InternalModelKind;
use crate::plant::{integer_ratio, BasisLibrary, BasisTerm, ExperimentConfig, Mode, PlantModel};
use crate::synth::SynthOptions;

pub const ROBOT_ARM_TOML: &str = include_str!("../configs/robot_arm.toml");
pub const ROLLING_MILL_TOML: &str = include_str!("../configs/rolling_mill.toml");

/// One-link flexible-joint robot arm; the state is
/// `(link angle, link rate, shaft angle, shaft rate)` and `Q(x) = cos x₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotArm {
    pub k_c: f64,
    pub f2: f64,
    pub j2: f64,
    pub n_c: f64,
    pub f1: f64,
    pub j1: f64,
    pub m: f64,
    pub g: f64,
    pub d: f64,
}

impl RobotArm {
    /// Plant and exosystem with `w = (1, sin t, cos t, sin 2t, cos 2t)`,
    /// reference `r = cos t` and disturbance
    /// `d = (0.2, sin t, cos 2t, 0.5 + 3 sin(t + π/3))`.
    pub fn build(&self) -> Result<(PlantModel, Exosystem)> {
        let basis = BasisLibrary::new(4, vec![BasisTerm::Cos(0)])?;
        let (kc, nc) = (self.k_c, self.n_c);
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(4, 5, &[
            0.0, 1.0, 0.0, 0.0, 0.0,
            -kc / self.j2, -self.f2 / self.j2, kc / (self.j2 * nc), 0.0, -self.m * self.g * self.d / self.j2,
            0.0, 0.0, 0.0, 1.0, 0.0,
            -kc / (self.j1 * nc), 0.0, kc / (self.j1 * nc * nc), -self.f1 / self.j1, 0.0,
        ]);
        let b = DMatrix::from_row_slice(4, 1, &[0.0, 0.0, 0.0, 1.0 / self.j1]);
        #[rustfmt::skip]
        let p = DMatrix::from_row_slice(4, 5, &[
            0.2, 0.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 1.0,
            0.5, 1.5, 1.5 * 3f64.sqrt(), 0.0, 0.0,
        ]);
        let c_e = DMatrix::from_row_slice(1, 5, &[1.0, 0.0, 0.0, 0.0, 0.0]);
        // e = x₁ − r with r = w₃
        let q_e = DMatrix::from_row_slice(1, 5, &[0.0, 0.0, -1.0, 0.0, 0.0]);
        let plant = PlantModel::new(basis, a, b, p, c_e, q_e)?;
        #[rustfmt::skip]
        let s = DMatrix::from_row_slice(5, 5, &[
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0, 0.0,
            0.0, -1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 2.0,
            0.0, 0.0, 0.0, -2.0, 0.0,
        ]);
        let spec = SpectralSpec::from_matrix(&s, 1e-8)?;
        let w0 = DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0, 1.0]);
        let exo = Exosystem::new(s, w0, Some(2.0 * std::f64::consts::PI), spec)?;
        Ok((plant, exo))
    }
}

/// Rolling-mill thickness loop: `ẋ₁ = x₂`, `ẋ₂ = b u`, exit thickness
/// `h = (E x₁ + F H + E sin σt)/(E + F)`, error `e = h − h_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollingMill {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub h_r: f64,
    pub sigma: f64,
    pub b: f64,
}

impl RollingMill {
    /// `w = (h_r, F H, sin σt, cos σt)`.
    pub fn build(&self) -> Result<(PlantModel, Exosystem)> {
        let ef = self.e + self.f;
        if ef == 0.0 || !(self.sigma > 0.0) {
            return Err(Error::Config("rolling mill needs E + F ≠ 0 and sigma > 0".into()));
        }
        let plant = PlantModel::new(
            BasisLibrary::linear(2),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, self.b]),
            DMatrix::zeros(2, 4),
            DMatrix::from_row_slice(1, 2, &[self.e / ef, 0.0]),
            DMatrix::from_row_slice(1, 4, &[-1.0, 1.0 / ef, self.e / ef, 0.0]),
        )?;
        let sg = self.sigma;
        #[rustfmt::skip]
        let s = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, sg,
            0.0, 0.0, -sg, 0.0,
        ]);
        let spec = SpectralSpec::from_matrix(&s, 1e-8)?;
        let w0 = DVector::from_vec(vec![self.h_r, self.f * self.h, 0.0, 1.0]);
        let exo = Exosystem::new(s, w0, Some(2.0 * std::f64::consts::PI / sg), spec)?;
        Ok((plant, exo))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExoConfig {
    #[serde(with = "crate::matser")]
    pub s: DMatrix<f64>,
    pub w0: Vec<f64>,
    #[serde(default)]
    pub period: Option<f64>,
    pub spectrum: SpectralSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    RobotArm(RobotArm),
    RollingMill(RollingMill),
    Custom { plant: PlantModel, exosystem: ExoConfig },
}

impl SystemSpec {
    pub fn build(&self) -> Result<(PlantModel, Exosystem)> {
        match self {
            SystemSpec::RobotArm(r) => r.build(),
            SystemSpec::RollingMill(r) => r.build(),
            SystemSpec::Custom { plant, exosystem } => {
                plant.validate()?;
                let exo = Exosystem::new(
                    exosystem.s.clone(),
                    DVector::from_vec(exosystem.w0.clone()),
                    exosystem.period,
                    exosystem.spectrum.clone(),
                )?;
                Ok((plant.clone(), exo))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub ells: Vec<usize>,
    /// Pass threshold on the median `max|e|` for each entry of `ells`.
    pub limsup_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceConfig {
    #[serde(default)]
    pub limsup_max: Option<f64>,
    #[serde(default)]
    pub sylvester_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub system: SystemSpec,
    pub internal_model: InternalModelKind,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub synthesis: SynthOptions,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub acceptance: AcceptanceConfig,
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) | Error::Io(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked before running anything.
    pub fn validate(&self) -> Result<()> {
        let (plant, exo) = self.system.build().map_err(as_config)?;
        exo.jordan_basis().map_err(as_config)?;
        let im = crate::imodel::InternalModel::from_kind(plant.p_err(), &self.internal_model)
            .map_err(as_config)?;
        if let InternalModelKind::Companion { min_poly } = &self.internal_model {
            let expect = exo.spec().minimal_poly_coeffs();
            let close = expect.len() == min_poly.len()
                && expect.iter().zip(min_poly).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0));
            if !close {
                return Err(Error::Config(format!(
                    "internal_model.min_poly {min_poly:?} does not match the minimal polynomial of S {expect:?}"
                )));
            }
        }
        let e = &self.experiment;
        if e.samples == 0 {
            return Err(Error::Config("experiment.samples must be at least 1".into()));
        }
        if !(e.step > 0.0) || integer_ratio(e.sample_period, e.step).is_none() {
            return Err(Error::Config(format!(
                "experiment.sample_period = {} is not an integer multiple of experiment.step = {}",
                e.sample_period, e.step
            )));
        }
        let hold = e.excitation.hold.unwrap_or(e.sample_period);
        if integer_ratio(hold, e.step).is_none() {
            return Err(Error::Config(format!(
                "experiment.excitation.hold = {hold} is not an integer multiple of experiment.step"
            )));
        }
        if e.x0.as_ref().is_some_and(|x| x.len() != plant.n()) {
            return Err(Error::Config(format!("experiment.x0 must have {} entries", plant.n())));
        }
        if e.eta0.as_ref().is_some_and(|x| x.len() != im.n_eta()) {
            return Err(Error::Config(format!("experiment.eta0 must have {} entries", im.n_eta())));
        }
        match self.mode {
            Mode::Linear if !plant.basis.terms.is_empty() => {
                return Err(Error::Config("mode = \"linear\" needs a plant without Q(x) terms".into()))
            }
            Mode::Nonlinear if !plant.basis.terms.is_empty() => match &self.synthesis.r_q {
                Some(r) if r.nrows() == plant.n() => {}
                Some(r) => {
                    return Err(Error::Config(format!(
                        "synthesis.r_q has {} rows, expected n = {}",
                        r.nrows(),
                        plant.n()
                    )))
                }
                None => return Err(Error::Config("nonlinear mode needs synthesis.r_q".into())),
            },
            _ => {}
        }
        if let Some(sw) = &self.sweep {
            if sw.ells.len() != sw.limsup_max.len() {
                return Err(Error::Config("sweep.ells and sweep.limsup_max differ in length".into()));
            }
            if !matches!(self.internal_model, InternalModelKind::Harmonic { .. }) {
                return Err(Error::Config("a sweep needs a harmonic internal model".into()));
            }
        }
        if exo.period().is_none() {
            return Err(Error::Config("evaluation needs an exosystem period".into()));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let (plant, exo) = self.system.build()?;
        Ok(Scenario {
            plant,
            exo,
            imodel: self.internal_model.clone(),
            experiment: self.experiment.clone(),
            synth: self.synthesis.clone(),
            eval: self.evaluation.clone(),
            mode: self.mode,
        })
    }

    /// Bundled configuration by example name.
    pub fn bundled(name: &str) -> Result<Self> {
        match name {
            "robot-arm" | "robot_arm" => Self::from_toml(ROBOT_ARM_TOML),
            "rolling-mill" | "rolling_mill" => Self::from_toml(ROLLING_MILL_TOML),
            other => Err(Error::Config(format!(
                "unknown example `{other}` (expected robot-arm or rolling-mill)"
            ))),
        }
    }
}

/// Hex SHA-256 of the given bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_roundtrip() {
        for name in ["robot-arm", "rolling-mill"] {
            let cfg = RunConfig::bundled(name).unwrap();
            let text = cfg.to_toml().unwrap();
            let back = RunConfig::from_toml(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn robot_arm_coefficients() {
        let cfg = RunConfig::bundled("robot-arm").unwrap();
        let (plant, exo) = cfg.system.build().unwrap();
        assert_eq!(plant.q(), 5);
        assert!((plant.a[(1, 0)] + 2.0).abs() < 1e-15);
        assert!((plant.a[(1, 1)] + 0.75).abs() < 1e-15);
        assert!((plant.a[(1, 2)] - 1.0).abs() < 1e-15);
        assert!((plant.a[(1, 4)] + 1.96).abs() < 1e-12);
        assert!((plant.a[(3, 0)] + 4.0 / 3.0).abs() < 1e-12);
        assert!((plant.a[(3, 2)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((plant.a[(3, 3)] + 2.0 / 3.0).abs() < 1e-12);
        assert!((plant.b[(3, 0)] - 1.0 / 0.15).abs() < 1e-12);
        assert_eq!(exo.minimal_poly_degree(), 5);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = ROLLING_MILL_TOML.replace("[experiment]", "[experiment]\nbogus = 1");
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line"), "{err}");
    }

    #[test]
    fn sample_period_must_divide_step() {
        let text = ROLLING_MILL_TOML.replace("sample_period = 0.05", "sample_period = 0.0505");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn companion_must_match_exosystem() {
        let text = ROLLING_MILL_TOML.replace("min_poly = [0.0, 1.0, 0.0]", "min_poly = [0.0, 2.0, 0.0]");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
