//! Closed-loop evaluation and ℓ-sweeps: collect → synthesize → simulate →
//! steady-state Fourier analysis.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamat::{self, DataMatrices};
use crate::error::{Error, Result};
use crate::exo::Exosystem;
use crate::fourier::{self, FourierSpectrum};
use crate::imodel::{InternalModel, InternalModelKind};
use crate::linalg;
use crate::plant::{self, Dataset, ExperimentConfig, Mode, PlantModel, SimOptions};
use crate::synth::{self, SynthOptions, SynthesisResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Simulation horizon in periods of the exosystem.
    #[serde(default = "default_periods")]
    pub periods: usize,
    /// Nominal RK4 step; shrunk so that it divides the period and resolves
    /// the fastest closed-loop mode.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Slowly contracting loops are simulated further, in chunks of
    /// `periods`, until settled or this many periods have elapsed.
    #[serde(default = "default_max_periods")]
    pub max_periods: usize,
    /// Initial `(x, η)` drawn uniformly in `[−w, w]`.
    #[serde(default = "default_ic")]
    pub ic_half_width: f64,
    /// Period-to-period relative sup-difference accepted as settled.
    #[serde(default = "default_settle")]
    pub settle_tol: f64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Highest harmonic reported in the spectrum, beyond those nulled.
    #[serde(default = "default_extra_harmonics")]
    pub extra_harmonics: usize,
}

fn default_periods() -> usize {
    40
}
fn default_max_periods() -> usize {
    400
}
fn default_step() -> f64 {
    1e-3
}
fn default_ic() -> f64 {
    1.0
}
fn default_settle() -> f64 {
    1e-6
}
fn default_seeds() -> usize {
    5
}
fn default_extra_harmonics() -> usize {
    6
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            periods: default_periods(),
            step: default_step(),
            max_periods: default_max_periods(),
            ic_half_width: default_ic(),
            settle_tol: default_settle(),
            seeds: default_seeds(),
            extra_harmonics: default_extra_harmonics(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Per channel, `max |e|` over the last period.
    pub limsup_e: Vec<f64>,
    /// Per channel, `(1/D)∫e*²`.
    pub l2_mean_square: Vec<f64>,
    /// Per channel, `max |ė*|`.
    pub e_dot_max: Vec<f64>,
    /// Per channel, `ē*² / ((2π/D)²(ℓ+1)²)`.
    pub bound_value: Vec<f64>,
    pub spectrum: Vec<FourierSpectrum>,
    /// Number of harmonics the internal model nulls (`ℓ`).
    pub nulled_harmonics: usize,
    pub nulling_ok: bool,
    /// Largest nulled coefficient relative to the tolerance in use.
    pub nulling_max_coeff: f64,
    pub nulling_tol: f64,
    pub contraction_margin: Option<f64>,
    pub settled: bool,
    pub settle_residual: f64,
    pub step: f64,
    pub seed: u64,
}

impl EvaluationReport {
    pub fn max_limsup(&self) -> f64 {
        self.limsup_e.iter().fold(0.0, |m: f64, v| m.max(*v))
    }

    /// Mean-square never exceeds the bound, channel by channel. Errors at
    /// the absolute nulling floor count as exact regulation.
    pub fn bound_holds(&self) -> bool {
        let floor = NULLING_ABS_FLOOR * NULLING_ABS_FLOOR;
        self.l2_mean_square.iter().zip(&self.bound_value).all(|(ms, b)| *ms <= b + floor)
    }
}

/// Harmonic index of every mode of `S`, as multiples of `2π/D`.
fn exo_harmonics(exo: &Exosystem, period: f64) -> usize {
    exo.spec()
        .complex_modes()
        .iter()
        .map(|m| (m.psi * period / (2.0 * PI)).round() as usize)
        .max()
        .unwrap_or(0)
}

/// Absolute tolerance used once `max |e*|` drops below `1e-4`.
pub const NULLING_ABS_FLOOR: f64 = 1e-6;

/// Tolerance for "coefficient is zero": relative to `max|e*|`, with an
/// absolute floor once the error itself is tiny.
pub fn nulling_tolerance(max_e: f64) -> f64 {
    if max_e < 1e-4 {
        (1e-3 * max_e).max(NULLING_ABS_FLOOR)
    } else {
        1e-3 * max_e
    }
}

/// Step no larger than `nominal`, resolving the fastest mode of `a_cl`, and
/// dividing `period` evenly.
pub fn choose_step(nominal: f64, period: f64, a_cl: Option<&DMatrix<f64>>) -> f64 {
    let mut h = nominal;
    if let Some(a) = a_cl {
        let rho = linalg::eigenvalues(a).iter().fold(0.0_f64, |m, (re, im)| m.max(re.hypot(*im)));
        // RK4 is stable to |hλ| ≈ 2.8; stay well inside for accuracy
        if rho > 0.0 {
            h = h.min(0.5 / rho);
        }
    }
    period / (period / h).ceil()
}

/// Relative sup-difference of `(x, η)` between the last two recorded periods.
fn period_difference(traj: &plant::Trajectory, start_last: usize, per: usize) -> f64 {
    let start_prev = start_last - per;
    let mut diff = 0.0_f64;
    let mut scale = 0.0_f64;
    for m in [&traj.x, &traj.eta] {
        for j in 0..=per {
            for r in 0..m.nrows() {
                let a = m[(r, start_last + j)];
                diff = diff.max((a - m[(r, start_prev + j)]).abs());
                scale = scale.max(a.abs());
            }
        }
    }
    diff / scale.max(f64::MIN_POSITIVE)
}

/// Simulate the closed loop and analyse its last period.
pub fn evaluate(
    plant: &PlantModel,
    exo: &Exosystem,
    imodel: &InternalModel,
    k: &DMatrix<f64>,
    cfg: &EvalConfig,
    seed: u64,
    a_cl_hint: Option<&DMatrix<f64>>,
) -> Result<EvaluationReport> {
    let period = exo
        .period()
        .ok_or_else(|| Error::InvalidParams("evaluation needs a periodic exosystem".into()))?;
    if cfg.periods < 2 {
        return Err(Error::InvalidParams("need at least two periods to check settling".into()));
    }
    let h = choose_step(cfg.step, period, a_cl_hint);
    let per = (period / h).round() as usize;
    let (n, ne) = (plant.n(), imodel.n_eta());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wdt = cfg.ic_half_width;
    let mut draw = |k: usize| DVector::from_fn(k, |_, _| if wdt > 0.0 { rng.random_range(-wdt..=wdt) } else { 0.0 });
    let x0 = draw(n);
    let eta0 = draw(ne);
    let opts = SimOptions {
        horizon: cfg.periods as f64 * period,
        step: h,
        record_every: 1,
        record_from: (cfg.periods - 2) as f64 * period,
    };
    // each chunk spans whole periods, so w is back at w0 when it restarts
    let (mut x, mut eta) = (x0, eta0);
    let mut elapsed = 0;
    let (traj, start_last, settle_residual) = loop {
        let traj = plant::simulate_closed_loop(plant, exo, imodel, k, &x, &eta, &opts)?;
        elapsed += cfg.periods;
        // columns: [prev period (per), last period (per), endpoint]
        let cols = traj.t.len();
        if cols < 2 * per + 1 {
            return Err(Error::NumericalFailure("trajectory shorter than two periods".into()));
        }
        let start_last = cols - 1 - per;
        let residual = period_difference(&traj, start_last, per);
        if residual <= cfg.settle_tol {
            break (traj, start_last, residual);
        }
        if !residual.is_finite() || elapsed + cfg.periods > cfg.max_periods.max(cfg.periods) {
            return Err(Error::NotSettled { residual, threshold: cfg.settle_tol });
        }
        let y = traj.final_state();
        x = y.rows(0, n).into_owned();
        eta = y.rows(n, ne).into_owned();
    };

    let ell = imodel.ell().unwrap_or_else(|| exo_harmonics(exo, period));
    let k_max = (ell + cfg.extra_harmonics).min((per - 4) / 4);
    let p = plant.p_err();
    let mut rep = EvaluationReport {
        limsup_e: Vec::with_capacity(p),
        l2_mean_square: Vec::with_capacity(p),
        e_dot_max: Vec::with_capacity(p),
        bound_value: Vec::with_capacity(p),
        spectrum: Vec::with_capacity(p),
        nulled_harmonics: ell,
        nulling_ok: true,
        nulling_max_coeff: 0.0,
        nulling_tol: 0.0,
        contraction_margin: None,
        settled: true,
        settle_residual,
        step: h,
        seed,
    };
    for ch in 0..p {
        let e: Vec<f64> = (0..per).map(|j| traj.e[(ch, start_last + j)]).collect();
        let edot_max = (0..=per).fold(0.0_f64, |m, j| m.max(traj.e_dot[(ch, start_last + j)].abs()));
        let limsup = (0..=per).fold(0.0_f64, |m, j| m.max(traj.e[(ch, start_last + j)].abs()));
        let spec = fourier::coefficients(&e, period, k_max)?;
        let tol = nulling_tolerance(limsup);
        let null = fourier::nulling_check(&spec, ell, tol)?;
        rep.nulling_ok &= null.ok;
        if null.max_coeff / tol >= rep.nulling_max_coeff / rep.nulling_tol.max(f64::MIN_POSITIVE) {
            rep.nulling_max_coeff = null.max_coeff;
            rep.nulling_tol = tol;
        }
        rep.limsup_e.push(limsup);
        rep.l2_mean_square.push(fourier::mean_square(&e));
        rep.e_dot_max.push(edot_max);
        rep.bound_value.push(fourier::l2_bound(edot_max, period, ell));
        rep.spectrum.push(spec);
    }
    Ok(rep)
}

/// Everything needed to run collect → synthesize → evaluate for one ℓ.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: PlantModel,
    pub exo: Exosystem,
    pub imodel: InternalModelKind,
    pub experiment: ExperimentConfig,
    pub synth: SynthOptions,
    pub eval: EvalConfig,
    pub mode: Mode,
}

impl Scenario {
    pub fn internal_model(&self) -> Result<InternalModel> {
        InternalModel::from_kind(self.plant.p_err(), &self.imodel)
    }

    /// Copy with the harmonic count replaced (harmonic internal models only).
    pub fn with_ell(&self, ell: usize) -> Result<Self> {
        let mut s = self.clone();
        match &mut s.imodel {
            InternalModelKind::Harmonic { ell: l, .. } => *l = ell,
            InternalModelKind::Companion { .. } => {
                return Err(Error::Config("ℓ override needs a harmonic internal model".into()))
            }
        }
        Ok(s)
    }
}

/// Outcome of one pipeline run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dataset: Dataset,
    pub data: DataMatrices,
    pub synthesis: SynthesisResult,
    pub report: EvaluationReport,
}

pub fn collect(scn: &Scenario, seed: u64) -> Result<(Dataset, DataMatrices)> {
    let im = scn.internal_model()?;
    let mut exp = scn.experiment.clone();
    exp.seed = seed;
    let ds = plant::run_experiment(&scn.plant, &scn.exo, &im, &exp)?;
    let dm = datamat::assemble(&ds, &scn.plant.basis, &im, scn.exo.spec(), scn.mode)?;
    Ok((ds, dm))
}

/// Collect with `seed`, synthesize, evaluate from an initial state drawn with
/// a seed derived from the same value.
pub fn run_once(scn: &Scenario, seed: u64) -> Result<RunOutcome> {
    let im = scn.internal_model()?;
    let (dataset, data) = collect(scn, seed)?;
    let synthesis = synth::synthesize(&data, &scn.synth)?;
    let a_cl = synthesis.jacobian_at(&data, &scn.plant.basis, &vec![0.0; scn.plant.n()]);
    let mut report =
        evaluate(&scn.plant, &scn.exo, &im, &synthesis.k, &scn.eval, derive_seed(seed, u64::MAX, 0), Some(&a_cl))?;
    report.contraction_margin =
        Some(synth::contractivity_margin(&synthesis, &data, &scn.plant.basis, &scn.synth.margin_grid)?);
    Ok(RunOutcome { dataset, data, synthesis, report })
}

/// Independent stream per `(row, replicate)`.
pub fn derive_seed(base: u64, row: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(row.wrapping_mul(0x9E37_79B9).wrapping_add(rep));
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub status: String,
    pub limsup_e: Option<f64>,
    pub l2_mean_square: Option<f64>,
    pub bound_value: Option<f64>,
    pub nulling_ok: Option<bool>,
    pub bound_ok: Option<bool>,
    pub contraction_margin: Option<f64>,
    pub certificate_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ell: usize,
    /// Median over the successful seeds; `None` if all failed.
    pub limsup_e: Option<f64>,
    pub l2_mean_square: Option<f64>,
    pub bound_value: Option<f64>,
    pub runs: Vec<SeedResult>,
}

impl SweepRow {
    pub fn status(&self) -> String {
        let ok = self.runs.iter().filter(|r| r.status == "ok").count();
        format!("{ok}/{} ok", self.runs.len())
    }
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn seed_result(seed: u64, r: Result<RunOutcome>) -> SeedResult {
    match r {
        Ok(o) => SeedResult {
            seed,
            status: "ok".into(),
            limsup_e: Some(o.report.max_limsup()),
            l2_mean_square: o.report.l2_mean_square.iter().cloned().reduce(f64::max),
            bound_value: o.report.bound_value.iter().cloned().reduce(f64::max),
            nulling_ok: Some(o.report.nulling_ok),
            bound_ok: Some(o.report.bound_holds()),
            contraction_margin: o.report.contraction_margin,
            certificate_ok: Some(o.synthesis.residuals.passes()),
        },
        Err(e) => SeedResult {
            seed,
            status: e.to_string(),
            limsup_e: None,
            l2_mean_square: None,
            bound_value: None,
            nulling_ok: None,
            bound_ok: None,
            contraction_margin: None,
            certificate_ok: None,
        },
    }
}

/// One row per entry of `ells`, each with `scn.eval.seeds` fresh datasets.
/// Failures are recorded in the row instead of aborting the sweep.
pub fn sweep_ell(scn: &Scenario, ells: &[usize], base_seed: u64, jobs: usize) -> Vec<SweepRow> {
    let tasks: Vec<(usize, usize, u64)> = ells
        .iter()
        .enumerate()
        .flat_map(|(row, _)| {
            (0..scn.eval.seeds.max(1)).map(move |rep| (row, rep, derive_seed(base_seed, row as u64, rep as u64)))
        })
        .collect();
    let run = |&(row, _, seed): &(usize, usize, u64)| {
        let r = scn.with_ell(ells[row]).and_then(|s| run_once(&s, seed));
        (row, seed_result(seed, r))
    };
    let results: Vec<(usize, SeedResult)> = if jobs == 1 {
        tasks.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build();
        match pool {
            Ok(p) => p.install(|| tasks.par_iter().map(run).collect()),
            Err(_) => tasks.iter().map(run).collect(),
        }
    };
    ells.iter()
        .enumerate()
        .map(|(row, &ell)| {
            let runs: Vec<SeedResult> =
                results.iter().filter(|(r, _)| *r == row).map(|(_, s)| s.clone()).collect();
            let med = |f: fn(&SeedResult) -> Option<f64>| {
                let mut v: Vec<f64> = runs.iter().filter_map(f).collect();
                median(&mut v)
            };
            SweepRow {
                ell,
                limsup_e: med(|r| r.limsup_e),
                l2_mean_square: med(|r| r.l2_mean_square),
                bound_value: med(|r| r.bound_value),
                runs,
            }
        })
        .collect()
}

/// `ell,limsup_e,l2_mean_square,bound,status` per row.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6e}"));
    let mut s = String::from("ell,limsup_e,l2_mean_square,bound,status\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.ell,
            fmt(r.limsup_e),
            fmt(r.l2_mean_square),
            fmt(r.bound_value),
            r.status()
        ));
    }
    s
}
