//! Command-line front end: `collect`, `synthesize`, `evaluate`, `reproduce`.
//!
//! Every artifact is written atomically under the output directory next to a
//! `*.meta.json` sidecar holding the seed and the SHA-256 of the effective
//! configuration (after command-line overrides).

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{sha256_hex, RunConfig};
use crate::datamat::{self, DataMatrices};
use crate::error::{Error, Result};
use crate::evalrep::{self, EvaluationReport, Scenario};
use crate::imodel::{InternalModel, InternalModelKind};
use crate::io::write_atomic;
use crate::linalg;
use crate::plant::{self, Dataset, Mode};
use crate::synth::{self, SynthesisResult};

/// Set while the JSON summary owns stdout; human-readable lines move to stderr.
static HUMAN_TO_STDERR: AtomicBool = AtomicBool::new(false);

macro_rules! say {
    ($($t:tt)*) => {
        if HUMAN_TO_STDERR.load(Ordering::Relaxed) {
            eprintln!($($t)*)
        } else {
            println!($($t)*)
        }
    };
}

/// Exit status when every command step ran but an acceptance check failed.
pub const EXIT_ACCEPTANCE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "ddreg", version, about = "Output-regulation controllers synthesized from experimental data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out` in the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Experiment seed; overrides `experiment.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Harmonic count of the internal model; restricts a sweep to this row.
    #[arg(long)]
    pub ell: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Worker threads for sweeps; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Also write a machine-readable summary here (`-` for stdout).
    #[arg(long)]
    pub json_report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Nonlinear,
    Linear,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nonlinear => Mode::Nonlinear,
            ModeArg::Linear => Mode::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Example {
    RobotArm,
    RollingMill,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the excitation experiment and write the dataset and data matrices.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the synthesis SDP on a collected dataset and write the gain.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; defaults to `<out>/dataset.csv`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Simulate the closed loop under a gain and analyse its steady state.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Gain CSV; defaults to `<out>/gain.csv`.
        #[arg(long)]
        gain: Option<PathBuf>,
    },
    /// Full pipeline on a bundled example (or `--config`) with pass/fail
    /// verdicts against its acceptance thresholds.
    Reproduce {
        #[arg(value_enum)]
        example: Option<Example>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Collect { common }
            | Command::Synthesize { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Reproduce { common, .. } => common,
        }
    }
}

/// One acceptance verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

/// Parse arguments, run, print errors; returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    run(&cli.command)
}

pub fn run(cmd: &Command) -> i32 {
    let common = cmd.common();
    HUMAN_TO_STDERR.store(common.json_report.as_deref() == Some(Path::new("-")), Ordering::Relaxed);
    let (code, summary) = match dispatch(cmd) {
        Ok((code, summary)) => (code, summary),
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            (code, json!({ "status": "error", "message": e.to_string() }))
        }
    };
    if let Some(path) = &common.json_report {
        let mut summary = summary;
        summary["exit_code"] = json!(code);
        if let Err(e) = emit_json(path, &summary) {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    }
    code
}

fn dispatch(cmd: &Command) -> Result<(i32, Value)> {
    match cmd {
        Command::Collect { common } => {
            let (cfg, out) = resolve(common, None)?;
            cmd_collect(&cfg, &out).map(|v| (0, v))
        }
        Command::Synthesize { common, dataset } => {
            let (cfg, out) = resolve(common, None)?;
            let ds = dataset.clone().unwrap_or_else(|| out.join("dataset.csv"));
            cmd_synthesize(&cfg, &ds, &out).map(|v| (0, v))
        }
        Command::Evaluate { common, gain } => {
            let (cfg, out) = resolve(common, None)?;
            let g = gain.clone().unwrap_or_else(|| out.join("gain.csv"));
            cmd_evaluate(&cfg, &g, &out).map(|v| (0, v))
        }
        Command::Reproduce { example, common } => {
            let (cfg, out) = resolve(common, *example)?;
            let (checks, mut summary) = cmd_reproduce(&cfg, &out, common.ell, jobs(common.jobs))?;
            for c in &checks {
                say!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let ok = checks.iter().all(|c| c.pass);
            summary["checks"] = json!(checks);
            summary["status"] = json!(if ok { "pass" } else { "fail" });
            Ok((if ok { 0 } else { EXIT_ACCEPTANCE }, summary))
        }
    }
}

fn jobs(requested: usize) -> usize {
    if requested > 0 {
        requested
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

/// Load the configuration, apply command-line overrides, revalidate.
pub fn resolve(common: &Common, example: Option<Example>) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match (&common.config, example) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("give either an example name or --config, not both".into()))
        }
        (Some(p), None) => RunConfig::load(p)?,
        (None, Some(Example::RobotArm)) => RunConfig::bundled("robot-arm")?,
        (None, Some(Example::RollingMill)) => RunConfig::bundled("rolling-mill")?,
        (None, None) => return Err(Error::Config("--config is required".into())),
    };
    if let Some(s) = common.seed {
        cfg.experiment.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.mode = m.into();
    }
    if let Some(l) = common.ell {
        match &mut cfg.internal_model {
            InternalModelKind::Harmonic { ell, .. } => *ell = l,
            InternalModelKind::Companion { .. } => {
                return Err(Error::Config("--ell needs a harmonic internal model".into()))
            }
        }
    }
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    Ok((cfg, out))
}

fn emit_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))? + "\n";
    if path.as_os_str() == "-" {
        print!("{text}");
        Ok(())
    } else {
        write_atomic(path, text.as_bytes())
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))? + "\n";
    write_atomic(path, text.as_bytes())
}

/// `<artifact>.meta.json` next to `artifact`.
fn write_sidecar(artifact: &Path, cfg: &RunConfig, extra: Value) -> Result<()> {
    let name = artifact.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut meta = json!({
        "artifact": name,
        "config_name": cfg.name,
        "config_sha256": config_hash(cfg)?,
        "seed": cfg.experiment.seed,
        "mode": cfg.mode,
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
        m.extend(e);
    }
    let stem = name.rsplit_once('.').map_or(name.as_str(), |(s, _)| s).to_string();
    write_json(&artifact.with_file_name(format!("{stem}.meta.json")), &meta)
}

/// SHA-256 of the canonical serialization of the effective configuration.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    Ok(sha256_hex(cfg.to_toml()?.as_bytes()))
}

fn cmd_collect(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let scn = cfg.scenario()?;
    let (ds, dm) = evalrep::collect(&scn, cfg.experiment.seed)?;
    let path = out.join("dataset.csv");
    ds.save_csv(&path)?;
    dm.export_csv(&out.join("matrices"))?;
    let rank = datamat::rank_report(&dm);
    write_json(&out.join("rank.json"), &rank)?;
    write_sidecar(&path, cfg, json!({ "samples": ds.len() }))?;
    say!(
        "collected {} samples -> {}; stacked data matrix rank {}/{}",
        ds.len(),
        path.display(),
        rank.rank,
        rank.rows
    );
    Ok(json!({ "command": "collect", "status": "ok", "dataset": path, "samples": ds.len(), "rank": rank }))
}

fn load_dataset(cfg: &RunConfig, scn: &Scenario, im: &InternalModel, path: &Path) -> Result<DataMatrices> {
    let ds = Dataset::load_csv(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    })?;
    let (n, m, p) = (scn.plant.n(), scn.plant.m(), scn.plant.p_err());
    let dims = [("x", ds.x.nrows(), n), ("u", ds.u.nrows(), m), ("e", ds.e.nrows(), p), ("eta", ds.eta.nrows(), im.n_eta())];
    for (name, got, want) in dims {
        if got != want {
            return Err(Error::DimensionMismatch(format!(
                "{}: dataset has {got} `{name}` channels, configuration implies {want}",
                path.display()
            )));
        }
    }
    datamat::assemble(&ds, &scn.plant.basis, im, scn.exo.spec(), cfg.mode)
}

fn cmd_synthesize(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<Value> {
    let scn = cfg.scenario()?;
    let im = scn.internal_model()?;
    let dm = load_dataset(cfg, &scn, &im, dataset)?;
    let rank = datamat::rank_report(&dm);
    if !rank.full_row_rank {
        eprintln!("warning: stacked data matrix has rank {} < {} rows", rank.rank, rank.rows);
    }
    let res = synth::synthesize(&dm, &cfg.synthesis)?;
    let margin = synth::contractivity_margin(&res, &dm, &scn.plant.basis, &cfg.synthesis.margin_grid)?;
    let gain = out.join("gain.csv");
    write_atomic(&gain, datamat::matrix_csv(&res.k).as_bytes())?;
    write_sidecar(&gain, cfg, json!({ "dataset": dataset }))?;
    let report = json!({
        "command": "synthesize",
        "status": "ok",
        "gain": gain,
        "result": res,
        "contraction_margin": margin,
        "rank": rank,
    });
    write_json(&out.join("synthesis.json"), &report)?;
    say!(
        "{}: {} in {} iterations; residuals ok = {}; sampled contraction margin {margin:.4e}",
        cfg.name,
        res.solver_status,
        res.iterations,
        res.residuals.passes()
    );
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }
    for (i, row) in res.k.row_iter().enumerate() {
        let v: Vec<String> = row.iter().map(|x| format!("{x:.6}")).collect();
        say!("K[{}] = [{}]", i + 1, v.join(", "));
    }
    Ok(report)
}

/// Ground-truth closed-loop Jacobian in `(x, η)` at plant state `x` under gain `k`.
pub fn true_jacobian(scn: &Scenario, im: &InternalModel, k: &DMatrix<f64>, x: &[f64]) -> Result<DMatrix<f64>> {
    let (a, b, _) = plant::augmented_matrices(&scn.plant, im, scn.mode)?;
    if k.shape() != (b.ncols(), a.ncols()) {
        return Err(Error::DimensionMismatch(format!(
            "gain is {}x{}, expected {}x{} in {:?} mode",
            k.nrows(),
            k.ncols(),
            b.ncols(),
            a.ncols(),
            scn.mode
        )));
    }
    Ok((a + b * k) * plant::calz_jacobian(&scn.plant.basis, x, im.n_eta(), scn.mode))
}

fn max_real_part(a: &DMatrix<f64>) -> f64 {
    linalg::eigenvalues(a).iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max)
}

fn cmd_evaluate(cfg: &RunConfig, gain: &Path, out: &Path) -> Result<Value> {
    let scn = cfg.scenario()?;
    let im = scn.internal_model()?;
    let text = std::fs::read_to_string(gain).map_err(|e| Error::Config(format!("{}: {e}", gain.display())))?;
    let k = datamat::read_matrix_csv(&text)?;
    let hint = true_jacobian(&scn, &im, &k, &vec![0.0; scn.plant.n()])?;
    let mut reports: Vec<EvaluationReport> = Vec::new();
    for rep in 0..scn.eval.seeds.max(1) {
        let seed = evalrep::derive_seed(cfg.experiment.seed, u64::MAX, rep as u64);
        reports.push(evalrep::evaluate(&scn.plant, &scn.exo, &im, &k, &scn.eval, seed, Some(&hint))?);
    }
    let path = out.join("evaluation.json");
    write_json(&path, &reports)?;
    for (ch, spec) in reports[0].spectrum.iter().enumerate() {
        write_atomic(&out.join(format!("spectrum_e{}.csv", ch + 1)), spec.to_csv().as_bytes())?;
    }
    write_sidecar(&path, cfg, json!({ "gain": gain }))?;
    for r in &reports {
        say!(
            "seed {:>20}: limsup|e| {:.3e}  (1/D)∫e² {:.3e} <= {:.3e}: {}  nulling ok: {}",
            r.seed,
            r.max_limsup(),
            r.l2_mean_square.iter().cloned().fold(0.0, f64::max),
            r.bound_value.iter().cloned().fold(0.0, f64::max),
            r.bound_holds(),
            r.nulling_ok
        );
    }
    Ok(json!({ "command": "evaluate", "status": "ok", "reports": reports }))
}

/// Runs the full pipeline; returns the verdicts and a JSON summary.
pub fn cmd_reproduce(cfg: &RunConfig, out: &Path, ell: Option<usize>, jobs: usize) -> Result<(Vec<Check>, Value)> {
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    match &cfg.sweep {
        Some(_) => reproduce_sweep(cfg, out, ell, jobs),
        None => reproduce_single(cfg, out),
    }
}

fn reproduce_sweep(cfg: &RunConfig, out: &Path, ell: Option<usize>, jobs: usize) -> Result<(Vec<Check>, Value)> {
    let sw = cfg.sweep.as_ref().expect("sweep present");
    let mut rows: Vec<(usize, f64)> = sw.ells.iter().copied().zip(sw.limsup_max.iter().copied()).collect();
    if let Some(l) = ell {
        rows.retain(|(e, _)| *e == l);
        if rows.is_empty() {
            return Err(Error::Config(format!("--ell {l} is not among sweep.ells {:?}", sw.ells)));
        }
    }
    let scn = cfg.scenario()?;
    let ells: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let start = std::time::Instant::now();
    let table = evalrep::sweep_ell(&scn, &ells, cfg.experiment.seed, jobs);
    let elapsed = start.elapsed().as_secs_f64();
    let path = out.join("sweep.csv");
    write_atomic(&path, evalrep::sweep_csv(&table).as_bytes())?;
    write_json(&out.join("sweep.json"), &table)?;
    write_sidecar(&path, cfg, json!({ "ells": ells, "seconds": elapsed }))?;

    say!("{:>3}  {:>12}  {:>12}  {:>12}  runs", "ell", "limsup|e|", "(1/D)∫e²", "bound");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
    for r in &table {
        say!(
            "{:>3}  {:>12}  {:>12}  {:>12}  {}",
            r.ell,
            fmt(r.limsup_e),
            fmt(r.l2_mean_square),
            fmt(r.bound_value),
            r.status()
        );
    }

    let mut checks = Vec::new();
    for (r, (_, thr)) in table.iter().zip(&rows) {
        let pass = r.limsup_e.is_some_and(|v| v <= *thr);
        checks.push(Check::new(
            format!("median limsup|e| at ell={}", r.ell),
            pass,
            format!("{} <= {thr:.1e} ({})", fmt(r.limsup_e), r.status()),
        ));
    }
    let ok_runs: Vec<_> = table.iter().flat_map(|r| r.runs.iter().filter(|s| s.status == "ok")).collect();
    let total: usize = table.iter().map(|r| r.runs.len()).sum();
    let bad_cert = ok_runs
        .iter()
        .filter(|s| !(s.certificate_ok == Some(true) && s.contraction_margin.is_some_and(|b| b > 0.0)))
        .count();
    checks.push(Check::new(
        "certificates and sampled contraction margin",
        bad_cert == 0,
        format!("{bad_cert} of {} settled runs violate", ok_runs.len()),
    ));
    let bad_null = ok_runs
        .iter()
        .filter(|s| !(s.nulling_ok == Some(true) && s.bound_ok == Some(true)))
        .count();
    checks.push(Check::new(
        "harmonic nulling and L2 bound",
        bad_null == 0,
        format!("{bad_null} of {} settled runs violate ({total} runs total)", ok_runs.len()),
    ));
    let summary = json!({ "command": "reproduce", "config": cfg.name, "seconds": elapsed, "sweep": table });
    Ok((checks, summary))
}

#[derive(Debug, Clone, Serialize)]
struct SingleRun {
    seed: u64,
    synthesis: SynthesisResult,
    report: EvaluationReport,
    closed_loop_max_real: f64,
    sylvester_residual: Option<f64>,
}

fn reproduce_single(cfg: &RunConfig, out: &Path) -> Result<(Vec<Check>, Value)> {
    let scn = cfg.scenario()?;
    let im = scn.internal_model()?;
    let limsup_max = cfg.acceptance.limsup_max.unwrap_or(1e-3);
    let sylvester_max = cfg.acceptance.sylvester_max.unwrap_or(1e-6);
    let mut runs = Vec::new();
    for rep in 0..scn.eval.seeds.max(1) {
        let seed = evalrep::derive_seed(cfg.experiment.seed, 0, rep as u64);
        let o = evalrep::run_once(&scn, seed)?;
        let zero = vec![0.0; scn.plant.n()];
        let jac = true_jacobian(&scn, &im, &o.synthesis.k, &zero)?;
        let sylvester_residual = if cfg.mode == Mode::Linear {
            let (_, _, p_aug) = plant::augmented_matrices(&scn.plant, &im, cfg.mode)?;
            let rep = synth::sylvester_verify(&jac, &p_aug, scn.exo.s(), &scn.plant.c_e, &scn.plant.q_e)?;
            Some(rep.regulation_residual)
        } else {
            None
        };
        if rep == 0 {
            write_atomic(&out.join("gain.csv"), datamat::matrix_csv(&o.synthesis.k).as_bytes())?;
            o.dataset.save_csv(&out.join("dataset.csv"))?;
        }
        runs.push(SingleRun {
            seed,
            closed_loop_max_real: max_real_part(&jac),
            sylvester_residual,
            synthesis: o.synthesis,
            report: o.report,
        });
    }
    let path = out.join("runs.json");
    write_json(&path, &runs)?;
    write_sidecar(&path, cfg, json!({ "runs": runs.len() }))?;

    for r in &runs {
        say!(
            "seed {:>20}: limsup|e| {:.3e}  max Re λ {:.4}  Sylvester residual {}",
            r.seed,
            r.report.max_limsup(),
            r.closed_loop_max_real,
            r.sylvester_residual.map_or("-".into(), |v| format!("{v:.3e}"))
        );
    }
    let worst = |f: &dyn Fn(&SingleRun) -> f64| runs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let lim = worst(&|r| r.report.max_limsup());
    let re = worst(&|r| r.closed_loop_max_real);
    let mut checks = vec![
        Check::new("limsup|e| on every seed", lim < limsup_max, format!("{lim:.3e} < {limsup_max:.1e}")),
        Check::new("closed loop Hurwitz", re < 0.0, format!("max Re λ = {re:.4e}")),
        Check::new(
            "certificates and sampled contraction margin",
            runs.iter().all(|r| r.synthesis.residuals.passes() && r.report.contraction_margin.is_some_and(|b| b > 0.0)),
            format!("{} runs", runs.len()),
        ),
    ];
    if cfg.mode == Mode::Linear {
        let syl = worst(&|r| r.sylvester_residual.unwrap_or(f64::INFINITY));
        checks.push(Check::new("Sylvester regulation residual", syl < sylvester_max, format!("{syl:.3e} < {sylvester_max:.1e}")));
    }
    let summary = json!({ "command": "reproduce", "config": cfg.name, "runs": runs });
    Ok((checks, summary))
}
