//! Ground-truth plant `ẋ = A Z(x) + B u + P w`, `e = C_e Z(x) + Q_e w`, the
//! basis-function library `Z(x) = col(x, Q(x))`, experiment execution and
//! closed-loop simulation with a fixed-step RK4 integrator.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exo::Exosystem;
use crate::imodel::InternalModel;
use crate::linalg;

/// One nonlinear entry of `Q(x)`. Indices are zero-based internally and
/// one-based in the textual form (`cos(x1)`, `x1*x2`, `x3^2`, …).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisTerm {
    Cos(usize),
    Sin(usize),
    Product(usize, usize),
    Square(usize),
    Cube(usize),
}

impl BasisTerm {
    fn max_index(&self) -> usize {
        match *self {
            BasisTerm::Cos(i) | BasisTerm::Sin(i) | BasisTerm::Square(i) | BasisTerm::Cube(i) => i,
            BasisTerm::Product(i, j) => i.max(j),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            BasisTerm::Cos(i) => x[i].cos(),
            BasisTerm::Sin(i) => x[i].sin(),
            BasisTerm::Product(i, j) => x[i] * x[j],
            BasisTerm::Square(i) => x[i] * x[i],
            BasisTerm::Cube(i) => x[i] * x[i] * x[i],
        }
    }

    /// Writes the gradient of the term into `row` (length `n`, zeroed by caller).
    pub fn gradient(&self, x: &[f64], row: &mut [f64]) {
        match *self {
            BasisTerm::Cos(i) => row[i] = -x[i].sin(),
            BasisTerm::Sin(i) => row[i] = x[i].cos(),
            BasisTerm::Product(i, j) => {
                row[i] += x[j];
                row[j] += x[i];
            }
            BasisTerm::Square(i) => row[i] = 2.0 * x[i],
            BasisTerm::Cube(i) => row[i] = 3.0 * x[i] * x[i],
        }
    }
}

impl fmt::Display for BasisTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BasisTerm::Cos(i) => write!(f, "cos(x{})", i + 1),
            BasisTerm::Sin(i) => write!(f, "sin(x{})", i + 1),
            BasisTerm::Product(i, j) => write!(f, "x{}*x{}", i + 1, j + 1),
            BasisTerm::Square(i) => write!(f, "x{}^2", i + 1),
            BasisTerm::Cube(i) => write!(f, "x{}^3", i + 1),
        }
    }
}

fn parse_var(s: &str) -> Option<usize> {
    let idx: usize = s.trim().strip_prefix('x')?.parse().ok()?;
    idx.checked_sub(1)
}

impl FromStr for BasisTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Config(format!("unknown basis term `{s}`"));
        if let Some(inner) = t.strip_prefix("cos(").and_then(|r| r.strip_suffix(')')) {
            return parse_var(inner).map(BasisTerm::Cos).ok_or_else(bad);
        }
        if let Some(inner) = t.strip_prefix("sin(").and_then(|r| r.strip_suffix(')')) {
            return parse_var(inner).map(BasisTerm::Sin).ok_or_else(bad);
        }
        if let Some((a, b)) = t.split_once('*') {
            return match (parse_var(a), parse_var(b)) {
                (Some(i), Some(j)) if i == j => Ok(BasisTerm::Square(i)),
                (Some(i), Some(j)) => Ok(BasisTerm::Product(i, j)),
                _ => Err(bad()),
            };
        }
        if let Some((a, p)) = t.split_once('^') {
            let i = parse_var(a).ok_or_else(bad)?;
            return match p {
                "2" => Ok(BasisTerm::Square(i)),
                "3" => Ok(BasisTerm::Cube(i)),
                _ => Err(bad()),
            };
        }
        Err(bad())
    }
}

impl Serialize for BasisTerm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BasisTerm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `Z(x) = col(x, Q(x))` over a fixed catalog of terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisLibrary {
    pub n: usize,
    #[serde(default)]
    pub terms: Vec<BasisTerm>,
}

impl BasisLibrary {
    pub fn new(n: usize, terms: Vec<BasisTerm>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParams("state dimension must be positive".into()));
        }
        if let Some(t) = terms.iter().find(|t| t.max_index() >= n) {
            return Err(Error::InvalidParams(format!("term {t} references a state beyond x{n}")));
        }
        Ok(Self { n, terms })
    }

    pub fn linear(n: usize) -> Self {
        Self { n, terms: Vec::new() }
    }

    pub fn q(&self) -> usize {
        self.n + self.terms.len()
    }

    pub fn eval_q(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|t| t.eval(x)))
    }

    pub fn eval_z(&self, x: &[f64]) -> DVector<f64> {
        let mut z = DVector::zeros(self.q());
        z.rows_mut(0, self.n).copy_from_slice(&x[..self.n]);
        for (k, t) in self.terms.iter().enumerate() {
            z[self.n + k] = t.eval(x);
        }
        z
    }

    /// `∂Q/∂x`, `(q−n) × n`.
    pub fn q_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.terms.len(), self.n);
        let mut row = vec![0.0; self.n];
        for (k, t) in self.terms.iter().enumerate() {
            row.iter_mut().for_each(|v| *v = 0.0);
            t.gradient(x, &mut row);
            for (c, v) in row.iter().enumerate() {
                j[(k, c)] = *v;
            }
        }
        j
    }

    /// `∂Z/∂x`, `q × n`, identity block on top.
    pub fn z_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.q(), self.n);
        j.view_mut((0, 0), (self.n, self.n)).fill_with_identity();
        j.view_mut((self.n, 0), (self.terms.len(), self.n)).copy_from(&self.q_jacobian(x));
        j
    }
}

/// How the controller sees the state: `𝓩 = col(x, η, Q(x))` or `col(x, η)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nonlinear,
    Linear,
}

/// Ground-truth plant matrices. Only the simulator and test oracles read these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantModel {
    pub basis: BasisLibrary,
    #[serde(with = "crate::matser")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::matser")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::matser")]
    pub p: DMatrix<f64>,
    #[serde(with = "crate::matser")]
    pub c_e: DMatrix<f64>,
    #[serde(with = "crate::matser")]
    pub q_e: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(
        basis: BasisLibrary,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        p: DMatrix<f64>,
        c_e: DMatrix<f64>,
        q_e: DMatrix<f64>,
    ) -> Result<Self> {
        let plant = Self { basis, a, b, p, c_e, q_e };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, q) = (self.basis.n, self.basis.q());
        let check = |name: &str, m: &DMatrix<f64>, rows: usize, cols: Option<usize>| {
            if m.nrows() != rows || cols.is_some_and(|c| m.ncols() != c) {
                Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {rows}x{}",
                    m.nrows(),
                    m.ncols(),
                    cols.map_or("?".into(), |c| c.to_string())
                )))
            } else {
                Ok(())
            }
        };
        check("A", &self.a, n, Some(q))?;
        check("B", &self.b, n, None)?;
        check("P", &self.p, n, None)?;
        check("C_e", &self.c_e, self.c_e.nrows(), Some(q))?;
        check("Q_e", &self.q_e, self.c_e.nrows(), Some(self.p.ncols()))?;
        if self.b.ncols() == 0 || self.c_e.nrows() == 0 {
            return Err(Error::DimensionMismatch("need at least one input and one error".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.basis.n
    }

    pub fn q(&self) -> usize {
        self.basis.q()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p_err(&self) -> usize {
        self.c_e.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.p.ncols()
    }

    pub fn vector_field(&self, x: &[f64], u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * self.basis.eval_z(x) + &self.b * u + &self.p * w
    }

    pub fn error(&self, x: &[f64], w: &DVector<f64>) -> DVector<f64> {
        &self.c_e * self.basis.eval_z(x) + &self.q_e * w
    }

    fn check_compat(&self, exo: &Exosystem, imodel: &InternalModel) -> Result<()> {
        if exo.n_w() != self.n_w() {
            return Err(Error::DimensionMismatch(format!(
                "plant expects n_w = {}, exosystem has {}",
                self.n_w(),
                exo.n_w()
            )));
        }
        if imodel.p() != self.p_err() {
            return Err(Error::DimensionMismatch(format!(
                "internal model has {} channels, plant has {} errors",
                imodel.p(),
                self.p_err()
            )));
        }
        Ok(())
    }
}

/// Ground-truth augmented matrices `(𝓐, 𝓑, 𝓟)` such that
/// `col(ẋ, η̇) = 𝓐 𝓩 + 𝓑 u + 𝓟 w`.
pub fn augmented_matrices(
    plant: &PlantModel,
    imodel: &InternalModel,
    mode: Mode,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (n, q, ne, m) = (plant.n(), plant.q(), imodel.n_eta(), plant.m());
    if mode == Mode::Linear && q != n {
        return Err(Error::DimensionMismatch("linear mode requires an empty Q(x)".into()));
    }
    let g = imodel.g();
    let cols = q + ne;
    let mut a_aug = DMatrix::zeros(n + ne, cols);
    let a_bar = plant.a.columns(0, n);
    let gc = g * &plant.c_e;
    a_aug.view_mut((0, 0), (n, n)).copy_from(&a_bar);
    a_aug.view_mut((n, 0), (ne, n)).copy_from(&gc.columns(0, n));
    a_aug.view_mut((n, n), (ne, ne)).copy_from(imodel.phi());
    if q > n {
        a_aug.view_mut((0, n + ne), (n, q - n)).copy_from(&plant.a.columns(n, q - n));
        a_aug.view_mut((n, n + ne), (ne, q - n)).copy_from(&gc.columns(n, q - n));
    }
    let mut b_aug = DMatrix::zeros(n + ne, m);
    b_aug.view_mut((0, 0), (n, m)).copy_from(&plant.b);
    let p_aug = linalg::vstack(&[&plant.p, &(g * &plant.q_e)]);
    Ok((a_aug, b_aug, p_aug))
}

/// Stacked controller input `𝓩(x, η)`.
pub fn calz(basis: &BasisLibrary, x: &[f64], eta: &[f64], mode: Mode) -> DVector<f64> {
    let n = basis.n;
    let extra = if mode == Mode::Nonlinear { basis.terms.len() } else { 0 };
    let mut z = DVector::zeros(n + eta.len() + extra);
    z.rows_mut(0, n).copy_from_slice(&x[..n]);
    z.rows_mut(n, eta.len()).copy_from_slice(eta);
    for k in 0..extra {
        z[n + eta.len() + k] = basis.terms[k].eval(x);
    }
    z
}

/// `∂𝓩/∂(x, η)`, rows ordered as in [`calz`].
pub fn calz_jacobian(basis: &BasisLibrary, x: &[f64], n_eta: usize, mode: Mode) -> DMatrix<f64> {
    let n = basis.n;
    let extra = if mode == Mode::Nonlinear { basis.terms.len() } else { 0 };
    let mut j = DMatrix::zeros(n + n_eta + extra, n + n_eta);
    j.view_mut((0, 0), (n + n_eta, n + n_eta)).fill_with_identity();
    if extra > 0 {
        j.view_mut((n + n_eta, 0), (extra, n)).copy_from(&basis.q_jacobian(x));
    }
    j
}

/// Piecewise-constant random excitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Excitation {
    pub amplitude: f64,
    /// Hold interval in seconds; defaults to the sampling period.
    #[serde(default)]
    pub hold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub samples: usize,
    pub sample_period: f64,
    pub step: f64,
    pub excitation: Excitation,
    pub seed: u64,
    /// Initial plant state; drawn uniformly in `[−amplitude, amplitude]` when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub eta0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub step: f64,
    pub sample_period: f64,
    pub amplitude: f64,
    pub hold: f64,
}

/// Samples `{(x_i, u_i, e_i, ẋ_i, η_i)}` collected at `t_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub meta: Option<DatasetMeta>,
}

/// Integer ratio `a / b`, if `a` is a multiple of `b` to rounding.
pub(crate) fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let k = r.round();
    ((r - k).abs() < 1e-9 * r.abs().max(1.0) && k >= 1.0).then_some(k as usize)
}

/// Right-hand side of the augmented plant + internal model.
struct AugmentedRhs<'a> {
    plant: &'a PlantModel,
    imodel: &'a InternalModel,
}

impl AugmentedRhs<'_> {
    /// Returns `(ẋ, η̇)` stacked into one vector.
    fn eval(&self, y: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let n = self.plant.n();
        let ne = self.imodel.n_eta();
        let x = &y.as_slice()[..n];
        let eta = y.rows(n, ne);
        let z = self.plant.basis.eval_z(x);
        let e = &self.plant.c_e * &z + &self.plant.q_e * w;
        let dx = &self.plant.a * &z + &self.plant.b * u + &self.plant.p * w;
        let deta = self.imodel.phi() * eta + self.imodel.g() * e;
        let mut out = DVector::zeros(n + ne);
        out.rows_mut(0, n).copy_from(&dx);
        out.rows_mut(n, ne).copy_from(&deta);
        out
    }
}

/// One classical RK4 step where the exogenous signal is supplied at the
/// start, midpoint and end of the step.
fn rk4_step<F>(y: &DVector<f64>, h: f64, w: [&DVector<f64>; 3], mut f: F) -> DVector<f64>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(y, w[0]);
    let k2 = f(&(y + &k1 * (h / 2.0)), w[1]);
    let k3 = f(&(y + &k2 * (h / 2.0)), w[1]);
    let k4 = f(&(y + &k3 * h), w[2]);
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Run an open-loop experiment on the augmented system and sample it.
pub fn run_experiment(
    plant: &PlantModel,
    exo: &Exosystem,
    imodel: &InternalModel,
    cfg: &ExperimentConfig,
) -> Result<Dataset> {
    plant.check_compat(exo, imodel)?;
    let (n, m, ne, pe) = (plant.n(), plant.m(), imodel.n_eta(), plant.p_err());
    if cfg.samples == 0 {
        return Err(Error::InvalidParams("need at least one sample".into()));
    }
    if !(cfg.step > 0.0) || !(cfg.sample_period > 0.0) {
        return Err(Error::InvalidParams("step and sample period must be positive".into()));
    }
    let per_sample = integer_ratio(cfg.sample_period, cfg.step).ok_or_else(|| {
        Error::InvalidParams(format!(
            "sample period {} is not an integer multiple of the step {}",
            cfg.sample_period, cfg.step
        ))
    })?;
    let hold = cfg.excitation.hold.unwrap_or(cfg.sample_period);
    let per_hold = integer_ratio(hold, cfg.step).ok_or_else(|| {
        Error::InvalidParams(format!("hold interval {hold} is not a multiple of the step {}", cfg.step))
    })?;
    let amp = cfg.excitation.amplitude;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = |k: usize, rng: &mut ChaCha8Rng| {
        DVector::from_fn(k, |_, _| if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 })
    };

    let x0 = match &cfg.x0 {
        Some(v) if v.len() == n => DVector::from_column_slice(v),
        Some(v) => {
            return Err(Error::DimensionMismatch(format!("x0 has {} entries, n = {n}", v.len())))
        }
        None => draw(n, &mut rng),
    };
    let eta0 = match &cfg.eta0 {
        Some(v) if v.len() == ne => DVector::from_column_slice(v),
        Some(v) => {
            return Err(Error::DimensionMismatch(format!("eta0 has {} entries, n_eta = {ne}", v.len())))
        }
        None => DVector::zeros(ne),
    };

    let rhs = AugmentedRhs { plant, imodel };
    let half = exo.propagator(cfg.step / 2.0);
    let mut y = DVector::zeros(n + ne);
    y.rows_mut(0, n).copy_from(&x0);
    y.rows_mut(n, ne).copy_from(&eta0);
    let mut w = exo.w0().clone();
    let mut u = DVector::zeros(m);

    let t_count = cfg.samples;
    let mut ds = Dataset {
        times: Vec::with_capacity(t_count),
        x: DMatrix::zeros(n, t_count),
        u: DMatrix::zeros(m, t_count),
        e: DMatrix::zeros(pe, t_count),
        dx: DMatrix::zeros(n, t_count),
        eta: DMatrix::zeros(ne, t_count),
        meta: Some(DatasetMeta {
            seed: cfg.seed,
            step: cfg.step,
            sample_period: cfg.sample_period,
            amplitude: amp,
            hold,
        }),
    };

    let total_steps = (t_count - 1) * per_sample;
    let mut step = 0usize;
    loop {
        let t = step as f64 * cfg.step;
        if step % per_hold == 0 {
            u = draw(m, &mut rng);
        }
        if step % per_sample == 0 {
            // resync against the exact solution at sample instants
            w = exo.simulate_w(t);
            let i = step / per_sample;
            let x = &y.as_slice()[..n];
            ds.times.push(t);
            ds.x.set_column(i, &y.rows(0, n));
            ds.eta.set_column(i, &y.rows(n, ne));
            ds.u.set_column(i, &u);
            ds.e.set_column(i, &plant.error(x, &w));
            ds.dx.set_column(i, &plant.vector_field(x, &u, &w));
            if !all_finite(&y) {
                return Err(Error::NonFiniteState { t });
            }
        }
        if step == total_steps {
            break;
        }
        let w_mid = &half * &w;
        let w_end = &half * &w_mid;
        y = rk4_step(&y, cfg.step, [&w, &w_mid, &w_end], |yy, ww| rhs.eval(yy, &u, ww));
        w = w_end;
        step += 1;
        if !all_finite(&y) {
            return Err(Error::NonFiniteState { t: step as f64 * cfg.step });
        }
    }
    Ok(ds)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `η̇_i = Φ η_i + G e_i`.
    pub fn eta_dot(&self, imodel: &InternalModel) -> DMatrix<f64> {
        imodel.phi() * &self.eta + imodel.g() * &self.e
    }

    pub fn header(&self) -> String {
        let mut cols = vec!["t".to_string()];
        let mut push = |prefix: &str, k: usize| cols.extend((1..=k).map(|i| format!("{prefix}{i}")));
        push("x", self.x.nrows());
        push("u", self.u.nrows());
        push("e", self.e.nrows());
        push("dx", self.dx.nrows());
        push("eta", self.eta.nrows());
        cols.join(",")
    }

    /// CSV with one row per sample and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header())?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![fmt_f64(*t)];
            for mat in [&self.x, &self.u, &self.e, &self.dx, &self.eta] {
                row.extend(mat.column(i).iter().map(|v| fmt_f64(*v)));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty dataset file".into()))??;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        if names.first() != Some(&"t") {
            return Err(Error::Config("dataset header must start with `t`".into()));
        }
        let count = |prefix: &str| {
            names
                .iter()
                .filter(|c| {
                    c.strip_prefix(prefix)
                        .is_some_and(|r| !r.is_empty() && r.chars().all(|ch| ch.is_ascii_digit()))
                })
                .count()
        };
        let dims = [count("x"), count("u"), count("e"), count("dx"), count("eta")];
        if 1 + dims.iter().sum::<usize>() != names.len() {
            return Err(Error::Config(format!("unrecognized dataset header `{header}`")));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Config(format!("dataset line {}: {e}", ln + 2)))?;
            if vals.len() != names.len() {
                return Err(Error::Config(format!(
                    "dataset line {}: {} fields, header has {}",
                    ln + 2,
                    vals.len(),
                    names.len()
                )));
            }
            rows.push(vals);
        }
        let t_count = rows.len();
        let mut off = 1;
        let mut take = |k: usize| {
            let m = DMatrix::from_fn(k, t_count, |r, c| rows[c][off + r]);
            off += k;
            m
        };
        let x = take(dims[0]);
        let u = take(dims[1]);
        let e = take(dims[2]);
        let dx = take(dims[3]);
        let eta = take(dims[4]);
        Ok(Self { times: rows.iter().map(|r| r[0]).collect(), x, u, e, dx, eta, meta: None })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Fixed-step simulation options.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub step: f64,
    /// Keep every `record_every`-th step.
    pub record_every: usize,
    /// Only record samples with `t >= record_from`.
    pub record_from: f64,
}

impl SimOptions {
    pub fn new(horizon: f64, step: f64) -> Self {
        Self { horizon, step, record_every: 1, record_from: 0.0 }
    }
}

/// Recorded closed-loop trajectory; one column per recorded instant.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub u: DMatrix<f64>,
    /// `ė = C_e (∂Z/∂x) ẋ + Q_e S w`.
    pub e_dot: DMatrix<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> DVector<f64> {
        let last = self.t.len() - 1;
        let n = self.x.nrows();
        let ne = self.eta.nrows();
        let mut y = DVector::zeros(n + ne);
        y.rows_mut(0, n).copy_from(&self.x.column(last));
        y.rows_mut(n, ne).copy_from(&self.eta.column(last));
        y
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut cols = vec!["t".to_string()];
        for (p, m) in [("x", &self.x), ("eta", &self.eta), ("e", &self.e), ("u", &self.u)] {
            cols.extend((1..=m.nrows()).map(|i| format!("{p}{i}")));
        }
        writeln!(out, "{}", cols.join(","))?;
        for (i, t) in self.t.iter().enumerate() {
            let mut row = vec![fmt_f64(*t)];
            for m in [&self.x, &self.eta, &self.e, &self.u] {
                row.extend(m.column(i).iter().map(|v| fmt_f64(*v)));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrate the closed loop under `u = K 𝓩(x, η)` with RK4.
///
/// The feedback mode is read off the gain width: `q + n_η` columns means
/// nonlinear (`𝓩` includes `Q(x)`), `n + n_η` means linear.
pub fn simulate_closed_loop(
    plant: &PlantModel,
    exo: &Exosystem,
    imodel: &InternalModel,
    k: &DMatrix<f64>,
    x0: &DVector<f64>,
    eta0: &DVector<f64>,
    opts: &SimOptions,
) -> Result<Trajectory> {
    plant.check_compat(exo, imodel)?;
    let (n, q, m, ne, pe) = (plant.n(), plant.q(), plant.m(), imodel.n_eta(), plant.p_err());
    let mode = if k.ncols() == q + ne {
        Mode::Nonlinear
    } else if k.ncols() == n + ne {
        Mode::Linear
    } else {
        return Err(Error::DimensionMismatch(format!(
            "gain has {} columns, expected {} or {}",
            k.ncols(),
            q + ne,
            n + ne
        )));
    };
    if k.nrows() != m {
        return Err(Error::DimensionMismatch(format!("gain has {} rows, m = {m}", k.nrows())));
    }
    if x0.len() != n || eta0.len() != ne {
        return Err(Error::DimensionMismatch("initial state size".into()));
    }
    if !(opts.step > 0.0) || !(opts.horizon >= 0.0) || opts.record_every == 0 {
        return Err(Error::InvalidParams("bad simulation options".into()));
    }
    let steps = (opts.horizon / opts.step).round() as usize;
    let rhs = AugmentedRhs { plant, imodel };
    let half = exo.propagator(opts.step / 2.0);
    let sw = exo.s();
    let control = |y: &DVector<f64>| {
        let ys = y.as_slice();
        k * calz(&plant.basis, &ys[..n], &ys[n..], mode)
    };

    let mut y = DVector::zeros(n + ne);
    y.rows_mut(0, n).copy_from(x0);
    y.rows_mut(n, ne).copy_from(eta0);
    let mut w = exo.w0().clone();
    let resync_every = ((1.0 / opts.step).round() as usize).max(1);

    let mut rec_t = Vec::new();
    let mut rec: [Vec<f64>; 5] = Default::default();
    let mut record = |t: f64, y: &DVector<f64>, w: &DVector<f64>| {
        let x = &y.as_slice()[..n];
        let u = control(y);
        let e = plant.error(x, w);
        let dx = plant.vector_field(x, &u, w);
        let e_dot = &plant.c_e * plant.basis.z_jacobian(x) * &dx + &plant.q_e * (sw * w);
        rec_t.push(t);
        rec[0].extend_from_slice(x);
        rec[1].extend_from_slice(&y.as_slice()[n..]);
        rec[2].extend_from_slice(e.as_slice());
        rec[3].extend_from_slice(u.as_slice());
        rec[4].extend_from_slice(e_dot.as_slice());
    };

    for step in 0..=steps {
        let t = step as f64 * opts.step;
        if step % resync_every == 0 {
            w = exo.simulate_w(t);
        }
        if !all_finite(&y) {
            return Err(Error::NonFiniteState { t });
        }
        if step % opts.record_every == 0 && t >= opts.record_from - 1e-9 * opts.step {
            record(t, &y, &w);
        }
        if step == steps {
            break;
        }
        let w_mid = &half * &w;
        let w_end = &half * &w_mid;
        y = rk4_step(&y, opts.step, [&w, &w_mid, &w_end], |yy, ww| {
            let u = control(yy);
            rhs.eval(yy, &u, ww)
        });
        w = w_end;
    }

    let cols = rec_t.len();
    let mat = |data: &[f64], rows: usize| DMatrix::from_column_slice(rows, cols, data);
    Ok(Trajectory {
        x: mat(&rec[0], n),
        eta: mat(&rec[1], ne),
        e: mat(&rec[2], pe),
        u: mat(&rec[3], m),
        e_dot: mat(&rec[4], pe),
        t: rec_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exo::SpectralSpec;

    fn scalar_integrator() -> (PlantModel, Exosystem, InternalModel) {
        let plant = PlantModel::new(
            BasisLibrary::linear(1),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, -1.0),
        )
        .unwrap();
        let exo = Exosystem::new(
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
            Some(1.0),
            SpectralSpec::from_real(&[(0.0, 1)]).unwrap(),
        )
        .unwrap();
        let im = InternalModel::harmonic(1, 0, 1.0, 1.0, [0.0, 1.0]).unwrap();
        (plant, exo, im)
    }

    #[test]
    fn basis_terms_parse_and_print() {
        for s in ["cos(x1)", "sin(x3)", "x1*x2", "x2^2", "x4^3"] {
            let t: BasisTerm = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert_eq!("x2*x2".parse::<BasisTerm>().unwrap(), BasisTerm::Square(1));
        assert!("tan(x1)".parse::<BasisTerm>().is_err());
        assert!("cos(x0)".parse::<BasisTerm>().is_err());
        assert!(BasisLibrary::new(2, vec![BasisTerm::Cos(2)]).is_err());
    }

    #[test]
    fn cos_basis_at_origin_and_quarter_turn() {
        let lib = BasisLibrary::new(4, vec![BasisTerm::Cos(0)]).unwrap();
        let z = lib.eval_z(&[0.0; 4]);
        assert_eq!(z.as_slice(), &[0.0, 0.0, 0.0, 0.0, 1.0]);
        let j = lib.z_jacobian(&[0.0; 4]);
        assert_eq!(j.row(4).iter().copied().collect::<Vec<_>>(), vec![-0.0, 0.0, 0.0, 0.0]);
        assert_eq!(j.view((0, 0), (4, 4)).into_owned(), DMatrix::identity(4, 4));
        let j = lib.z_jacobian(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]);
        assert!((j[(4, 0)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn idle_integrator_stays_put() {
        let (mut plant, exo, im) = scalar_integrator();
        plant.q_e = DMatrix::zeros(1, 1);
        let cfg = ExperimentConfig {
            samples: 5,
            sample_period: 0.05,
            step: 0.01,
            excitation: Excitation { amplitude: 0.0, hold: None },
            seed: 1,
            x0: Some(vec![1.0]),
            eta0: None,
        };
        let ds = run_experiment(&plant, &exo, &im, &cfg).unwrap();
        assert_eq!(ds.len(), 5);
        for i in 0..5 {
            assert_eq!(ds.x[(0, i)], 1.0);
            assert_eq!(ds.dx[(0, i)], 0.0);
            assert!((ds.times[i] - 0.05 * i as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn non_multiple_sample_period_rejected() {
        let (plant, exo, im) = scalar_integrator();
        let cfg = ExperimentConfig {
            samples: 5,
            sample_period: 0.055,
            step: 0.01,
            excitation: Excitation { amplitude: 0.1, hold: None },
            seed: 1,
            x0: None,
            eta0: None,
        };
        assert!(matches!(run_experiment(&plant, &exo, &im, &cfg), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn unstable_run_reports_non_finite() {
        let (mut plant, exo, im) = scalar_integrator();
        plant.a = DMatrix::from_element(1, 1, 400.0);
        let cfg = ExperimentConfig {
            samples: 200,
            sample_period: 1.0,
            step: 0.5,
            excitation: Excitation { amplitude: 0.1, hold: None },
            seed: 1,
            x0: Some(vec![1.0]),
            eta0: None,
        };
        assert!(matches!(run_experiment(&plant, &exo, &im, &cfg), Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn free_decay_matches_exponential() {
        let (mut plant, exo, im) = scalar_integrator();
        plant.a = DMatrix::from_element(1, 1, -1.0);
        let k = DMatrix::zeros(1, 2);
        let traj = simulate_closed_loop(
            &plant,
            &exo,
            &im,
            &k,
            &DVector::from_element(1, 1.0),
            &DVector::zeros(1),
            &SimOptions::new(20.0, 1e-3),
        )
        .unwrap();
        let last = traj.t.len() - 1;
        assert!((traj.t[last] - 20.0).abs() < 1e-9);
        assert!((traj.x[(0, last)] - (-20.0_f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn dataset_csv_roundtrip_is_exact() {
        let (plant, exo, im) = scalar_integrator();
        let cfg = ExperimentConfig {
            samples: 7,
            sample_period: 0.1,
            step: 0.01,
            excitation: Excitation { amplitude: 0.1, hold: None },
            seed: 3,
            x0: None,
            eta0: None,
        };
        let ds = run_experiment(&plant, &exo, &im, &cfg).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,u1,e1,dx1,eta1\n"));
        let back = Dataset::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.eta, ds.eta);
        assert_eq!(back.times, ds.times);
    }
}
