//! Data-driven gain synthesis.
//!
//! Nonlinear mode solves, in `(P₁, Y₁, G₂, α)`,
//!
//! ```text
//! 𝓩₀ Y₁ = [P₁; 0]      𝓩₀ G₂ = [0; I]      𝓜 [Y₁ G₂] = 0
//! ⎡ 𝓩₁Y₁ + Y₁ᵀ𝓩₁ᵀ + αI   𝓩₁G₂   P₁𝓡_Q ⎤
//! ⎢ G₂ᵀ𝓩₁ᵀ              −I      0     ⎥ ⪯ 0,   P₁ ⪰ ε I,   α ≥ α_min
//! ⎣ 𝓡_Qᵀ P₁             0       −I    ⎦
//! ```
//!
//! and returns `K = U₀ [Y₁P₁⁻¹, G₂]`. Linear mode solves `X ⪰ εI`,
//! `[X; 0] = [𝓩₀; 𝓜] Y`, `𝓩₁Y + Yᵀ𝓩₁ᵀ ⪯ −εI` and returns `K = U₀ Y X⁻¹`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{Affine, ConicProblem, Outcome, SymAffine};
use crate::datamat::DataMatrices;
use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::{calz_jacobian, BasisLibrary, Mode};

pub const EQ_TOL: f64 = 1e-6;
pub const LMI_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[serde(deny_unknown_fields)]
pub enum Objective {
    #[default]
    Feasibility,
    /// Maximize `α` subject to the extra bound `P₁ ⪯ κI`.
    MaximizeAlpha { kappa: f64 },
}

#[derive(Debug, Clone)]
pub struct NonlinearSdpProblem<'a> {
    pub dm: &'a DataMatrices,
    /// `n × r`; padded with zero rows to `𝓡_Q = [R_Q; 0]`.
    pub r_q: DMatrix<f64>,
    pub eps_pd: f64,
    pub alpha_min: f64,
    pub objective: Objective,
}

impl<'a> NonlinearSdpProblem<'a> {
    pub fn new(dm: &'a DataMatrices, r_q: DMatrix<f64>) -> Self {
        Self { dm, r_q, eps_pd: 1e-6, alpha_min: 1e-4, objective: Objective::Feasibility }
    }
}

#[derive(Debug, Clone)]
pub struct LinearSdpProblem<'a> {
    pub dm: &'a DataMatrices,
    /// Defaults to `1e-6·‖𝓩₁‖` when `None`.
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    Nonlinear {
        #[serde(with = "crate::matser")]
        p1: DMatrix<f64>,
        #[serde(with = "crate::matser")]
        y1: DMatrix<f64>,
        #[serde(with = "crate::matser")]
        g2: DMatrix<f64>,
        alpha: f64,
    },
    Linear {
        #[serde(with = "crate::matser")]
        x: DMatrix<f64>,
        #[serde(with = "crate::matser")]
        y: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Largest absolute violation over all equality constraints.
    pub equality_max: f64,
    /// Smallest eigenvalue of the negated LMI (≥ 0 means satisfied).
    pub lmi_min_eig: f64,
    /// Smallest eigenvalue of `P₁` or `X`.
    pub pd_min_eig: f64,
    pub per_constraint: BTreeMap<String, f64>,
}

impl Residuals {
    pub fn passes(&self) -> bool {
        self.equality_max < EQ_TOL && self.lmi_min_eig >= -LMI_TOL && self.pd_min_eig > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub mode: Mode,
    #[serde(with = "crate::matser")]
    pub k: DMatrix<f64>,
    pub certificate: Certificate,
    pub solver_status: String,
    pub iterations: u32,
    pub solve_seconds: f64,
    pub residuals: Residuals,
    pub warnings: Vec<String>,
}

impl SynthesisResult {
    /// `𝓖`: `[Y₁P₁⁻¹, G₂]` or `Y X⁻¹`, `T × rows(𝓩₀)`.
    pub fn g_matrix(&self) -> DMatrix<f64> {
        match &self.certificate {
            Certificate::Nonlinear { p1, y1, g2, .. } => {
                let inv = p1.clone().try_inverse().unwrap_or_else(|| linalg::svd(p1).pseudo_inverse(1e-14).expect("both factors present"));
                linalg::hstack(&[&(y1 * inv), g2])
            }
            Certificate::Linear { x, y } => {
                let inv = x.clone().try_inverse().unwrap_or_else(|| linalg::svd(x).pseudo_inverse(1e-14).expect("both factors present"));
                y * inv
            }
        }
    }

    /// Data-based closed-loop matrix `𝓩₁𝓖`.
    pub fn closed_loop(&self, dm: &DataMatrices) -> DMatrix<f64> {
        &dm.z1 * self.g_matrix()
    }

    /// Square closed-loop Jacobian in `(x, η)` at the plant state `x`.
    pub fn jacobian_at(&self, dm: &DataMatrices, basis: &BasisLibrary, x: &[f64]) -> DMatrix<f64> {
        self.closed_loop(dm) * calz_jacobian(basis, x, dm.n_eta, dm.mode)
    }

    /// `P₁` or `X`.
    pub fn lyapunov(&self) -> &DMatrix<f64> {
        match &self.certificate {
            Certificate::Nonlinear { p1, .. } => p1,
            Certificate::Linear { x, .. } => x,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match &self.certificate {
            Certificate::Nonlinear { alpha, .. } => Some(*alpha),
            Certificate::Linear { .. } => None,
        }
    }
}

/// Synthesis settings shared by both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthOptions {
    /// `n × r`; required in nonlinear mode.
    #[serde(default, with = "crate::matser::opt")]
    pub r_q: Option<DMatrix<f64>>,
    #[serde(default = "default_eps_pd")]
    pub eps_pd: f64,
    #[serde(default = "default_alpha_min")]
    pub alpha_min: f64,
    #[serde(default)]
    pub objective: Objective,
    /// Linear-mode LMI shift; `1e-6·‖𝓩₁‖` when absent.
    #[serde(default)]
    pub eps_linear: Option<f64>,
    #[serde(default)]
    pub margin_grid: MarginGrid,
}

fn default_eps_pd() -> f64 {
    1e-6
}

fn default_alpha_min() -> f64 {
    1e-4
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            r_q: None,
            eps_pd: default_eps_pd(),
            alpha_min: default_alpha_min(),
            objective: Objective::Feasibility,
            eps_linear: None,
            margin_grid: MarginGrid::default(),
        }
    }
}

/// Dispatch on the data mode.
pub fn synthesize(dm: &DataMatrices, opts: &SynthOptions) -> Result<SynthesisResult> {
    match dm.mode {
        Mode::Nonlinear => {
            let r_q = match &opts.r_q {
                Some(r) => r.clone(),
                None if dm.n_z() == dm.n_state() => DMatrix::zeros(dm.n, 0),
                None => return Err(Error::Config("nonlinear synthesis needs r_q".into())),
            };
            solve_nonlinear(&NonlinearSdpProblem {
                dm,
                r_q,
                eps_pd: opts.eps_pd,
                alpha_min: opts.alpha_min,
                objective: opts.objective,
            })
        }
        Mode::Linear => solve_linear(&LinearSdpProblem { dm, eps: opts.eps_linear }),
    }
}

fn recommended_samples(dm: &DataMatrices) -> Vec<String> {
    let need = dm.m() + dm.n_z() + dm.d();
    if dm.t() < need {
        vec![format!("T = {} is below m + rows(Z0) + d = {need}; data may not be rich enough", dm.t())]
    } else {
        Vec::new()
    }
}

/// Variable layout for a symmetric `N × N` block followed by dense blocks.
struct Layout {
    n_sym: usize,
    sym_off: usize,
}

impl Layout {
    fn sym(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.sym_off + c * (c + 1) / 2 + r
    }

    fn sym_len(&self) -> usize {
        self.n_sym * (self.n_sym + 1) / 2
    }

    fn read_sym(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_sym, self.n_sym, |i, j| x[self.sym(i, j)])
    }
}

/// Dense `rows × cols` variable block, column-major from `off`.
#[derive(Clone, Copy)]
struct Dense {
    off: usize,
    rows: usize,
    cols: usize,
}

impl Dense {
    fn at(&self, r: usize, c: usize) -> usize {
        self.off + c * self.rows + r
    }

    fn read(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, &x[self.off..self.off + self.rows * self.cols])
    }
}

/// Adds `coef · (A V)[i, j]` to `e`, where `V` is a dense variable block.
fn add_product(e: &mut Affine, a: &DMatrix<f64>, i: usize, v: Dense, j: usize, coef: f64) {
    for t in 0..v.rows {
        e.add(v.at(t, j), coef * a[(i, t)]);
    }
}

fn equality_rows_product(pr: &mut ConicProblem, a: &DMatrix<f64>, v: Dense, rhs: impl Fn(usize, usize) -> Affine) {
    for i in 0..a.nrows() {
        for j in 0..v.cols {
            let mut e = rhs(i, j);
            add_product(&mut e, a, i, v, j, 1.0);
            pr.eq.push(e);
        }
    }
}

fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    linalg::sym_eig_range(m).0
}

pub fn solve_nonlinear(problem: &NonlinearSdpProblem) -> Result<SynthesisResult> {
    let dm = problem.dm;
    if dm.mode != Mode::Nonlinear {
        return Err(Error::DimensionMismatch("nonlinear synthesis needs nonlinear-mode data".into()));
    }
    let (n, nst, nz, t) = (dm.n, dm.n_state(), dm.n_z(), dm.t());
    let r2 = nz - nst;
    let r = problem.r_q.ncols();
    if problem.r_q.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "R_Q has {} rows, n = {n}",
            problem.r_q.nrows()
        )));
    }
    if !(problem.eps_pd > 0.0) || !(problem.alpha_min > 0.0) {
        return Err(Error::InvalidParams("eps_pd and alpha_min must be positive".into()));
    }
    let mut rq = DMatrix::zeros(nst, r);
    rq.view_mut((0, 0), (n, r)).copy_from(&problem.r_q);

    let p1 = Layout { n_sym: nst, sym_off: 0 };
    let y1 = Dense { off: p1.sym_len(), rows: t, cols: nst };
    let g2 = Dense { off: y1.off + t * nst, rows: t, cols: r2 };
    let alpha = g2.off + t * r2;
    let mut pr = ConicProblem::new(alpha + 1);

    // 𝓩₀ Y₁ = [P₁; 0]
    equality_rows_product(&mut pr, &dm.z0, y1, |i, j| {
        if i < nst {
            Affine::var(p1.sym(i, j), -1.0)
        } else {
            Affine::default()
        }
    });
    let n_eq_a = pr.eq.len();
    // 𝓩₀ G₂ = [0; I]
    equality_rows_product(&mut pr, &dm.z0, g2, |i, j| Affine::constant(if i == nst + j { -1.0 } else { 0.0 }));
    let n_eq_c = pr.eq.len();
    // 𝓜 [Y₁ G₂] = 0
    equality_rows_product(&mut pr, &dm.m_red, y1, |_, _| Affine::default());
    equality_rows_product(&mut pr, &dm.m_red, g2, |_, _| Affine::default());

    // −LMI ⪰ 0
    let dim = nst + r2 + r;
    let mut f = SymAffine::zeros(dim);
    for i in 0..nst {
        for j in i..nst {
            let e = f.at(i, j);
            add_product(e, &dm.z1, i, y1, j, -1.0);
            add_product(e, &dm.z1, j, y1, i, -1.0);
            if i == j {
                e.add(alpha, -1.0);
            }
        }
        for c in 0..r2 {
            add_product(f.at(i, nst + c), &dm.z1, i, g2, c, -1.0);
        }
        for c in 0..r {
            let e = f.at(i, nst + r2 + c);
            for k in 0..nst {
                e.add(p1.sym(i, k), -rq[(k, c)]);
            }
        }
    }
    for k in nst..dim {
        *f.at(k, k) = Affine::constant(1.0);
    }
    pr.psd.push(f);

    // P₁ − εI ⪰ 0
    let mut pd = SymAffine::zeros(nst);
    for i in 0..nst {
        for j in i..nst {
            let e = pd.at(i, j);
            e.add(p1.sym(i, j), 1.0);
            if i == j {
                e.c = -problem.eps_pd;
            }
        }
    }
    pr.psd.push(pd);
    pr.nonneg.push(Affine { terms: vec![(alpha, 1.0)], c: -problem.alpha_min });

    if let Objective::MaximizeAlpha { kappa } = problem.objective {
        let mut ub = SymAffine::zeros(nst);
        for i in 0..nst {
            for j in i..nst {
                let e = ub.at(i, j);
                e.add(p1.sym(i, j), -1.0);
                if i == j {
                    e.c = kappa;
                }
            }
        }
        pr.psd.push(ub);
        pr.q.push((alpha, -1.0));
    }

    let sol = pr.solve();
    match sol.outcome {
        Outcome::Infeasible => {
            return Err(Error::Infeasible(format!(
                "solver certified infeasibility ({}, {} iterations)",
                sol.status, sol.iterations
            )))
        }
        Outcome::Failed => {
            return Err(Error::NumericalFailure(format!(
                "solver stopped with {} after {} iterations",
                sol.status, sol.iterations
            )))
        }
        Outcome::Solved => {}
    }
    let x = &sol.x;
    let p1_m = p1.read_sym(x);
    let y1_m = y1.read(x);
    let g2_m = g2.read(x);
    let alpha_v = x[alpha];

    let eq_vals: Vec<f64> = pr.eq.iter().map(|e| e.eval(x).abs()).collect();
    let max_of = |s: &[f64]| s.iter().fold(0.0_f64, |m, v| m.max(*v));
    let mut per = BTreeMap::new();
    per.insert("z0_y1".to_string(), max_of(&eq_vals[..n_eq_a]));
    per.insert("z0_g2".to_string(), max_of(&eq_vals[n_eq_a..n_eq_c]));
    per.insert("m_annihilation".to_string(), max_of(&eq_vals[n_eq_c..]));
    let lmi = nonlinear_lmi(dm, &rq, &p1_m, &y1_m, &g2_m, alpha_v);
    let lmi_min_eig = min_sym_eig(&(-lmi));
    let pd_min_eig = min_sym_eig(&p1_m);
    per.insert("alpha_margin".to_string(), alpha_v - problem.alpha_min);
    per.insert("p1_margin".to_string(), pd_min_eig - problem.eps_pd);
    let residuals = Residuals { equality_max: max_of(&eq_vals), lmi_min_eig, pd_min_eig, per_constraint: per };

    let g = linalg::hstack(&[&(&y1_m * invert_spd(&p1_m)?), &g2_m]);
    let k = &dm.u0 * g;
    Ok(SynthesisResult {
        mode: Mode::Nonlinear,
        k,
        certificate: Certificate::Nonlinear { p1: p1_m, y1: y1_m, g2: g2_m, alpha: alpha_v },
        solver_status: sol.status,
        iterations: sol.iterations,
        solve_seconds: sol.seconds,
        residuals,
        warnings: recommended_samples(dm),
    })
}

fn invert_spd(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    p.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NumericalFailure("certificate matrix is not positive definite".into()))
}

/// The 3×3 block matrix of the nonlinear LMI, evaluated at a point.
pub fn nonlinear_lmi(
    dm: &DataMatrices,
    rq_padded: &DMatrix<f64>,
    p1: &DMatrix<f64>,
    y1: &DMatrix<f64>,
    g2: &DMatrix<f64>,
    alpha: f64,
) -> DMatrix<f64> {
    let nst = p1.nrows();
    let (r2, r) = (g2.ncols(), rq_padded.ncols());
    let dim = nst + r2 + r;
    let zy = &dm.z1 * y1;
    let zg = &dm.z1 * g2;
    let pr = p1 * rq_padded;
    let mut f = DMatrix::zeros(dim, dim);
    f.view_mut((0, 0), (nst, nst))
        .copy_from(&(&zy + zy.transpose() + DMatrix::identity(nst, nst) * alpha));
    f.view_mut((0, nst), (nst, r2)).copy_from(&zg);
    f.view_mut((nst, 0), (r2, nst)).copy_from(&zg.transpose());
    f.view_mut((0, nst + r2), (nst, r)).copy_from(&pr);
    f.view_mut((nst + r2, 0), (r, nst)).copy_from(&pr.transpose());
    for k in nst..dim {
        f[(k, k)] = -1.0;
    }
    f
}

pub fn solve_linear(problem: &LinearSdpProblem) -> Result<SynthesisResult> {
    let dm = problem.dm;
    if dm.mode != Mode::Linear {
        return Err(Error::DimensionMismatch("linear synthesis needs linear-mode data".into()));
    }
    let (nst, t) = (dm.n_state(), dm.t());
    let eps = problem.eps.unwrap_or(1e-6 * dm.z1.norm());
    if !(eps > 0.0) {
        return Err(Error::InvalidParams("eps must be positive".into()));
    }
    let xl = Layout { n_sym: nst, sym_off: 0 };
    let y = Dense { off: xl.sym_len(), rows: t, cols: nst };
    let mut pr = ConicProblem::new(y.off + t * nst);

    // 𝓩₀ Y = X
    equality_rows_product(&mut pr, &dm.z0, y, |i, j| Affine::var(xl.sym(i, j), -1.0));
    let n_eq_x = pr.eq.len();
    // 𝓜 Y = 0
    equality_rows_product(&mut pr, &dm.m_red, y, |_, _| Affine::default());

    // −(𝓩₁Y + Yᵀ𝓩₁ᵀ) − εI ⪰ 0
    let mut f = SymAffine::zeros(nst);
    for i in 0..nst {
        for j in i..nst {
            let e = f.at(i, j);
            add_product(e, &dm.z1, i, y, j, -1.0);
            add_product(e, &dm.z1, j, y, i, -1.0);
            if i == j {
                e.c = -eps;
            }
        }
    }
    pr.psd.push(f);
    let mut pd = SymAffine::zeros(nst);
    for i in 0..nst {
        for j in i..nst {
            let e = pd.at(i, j);
            e.add(xl.sym(i, j), 1.0);
            if i == j {
                e.c = -eps;
            }
        }
    }
    pr.psd.push(pd);

    let sol = pr.solve();
    match sol.outcome {
        Outcome::Infeasible => {
            return Err(Error::Infeasible(format!(
                "solver certified infeasibility ({}, {} iterations)",
                sol.status, sol.iterations
            )))
        }
        Outcome::Failed => {
            return Err(Error::NumericalFailure(format!(
                "solver stopped with {} after {} iterations",
                sol.status, sol.iterations
            )))
        }
        Outcome::Solved => {}
    }
    let xv = &sol.x;
    let x_m = xl.read_sym(xv);
    let y_m = y.read(xv);
    let eq_vals: Vec<f64> = pr.eq.iter().map(|e| e.eval(xv).abs()).collect();
    let max_of = |s: &[f64]| s.iter().fold(0.0_f64, |m, v| m.max(*v));
    let zy = &dm.z1 * &y_m;
    let lmi = &zy + zy.transpose();
    let mut per = BTreeMap::new();
    per.insert("z0_y".to_string(), max_of(&eq_vals[..n_eq_x]));
    per.insert("m_annihilation".to_string(), max_of(&eq_vals[n_eq_x..]));
    per.insert("eps".to_string(), eps);
    let residuals = Residuals {
        equality_max: max_of(&eq_vals),
        lmi_min_eig: min_sym_eig(&(-lmi)),
        pd_min_eig: min_sym_eig(&x_m),
        per_constraint: per,
    };
    let k = &dm.u0 * &y_m * invert_spd(&x_m)?;
    Ok(SynthesisResult {
        mode: Mode::Linear,
        k,
        certificate: Certificate::Linear { x: x_m, y: y_m },
        solver_status: sol.status,
        iterations: sol.iterations,
        solve_seconds: sol.seconds,
        residuals,
        warnings: recommended_samples(dm),
    })
}

/// Sampling box and count for the contraction check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginGrid {
    pub half_width: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for MarginGrid {
    fn default() -> Self {
        Self { half_width: 2.0, points: 1000, seed: 0 }
    }
}

/// `β̂ = −max_x λ_max(P^{1/2}(JᵀP⁻¹ + P⁻¹J)P^{1/2})` with
/// `J(x) = 𝓩₁𝓖 ∂𝓩/∂(x, η)` and `P` the certificate matrix, over uniform
/// random points in `[−h, h]ⁿ`. Positive means every sampled point contracts.
pub fn contractivity_margin(
    result: &SynthesisResult,
    dm: &DataMatrices,
    basis: &BasisLibrary,
    grid: &MarginGrid,
) -> Result<f64> {
    let f = result.closed_loop(dm);
    let (sqrt, isqrt) = linalg::spd_sqrt_pair(result.lyapunov())
        .ok_or_else(|| Error::NumericalFailure("certificate matrix is not positive definite".into()))?;
    let eval = |x: &[f64]| {
        let jz = calz_jacobian(basis, x, dm.n_eta, result.mode);
        let j = &f * jz;
        // P^{1/2} (Jᵀ P⁻¹ + P⁻¹ J) P^{1/2} = 2 sym(P^{−1/2} J P^{1/2})
        let core = &isqrt * j * &sqrt;
        let s = &core + core.transpose();
        SymmetricEigen::new(s).eigenvalues.max()
    };
    let points = if result.mode == Mode::Linear || basis.terms.is_empty() { 1 } else { grid.points.max(1) };
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    let mut worst = f64::NEG_INFINITY;
    let mut x = vec![0.0; basis.n];
    for k in 0..points {
        if k > 0 {
            x.iter_mut().for_each(|v| *v = rng.random_range(-grid.half_width..=grid.half_width));
        }
        worst = worst.max(eval(&x));
    }
    Ok(-worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SylvesterReport {
    #[serde(with = "crate::matser")]
    pub pi_x: DMatrix<f64>,
    #[serde(with = "crate::matser")]
    pub pi_eta: DMatrix<f64>,
    /// `max |C_e Πx + Q_e|`.
    pub regulation_residual: f64,
}

/// Solve `𝓟 + A_cl Π = Π S` for `Π` by a Kronecker linear solve and report
/// the regulation identity residual.
pub fn sylvester_verify(
    a_cl: &DMatrix<f64>,
    p_aug: &DMatrix<f64>,
    s: &DMatrix<f64>,
    c_e: &DMatrix<f64>,
    q_e: &DMatrix<f64>,
) -> Result<SylvesterReport> {
    let (na, nw) = (a_cl.nrows(), s.nrows());
    let n = c_e.ncols();
    if a_cl.ncols() != na || p_aug.shape() != (na, nw) || n > na || q_e.shape() != (c_e.nrows(), nw) {
        return Err(Error::DimensionMismatch("Sylvester operands".into()));
    }
    // vec(ΠS − A_cl Π) = (Sᵀ ⊗ I − I ⊗ A_cl) vec Π
    let big = s.transpose().kronecker(&DMatrix::identity(na, na))
        - DMatrix::identity(nw, nw).kronecker(a_cl);
    let sv = linalg::singular_values(&big);
    let smin = sv.last().copied().unwrap_or(0.0);
    let smax = sv.first().copied().unwrap_or(0.0);
    if smin <= 1e-12 * smax.max(1.0) {
        return Err(Error::SingularSylvester(smin));
    }
    let rhs = DMatrix::from_column_slice(na * nw, 1, p_aug.as_slice());
    let vec_pi = big
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSylvester(smin))?;
    let pi = DMatrix::from_column_slice(na, nw, vec_pi.as_slice());
    let pi_x = pi.rows(0, n).into_owned();
    let pi_eta = pi.rows(n, na - n).into_owned();
    let regulation_residual = linalg::max_abs(&(c_e * &pi_x + q_e));
    Ok(SylvesterReport { pi_x, pi_eta, regulation_residual })
}

/// Largest `λ_max((∂Q/∂x)ᵀ(∂Q/∂x) − R_Q R_Qᵀ)` over random points in
/// `[−h, h]ⁿ`; `≤ 0` means the sector bound held at every sample.
pub fn audit_rq(basis: &BasisLibrary, r_q: &DMatrix<f64>, grid: &MarginGrid) -> Result<f64> {
    if r_q.nrows() != basis.n {
        return Err(Error::DimensionMismatch(format!("R_Q has {} rows, n = {}", r_q.nrows(), basis.n)));
    }
    let rr = r_q * r_q.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    let mut worst = f64::NEG_INFINITY;
    let mut x = vec![0.0; basis.n];
    for k in 0..grid.points.max(1) {
        if k > 0 {
            x.iter_mut().for_each(|v| *v = rng.random_range(-grid.half_width..=grid.half_width));
        }
        let j = basis.q_jacobian(&x);
        worst = worst.max(linalg::sym_eig_range(&(j.transpose() * j - &rr)).1);
    }
    Ok(worst)
}
