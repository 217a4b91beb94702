//! Affine-expression front end for a linear-plus-PSD conic program, lowered
//! onto the Clarabel interior-point solver.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

/// `c + Σ aᵢ xᵢ`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub c: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), c }
    }

    pub fn var(i: usize, a: f64) -> Self {
        Self { terms: vec![(i, a)], c: 0.0 }
    }

    pub fn add(&mut self, i: usize, a: f64) {
        if a != 0.0 {
            self.terms.push((i, a));
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.c + self.terms.iter().map(|(i, a)| a * x[*i]).sum::<f64>()
    }
}

/// Symmetric affine matrix `F(x)`; only the upper triangle is stored, in
/// column-major order.
#[derive(Debug, Clone)]
pub(crate) struct SymAffine {
    pub dim: usize,
    entries: Vec<Affine>,
}

impl SymAffine {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![Affine::default(); dim * (dim + 1) / 2] }
    }

    fn idx(i: usize, j: usize) -> usize {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        c * (c + 1) / 2 + r
    }

    pub fn at(&mut self, i: usize, j: usize) -> &mut Affine {
        &mut self.entries[Self::idx(i, j)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Solved,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone)]
pub(crate) struct ConicSolution {
    pub outcome: Outcome,
    pub status: String,
    pub x: Vec<f64>,
    pub iterations: u32,
    pub seconds: f64,
}

/// minimize `qᵀx` subject to `eq(x) = 0`, `nonneg(x) ≥ 0`, `psd(x) ⪰ 0`.
#[derive(Debug, Clone, Default)]
pub(crate) struct ConicProblem {
    pub n_vars: usize,
    pub q: Vec<(usize, f64)>,
    pub eq: Vec<Affine>,
    pub nonneg: Vec<Affine>,
    pub psd: Vec<SymAffine>,
}

impl ConicProblem {
    pub fn new(n_vars: usize) -> Self {
        Self { n_vars, ..Default::default() }
    }

    pub fn solve(&self) -> ConicSolution {
        // Clarabel form: A x + s = b, s ∈ K
        let (mut ri, mut ci, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut row = 0usize;
        let mut push = |e: &Affine, sign: f64, scale: f64, b: &mut Vec<f64>, row: &mut usize| {
            for &(i, a) in &e.terms {
                ri.push(*row);
                ci.push(i);
                vals.push(sign * scale * a);
            }
            b.push(-sign * scale * e.c);
            *row += 1;
        };
        // equalities: A x = b  ⇔  a·x = −c
        for e in &self.eq {
            push(e, 1.0, 1.0, &mut b, &mut row);
        }
        if !self.eq.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(self.eq.len()));
        }
        // s = e(x) = b − A x  ⇒  A = −a, b = c
        for e in &self.nonneg {
            push(e, -1.0, 1.0, &mut b, &mut row);
        }
        if !self.nonneg.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(self.nonneg.len()));
        }
        for blk in &self.psd {
            for c in 0..blk.dim {
                for r in 0..=c {
                    let scale = if r == c { 1.0 } else { std::f64::consts::SQRT_2 };
                    push(&blk.entries[SymAffine::idx(r, c)], -1.0, scale, &mut b, &mut row);
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(blk.dim));
        }

        let a = CscMatrix::new_from_triplets(row, self.n_vars, ri, ci, vals);
        let p = CscMatrix::zeros((self.n_vars, self.n_vars));
        let mut q = vec![0.0; self.n_vars];
        for &(i, v) in &self.q {
            q[i] += v;
        }
        let settings = DefaultSettingsBuilder::default()
            .verbose(std::env::var_os("DDREG_VERBOSE").is_some())
            .max_iter(400)
            .build()
            .expect("static solver settings");
        let start = Instant::now();
        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                return ConicSolution {
                    outcome: Outcome::Failed,
                    status: format!("setup error: {e}"),
                    x: vec![0.0; self.n_vars],
                    iterations: 0,
                    seconds: 0.0,
                }
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let outcome = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Outcome::Solved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                Outcome::Infeasible
            }
            _ => Outcome::Failed,
        };
        ConicSolution {
            outcome,
            status: format!("{:?}", sol.status),
            x: sol.x.clone(),
            iterations: sol.iterations,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}
