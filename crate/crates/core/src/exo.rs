//! Exosystem `ẇ = S w`, its eigenstructure, and the known signal matrices
//! used to filter the unmeasured exogenous contribution out of the data.
//!
//! A [`SpectralSpec`] lists each distinct eigenvalue of `S` together with the
//! sizes of all its Jordan blocks. Complex eigenvalues are stored as a single
//! `(mu, psi)` pair with `psi > 0`; the conjugate is implicit. The real Jordan
//! form used throughout is
//!
//! * real `λ`, size `k`: `λ` on the diagonal, ones on the superdiagonal;
//! * pair `μ ± iψ`, size `k`: `C = [[μ, ψ], [−ψ, μ]]` on the block diagonal and
//!   `I₂` on the block superdiagonal.
//!
//! With this convention `w(t) = 𝓣 L M(t)`, where `M(t)` stacks the rows
//! `tʲ/j! e^{λt}` (highest power first) and the `(cos, sin)` pairs
//! `tʲ/j! e^{μt} (cos ψt, sin ψt)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance used to decide whether two eigenvalues coincide.
pub const EIG_CLUSTER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RealMode {
    pub lambda: f64,
    /// Sizes of every Jordan block for this eigenvalue.
    pub blocks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMode {
    pub mu: f64,
    pub psi: f64,
    pub blocks: Vec<usize>,
}

impl RealMode {
    pub fn max_block(&self) -> usize {
        self.blocks.iter().copied().max().unwrap_or(0)
    }
}

impl ComplexMode {
    pub fn max_block(&self) -> usize {
        self.blocks.iter().copied().max().unwrap_or(0)
    }
}

/// One entry of the serialized spectrum: either `lambda` or `mu`/`psi`, with
/// `block` (single Jordan block) or `blocks` (several). Entries that repeat an
/// eigenvalue contribute additional Jordan blocks to it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpectralEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<usize>>,
}

/// Eigenstructure of `S`: distinct eigenvalues and their Jordan block sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SpectralEntry>", into = "Vec<SpectralEntry>")]
pub struct SpectralSpec {
    real: Vec<RealMode>,
    complex: Vec<ComplexMode>,
}

impl SpectralSpec {
    pub fn new(real: Vec<RealMode>, complex: Vec<ComplexMode>) -> Result<Self> {
        let spec = Self { real, complex };
        spec.validate()?;
        Ok(spec)
    }

    /// Real eigenvalues only, one Jordan block of the given size each.
    pub fn from_real(modes: &[(f64, usize)]) -> Result<Self> {
        Self::new(
            modes
                .iter()
                .map(|&(lambda, k)| RealMode { lambda, blocks: vec![k] })
                .collect(),
            Vec::new(),
        )
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.real.is_empty() && self.complex.is_empty() {
            return bad("spectrum is empty".into());
        }
        for m in &self.real {
            if !m.lambda.is_finite() {
                return bad(format!("non-finite eigenvalue {}", m.lambda));
            }
            if m.blocks.is_empty() || m.blocks.contains(&0) {
                return bad(format!("eigenvalue {} needs positive block sizes", m.lambda));
            }
        }
        for m in &self.complex {
            if !(m.psi > 0.0) || !m.mu.is_finite() || !m.psi.is_finite() {
                return bad(format!("complex mode ({}, {}) needs psi > 0", m.mu, m.psi));
            }
            if m.blocks.is_empty() || m.blocks.contains(&0) {
                return bad(format!("pair ({}, {}) needs positive block sizes", m.mu, m.psi));
            }
        }
        for (i, a) in self.real.iter().enumerate() {
            for b in &self.real[i + 1..] {
                if (a.lambda - b.lambda).abs() <= EIG_CLUSTER_TOL {
                    return bad(format!("eigenvalue {} listed twice", a.lambda));
                }
            }
        }
        for (i, a) in self.complex.iter().enumerate() {
            for b in &self.complex[i + 1..] {
                if (a.mu - b.mu).abs() <= EIG_CLUSTER_TOL && (a.psi - b.psi).abs() <= EIG_CLUSTER_TOL {
                    return bad(format!("pair ({}, {}) listed twice", a.mu, a.psi));
                }
            }
        }
        Ok(())
    }

    pub fn real_modes(&self) -> &[RealMode] {
        &self.real
    }

    pub fn complex_modes(&self) -> &[ComplexMode] {
        &self.complex
    }

    /// State dimension `n_w` implied by the full block structure.
    pub fn n_w(&self) -> usize {
        self.real.iter().flat_map(|m| &m.blocks).sum::<usize>()
            + 2 * self.complex.iter().flat_map(|m| &m.blocks).sum::<usize>()
    }

    /// Degree `d` of the minimal polynomial of `S`.
    pub fn minimal_poly_degree(&self) -> usize {
        self.real.iter().map(RealMode::max_block).sum::<usize>()
            + 2 * self.complex.iter().map(ComplexMode::max_block).sum::<usize>()
    }

    /// Coefficients `s₀ … s_{d−1}` of the monic minimal polynomial
    /// `m_S(λ) = s₀ + s₁λ + … + s_{d−1}λ^{d−1} + λ^d`.
    pub fn minimal_poly_coeffs(&self) -> Vec<f64> {
        let mut poly = vec![1.0];
        for m in &self.real {
            for _ in 0..m.max_block() {
                poly = poly_mul(&poly, &[-m.lambda, 1.0]);
            }
        }
        for m in &self.complex {
            let quad = [m.mu * m.mu + m.psi * m.psi, -2.0 * m.mu, 1.0];
            for _ in 0..m.max_block() {
                poly = poly_mul(&poly, &quad);
            }
        }
        poly.pop();
        poly
    }

    /// Real Jordan form `J` in the ordering used by [`build_m`].
    pub fn real_jordan_form(&self) -> DMatrix<f64> {
        let mut blocks = Vec::new();
        for m in &self.real {
            for &k in &m.blocks {
                let mut j = DMatrix::from_diagonal_element(k, k, m.lambda);
                for i in 0..k.saturating_sub(1) {
                    j[(i, i + 1)] = 1.0;
                }
                blocks.push(j);
            }
        }
        for m in &self.complex {
            for &k in &m.blocks {
                let mut j = DMatrix::zeros(2 * k, 2 * k);
                for b in 0..k {
                    let r = 2 * b;
                    j[(r, r)] = m.mu;
                    j[(r, r + 1)] = m.psi;
                    j[(r + 1, r)] = -m.psi;
                    j[(r + 1, r + 1)] = m.mu;
                    if b + 1 < k {
                        j[(r, r + 2)] = 1.0;
                        j[(r + 1, r + 3)] = 1.0;
                    }
                }
                blocks.push(j);
            }
        }
        linalg::block_diag(&blocks)
    }

    /// Derive the spectrum of `s` by clustering its eigenvalues within `tol`
    /// and reading block sizes off the nullities of `(S − λI)ʲ`.
    pub fn from_matrix(s: &DMatrix<f64>, tol: f64) -> Result<Self> {
        if !s.is_square() || s.nrows() == 0 {
            return Err(Error::DimensionMismatch("S must be square and nonempty".into()));
        }
        let n = s.nrows();
        let scale = s.norm().max(1.0);
        let mut clusters: Vec<(Complex64, usize)> = Vec::new();
        for (re, im) in linalg::eigenvalues(s) {
            let z = Complex64::new(re, im);
            match clusters.iter_mut().find(|(c, _)| (*c - z).norm() <= tol * scale) {
                Some((c, cnt)) => {
                    *c = (*c * *cnt as f64 + z) / (*cnt as f64 + 1.0);
                    *cnt += 1;
                }
                None => clusters.push((z, 1)),
            }
        }
        let mut real = Vec::new();
        let mut complex = Vec::new();
        for (z, mult) in clusters {
            if z.im.abs() <= tol * scale {
                let nm = s - DMatrix::identity(n, n) * z.re;
                real.push(RealMode { lambda: z.re, blocks: block_sizes(&nm, mult, tol)? });
            } else if z.im > 0.0 {
                let sc = s.map(|v| Complex64::new(v, 0.0));
                let nm = sc - DMatrix::identity(n, n) * z;
                complex.push(ComplexMode { mu: z.re, psi: z.im, blocks: block_sizes(&nm, mult, tol)? });
            }
        }
        real.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
        complex.sort_by(|a, b| a.psi.partial_cmp(&b.psi).unwrap().then(a.mu.partial_cmp(&b.mu).unwrap()));
        Self::new(real, complex)
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn null_tol(n_mat_norm: f64, power: usize, tol: f64) -> f64 {
    tol.max(1e-8) * n_mat_norm.max(1.0).powi(power as i32)
}

fn block_sizes<T>(n_mat: &DMatrix<T>, mult: usize, tol: f64) -> Result<Vec<usize>>
where
    T: linalg::SvdScalar,
{
    let norm = n_mat.norm();
    let mut nullity = vec![0usize];
    let mut pow = DMatrix::<T>::identity(n_mat.nrows(), n_mat.ncols());
    for j in 1..=mult {
        pow = &pow * n_mat;
        nullity.push(linalg::null_space(&pow, null_tol(norm, j, tol)).ncols());
        if nullity[j] >= mult {
            break;
        }
    }
    if *nullity.last().unwrap() != mult {
        return Err(Error::SpectralMismatch(format!(
            "generalized eigenspace has dimension {} but algebraic multiplicity is {mult}",
            nullity.last().unwrap()
        )));
    }
    // blocks of size >= j: nullity[j] - nullity[j-1]
    let top = nullity.len() - 1;
    let at_least = |j: usize| if j > top { 0 } else { nullity[j] - nullity[j - 1] };
    let mut blocks = Vec::new();
    for j in (1..=top).rev() {
        for _ in 0..(at_least(j) - at_least(j + 1)) {
            blocks.push(j);
        }
    }
    Ok(blocks)
}

impl TryFrom<Vec<SpectralEntry>> for SpectralSpec {
    type Error = Error;

    fn try_from(entries: Vec<SpectralEntry>) -> Result<Self> {
        let mut real: Vec<RealMode> = Vec::new();
        let mut complex: Vec<ComplexMode> = Vec::new();
        for e in entries {
            let blocks = match (e.block, e.blocks) {
                (Some(k), None) => vec![k],
                (None, Some(ks)) => ks,
                (None, None) => vec![1],
                (Some(_), Some(_)) => {
                    return Err(Error::Config("spectrum entry sets both `block` and `blocks`".into()))
                }
            };
            match (e.lambda, e.mu, e.psi) {
                (Some(lambda), None, None) => {
                    match real.iter_mut().find(|m| m.lambda == lambda) {
                        Some(m) => m.blocks.extend(blocks),
                        None => real.push(RealMode { lambda, blocks }),
                    }
                }
                (None, Some(mu), Some(psi)) => {
                    match complex.iter_mut().find(|m| m.mu == mu && m.psi == psi) {
                        Some(m) => m.blocks.extend(blocks),
                        None => complex.push(ComplexMode { mu, psi, blocks }),
                    }
                }
                _ => {
                    return Err(Error::Config(
                        "spectrum entry needs either `lambda` or both `mu` and `psi`".into(),
                    ))
                }
            }
        }
        SpectralSpec::new(real, complex)
    }
}

impl From<SpectralSpec> for Vec<SpectralEntry> {
    fn from(spec: SpectralSpec) -> Self {
        let blocks_field = |b: Vec<usize>| {
            if b.len() == 1 {
                (Some(b[0]), None)
            } else {
                (None, Some(b))
            }
        };
        let mut out = Vec::new();
        for m in spec.real {
            let (block, blocks) = blocks_field(m.blocks);
            out.push(SpectralEntry { lambda: Some(m.lambda), mu: None, psi: None, block, blocks });
        }
        for m in spec.complex {
            let (block, blocks) = blocks_field(m.blocks);
            out.push(SpectralEntry { lambda: None, mu: Some(m.mu), psi: Some(m.psi), block, blocks });
        }
        out
    }
}

/// Samples of the known basis functions on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    pub values: DMatrix<f64>,
    pub times: Vec<f64>,
}

impl SignalMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|v| v as f64).product()
}

fn push_real_rows(rows: &mut Vec<Vec<f64>>, lambda: f64, k: usize, times: &[f64]) {
    for j in (0..k).rev() {
        let f = factorial(j);
        rows.push(times.iter().map(|&t| t.powi(j as i32) / f * (lambda * t).exp()).collect());
    }
}

fn push_complex_rows(rows: &mut Vec<Vec<f64>>, mu: f64, psi: f64, k: usize, times: &[f64]) {
    for j in (0..k).rev() {
        let f = factorial(j);
        let amp: Vec<f64> = times.iter().map(|&t| t.powi(j as i32) / f * (mu * t).exp()).collect();
        rows.push(times.iter().zip(&amp).map(|(&t, a)| a * (psi * t).cos()).collect());
        rows.push(times.iter().zip(&amp).map(|(&t, a)| a * (psi * t).sin()).collect());
    }
}

/// Build the signal matrix on `times`.
///
/// `reduced = true` keeps one block-row per distinct eigenvalue (the largest
/// Jordan block), giving the `d × T` matrix used in the synthesis; otherwise
/// every Jordan block contributes and the result has `n_w` rows.
pub fn build_m(spec: &SpectralSpec, times: &[f64], reduced: bool) -> SignalMatrix {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for m in spec.real_modes() {
        if reduced {
            push_real_rows(&mut rows, m.lambda, m.max_block(), times);
        } else {
            for &k in &m.blocks {
                push_real_rows(&mut rows, m.lambda, k, times);
            }
        }
    }
    for m in spec.complex_modes() {
        if reduced {
            push_complex_rows(&mut rows, m.mu, m.psi, m.max_block(), times);
        } else {
            for &k in &m.blocks {
                push_complex_rows(&mut rows, m.mu, m.psi, k, times);
            }
        }
    }
    let values = DMatrix::from_fn(rows.len(), times.len(), |i, j| rows[i][j]);
    SignalMatrix { values, times: times.to_vec() }
}

/// The exosystem `ẇ = S w` with initial state `w0`.
#[derive(Debug, Clone)]
pub struct Exosystem {
    s: DMatrix<f64>,
    w0: DVector<f64>,
    period: Option<f64>,
    spec: SpectralSpec,
}

impl Exosystem {
    pub fn new(
        s: DMatrix<f64>,
        w0: DVector<f64>,
        period: Option<f64>,
        spec: SpectralSpec,
    ) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::DimensionMismatch(format!("S is {}x{}", s.nrows(), s.ncols())));
        }
        if w0.len() != s.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "w0 has {} entries, S is {}x{}",
                w0.len(),
                s.nrows(),
                s.ncols()
            )));
        }
        if spec.n_w() != s.nrows() {
            return Err(Error::SpectralMismatch(format!(
                "spectrum accounts for {} states, S has {}",
                spec.n_w(),
                s.nrows()
            )));
        }
        if let Some(d) = period {
            if !(d > 0.0) {
                return Err(Error::InvalidParams(format!("period must be positive, got {d}")));
            }
            let e = (&s * d).exp();
            let dev = linalg::max_abs(&(e - DMatrix::identity(s.nrows(), s.nrows())));
            if dev > 1e-8 {
                return Err(Error::InvalidParams(format!(
                    "exp(S·D) deviates from I by {dev:.3e}; exosystem is not {d}-periodic"
                )));
            }
        }
        Ok(Self { s, w0, period, spec })
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn w0(&self) -> &DVector<f64> {
        &self.w0
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn spec(&self) -> &SpectralSpec {
        &self.spec
    }

    pub fn n_w(&self) -> usize {
        self.s.nrows()
    }

    /// Same exosystem started from a different initial state.
    pub fn with_w0(&self, w0: DVector<f64>) -> Result<Self> {
        Self::new(self.s.clone(), w0, self.period, self.spec.clone())
    }

    /// `exp(S dt)`.
    pub fn propagator(&self, dt: f64) -> DMatrix<f64> {
        (&self.s * dt).exp()
    }

    /// `w(t) = exp(S t) w0`.
    pub fn simulate_w(&self, t: f64) -> DVector<f64> {
        self.propagator(t) * &self.w0
    }

    /// Samples `[w(t₀) … w(t_{T−1})]`.
    pub fn sample_w(&self, times: &[f64]) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = times.iter().map(|&t| self.simulate_w(t)).collect();
        DMatrix::from_columns(&cols)
    }

    pub fn minimal_poly_degree(&self) -> usize {
        self.spec.minimal_poly_degree()
    }

    /// Real Jordan basis `𝓣` with `𝓣⁻¹ S 𝓣 = J` in the spec's ordering.
    ///
    /// Only meaningful as a verification aid: the synthesis never needs it.
    pub fn jordan_basis(&self) -> Result<DMatrix<f64>> {
        let n = self.n_w();
        let scale = self.s.norm().max(1.0);
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
        for m in self.spec.real_modes() {
            let nm = &self.s - DMatrix::identity(n, n) * m.lambda;
            for chain in jordan_chains(&nm, &m.blocks)? {
                cols.extend(chain);
            }
        }
        for m in self.spec.complex_modes() {
            let sc = self.s.map(|v| Complex64::new(v, 0.0));
            let nm = sc - DMatrix::identity(n, n) * Complex64::new(m.mu, m.psi);
            for chain in jordan_chains(&nm, &m.blocks)? {
                for z in chain {
                    cols.push(z.map(|c| c.re));
                    cols.push(z.map(|c| c.im));
                }
            }
        }
        let t = DMatrix::from_columns(&cols);
        let j = self.spec.real_jordan_form();
        let resid = (&self.s * &t - &t * &j).norm();
        if resid > 1e-8 * scale * t.norm() {
            return Err(Error::SpectralMismatch(format!("Jordan residual {resid:.3e}")));
        }
        if linalg::rank(&t, 1e-10) < n {
            return Err(Error::SpectralMismatch("Jordan basis is singular".into()));
        }
        Ok(t)
    }

    /// Block-diagonal `L` built from `ζ = 𝓣⁻¹ w(0)`.
    pub fn build_l(&self) -> Result<DMatrix<f64>> {
        let t = self.jordan_basis()?;
        let zeta = t
            .lu()
            .solve(&self.w0)
            .ok_or_else(|| Error::SpectralMismatch("Jordan basis is singular".into()))?;
        Ok(l_from_jordan_coords(&self.spec, &zeta))
    }
}

/// Upper-triangular Toeplitz blocks of `L` for Jordan coordinates `zeta`.
pub fn l_from_jordan_coords(spec: &SpectralSpec, zeta: &DVector<f64>) -> DMatrix<f64> {
    let mut blocks = Vec::new();
    let mut off = 0;
    for m in spec.real_modes() {
        for &k in &m.blocks {
            let z = zeta.rows(off, k);
            // row r, column c >= r holds zeta_{k-(c-r)} (1-based)
            blocks.push(DMatrix::from_fn(k, k, |r, c| if c >= r { z[k - 1 - (c - r)] } else { 0.0 }));
            off += k;
        }
    }
    for m in spec.complex_modes() {
        for &k in &m.blocks {
            let z = zeta.rows(off, 2 * k);
            let mut l = DMatrix::zeros(2 * k, 2 * k);
            for br in 0..k {
                for bc in br..k {
                    let pair = k - 1 - (bc - br);
                    let (a, b) = (z[2 * pair], z[2 * pair + 1]);
                    l[(2 * br, 2 * bc)] = a;
                    l[(2 * br, 2 * bc + 1)] = b;
                    l[(2 * br + 1, 2 * bc)] = b;
                    l[(2 * br + 1, 2 * bc + 1)] = -a;
                }
            }
            blocks.push(l);
            off += 2 * k;
        }
    }
    linalg::block_diag(&blocks)
}

/// Jordan chains `[t₁ … t_k]` (t₁ an eigenvector, `N t_j = t_{j−1}`) for the
/// nilpotent part `N = S − λI`, one chain per entry of `blocks`.
fn jordan_chains<T>(n_mat: &DMatrix<T>, blocks: &[usize]) -> Result<Vec<Vec<DVector<T>>>>
where
    T: linalg::SvdScalar,
{
    let dim = n_mat.nrows();
    let kmax = blocks.iter().copied().max().unwrap_or(0);
    let norm = n_mat.norm();
    let mut powers = vec![DMatrix::<T>::identity(dim, dim)];
    for j in 1..=kmax + 1 {
        let next = &powers[j - 1] * n_mat;
        powers.push(next);
    }
    let mut kernels = vec![DMatrix::<T>::zeros(dim, 0)];
    for j in 1..=kmax + 1 {
        let k = linalg::null_space(&powers[j], null_tol(norm, j, 0.0));
        let expected: usize = blocks.iter().map(|&b| b.min(j)).sum();
        if k.ncols() != expected {
            return Err(Error::SpectralMismatch(format!(
                "dim ker (S - λI)^{j} = {} but the block sizes {blocks:?} imply {expected}",
                k.ncols()
            )));
        }
        kernels.push(k);
    }

    let mut tops: Vec<Option<DVector<T>>> = vec![None; blocks.len()];
    for k in (1..=kmax).rev() {
        let wanted: Vec<usize> = (0..blocks.len()).filter(|&i| blocks[i] == k).collect();
        if wanted.is_empty() {
            continue;
        }
        let mut basis: Vec<DVector<T>> = Vec::new();
        let add = |v: DVector<T>, basis: &mut Vec<DVector<T>>| -> Option<DVector<T>> {
            let mut r = v.clone();
            for _ in 0..2 {
                for q in basis.iter() {
                    let c = q.dotc(&r);
                    r -= q * c;
                }
            }
            let nr = r.norm();
            if nr > 1e-6 * v.norm().max(f64::MIN_POSITIVE) {
                let q = r.unscale(nr);
                basis.push(q.clone());
                Some(q)
            } else {
                None
            }
        };
        for c in kernels[k - 1].column_iter() {
            add(c.into_owned(), &mut basis);
        }
        for (i, top) in tops.iter().enumerate() {
            if let Some(u) = top {
                let lifted = &powers[blocks[i] - k] * u;
                add(lifted, &mut basis);
            }
        }
        let mut picked = 0;
        for c in kernels[k].column_iter() {
            if picked == wanted.len() {
                break;
            }
            if let Some(q) = add(c.into_owned(), &mut basis) {
                tops[wanted[picked]] = Some(q);
                picked += 1;
            }
        }
        if picked < wanted.len() {
            return Err(Error::SpectralMismatch(format!(
                "could not find {} chains of length {k}",
                wanted.len()
            )));
        }
    }

    Ok(blocks
        .iter()
        .zip(tops)
        .map(|(&k, top)| {
            let v = top.expect("every block assigned a chain");
            (1..=k).map(|j| &powers[k - j] * &v).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn example2_spec() -> SpectralSpec {
        SpectralSpec::new(
            vec![RealMode { lambda: 0.0, blocks: vec![1, 1] }],
            vec![ComplexMode { mu: 0.0, psi: 1.0, blocks: vec![1] }],
        )
        .unwrap()
    }

    fn example1_spec() -> SpectralSpec {
        SpectralSpec::new(
            vec![RealMode { lambda: 0.0, blocks: vec![1] }],
            vec![
                ComplexMode { mu: 0.0, psi: 1.0, blocks: vec![1] },
                ComplexMode { mu: 0.0, psi: 2.0, blocks: vec![1] },
            ],
        )
        .unwrap()
    }

    fn example2_s() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            4,
            4,
            &[0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 1., 0., 0., -1., 0.],
        )
    }

    #[test]
    fn zero_generator_is_constant() {
        let exo = Exosystem::new(
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 3.0),
            None,
            SpectralSpec::from_real(&[(0.0, 1)]).unwrap(),
        )
        .unwrap();
        for t in [0.0, 1.0, 17.5] {
            assert_eq!(exo.simulate_w(t)[0], 3.0);
        }
        assert_eq!(exo.build_l().unwrap(), DMatrix::from_element(1, 1, 3.0));
    }

    #[test]
    fn harmonic_oscillator_closed_form() {
        let w0 = DVector::from_vec(vec![0.5, 2.0, 0.0, 1.0]);
        let exo = Exosystem::new(example2_s(), w0, Some(2.0 * PI), example2_spec()).unwrap();
        for t in [0.0, 0.3, 1.7, 5.0, 12.0] {
            let w = exo.simulate_w(t);
            assert!((w[2] - t.sin()).abs() < 1e-12);
            assert!((w[3] - t.cos()).abs() < 1e-12);
            assert!((w[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn non_periodic_exosystem_rejected() {
        let r = Exosystem::new(
            DMatrix::from_element(1, 1, 0.1),
            DVector::from_element(1, 1.0),
            Some(1.0),
            SpectralSpec::from_real(&[(0.1, 1)]).unwrap(),
        );
        assert!(matches!(r, Err(Error::InvalidParams(_))));
    }

    #[test]
    fn l_of_single_jordan_block() {
        // S already in Jordan form, so T = I and zeta = w0
        let s = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.0, 0.3]);
        let (a, b) = (1.5, -0.7);
        let exo = Exosystem::new(
            s,
            DVector::from_vec(vec![a, b]),
            None,
            SpectralSpec::from_real(&[(0.3, 2)]).unwrap(),
        )
        .unwrap();
        let l = exo.build_l().unwrap();
        let t = exo.jordan_basis().unwrap();
        // the basis may be rescaled; T L must equal the canonical product
        let expected = DMatrix::from_row_slice(2, 2, &[b, a, 0.0, b]);
        let m = build_m(exo.spec(), &[0.0, 0.4, 1.1], false);
        let canon = &expected * &m.values;
        assert!((&t * &l * &m.values - canon).abs().max() < 1e-12);
    }

    #[test]
    fn toeplitz_pattern_from_jordan_coords() {
        let spec = SpectralSpec::from_real(&[(0.3, 2)]).unwrap();
        let l = l_from_jordan_coords(&spec, &DVector::from_vec(vec![1.5, -0.7]));
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[-0.7, 1.5, 0.0, -0.7]));
        let spec = SpectralSpec::new(vec![], vec![ComplexMode { mu: 0.0, psi: 1.0, blocks: vec![1] }]).unwrap();
        let l = l_from_jordan_coords(&spec, &DVector::from_vec(vec![2.0, 3.0]));
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 3.0, -2.0]));
    }

    #[test]
    fn wrong_block_sizes_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let exo = Exosystem::new(
            s,
            DVector::from_vec(vec![1.0, 1.0]),
            None,
            SpectralSpec::new(vec![RealMode { lambda: 0.0, blocks: vec![1, 1] }], vec![]).unwrap(),
        )
        .unwrap();
        assert!(matches!(exo.build_l(), Err(Error::SpectralMismatch(_))));
    }

    #[test]
    fn reduced_m_examples() {
        let times = [0.0, 0.5, 1.0, 2.5];
        let m2 = build_m(&example2_spec(), &times, true);
        assert_eq!(m2.rows(), 3);
        let m1 = build_m(&example1_spec(), &times, true);
        assert_eq!(m1.rows(), 5);
        for (j, &t) in times.iter().enumerate() {
            let expect1 = [1.0, t.cos(), t.sin(), (2.0 * t).cos(), (2.0 * t).sin()];
            for (i, e) in expect1.iter().enumerate() {
                assert!((m1.values[(i, j)] - e).abs() < 1e-15);
            }
            for (i, e) in expect1[..3].iter().enumerate() {
                assert!((m2.values[(i, j)] - e).abs() < 1e-15);
            }
        }
        let full = build_m(&example2_spec(), &times, false);
        assert_eq!(full.rows(), 4);
    }

    #[test]
    fn defective_real_rows() {
        let spec = SpectralSpec::from_real(&[(-1.0, 2)]).unwrap();
        let m = build_m(&spec, &[0.0, 1.0, 2.0], true);
        for (j, t) in [0.0_f64, 1.0, 2.0].iter().enumerate() {
            assert!((m.values[(0, j)] - t * (-t).exp()).abs() < 1e-15);
            assert!((m.values[(1, j)] - (-t).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn minimal_polynomial() {
        assert_eq!(example2_spec().minimal_poly_degree(), 3);
        assert_eq!(example1_spec().minimal_poly_degree(), 5);
        assert_eq!(SpectralSpec::from_real(&[(0.0, 1)]).unwrap().minimal_poly_degree(), 1);
        // λ³ + λ
        assert_eq!(example2_spec().minimal_poly_coeffs(), vec![0.0, 1.0, 0.0]);
        // λ(λ²+1)(λ²+4) = λ⁵ + 5λ³ + 4λ
        assert_eq!(example1_spec().minimal_poly_coeffs(), vec![0.0, 4.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn spec_from_matrix() {
        let spec = SpectralSpec::from_matrix(&example2_s(), EIG_CLUSTER_TOL).unwrap();
        assert_eq!(spec, example2_spec());
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]);
        let spec = SpectralSpec::from_matrix(&s, EIG_CLUSTER_TOL).unwrap();
        assert_eq!(spec.real_modes()[0].blocks, vec![2, 1]);
        assert_eq!(spec.minimal_poly_degree(), 2);
    }

    #[test]
    fn spectrum_serde_merges_repeated_entries() {
        #[derive(Deserialize, Serialize)]
        struct Wrap {
            spectrum: SpectralSpec,
        }
        let text = r#"
            spectrum = [ { lambda = 0.0, block = 1 }, { lambda = 0.0, block = 1 }, { mu = 0.0, psi = 1.0 } ]
        "#;
        let w: Wrap = toml::from_str(text).unwrap();
        assert_eq!(w.spectrum, example2_spec());
        let back: Wrap = toml::from_str(&toml::to_string(&w).unwrap()).unwrap();
        assert_eq!(back.spectrum, example2_spec());
        assert!(toml::from_str::<Wrap>("spectrum = [ { mu = 1.0 } ]").is_err());
    }
}
