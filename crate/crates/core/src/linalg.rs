//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{ComplexField, DMatrix, DVector, Dyn, SymmetricEigen, SVD};
use num_complex::Complex64;

type DSvd<T> = SVD<T, Dyn, Dyn>;

/// Scalars with a LAPACK `*gesvd` driver.
pub trait SvdScalar: ComplexField<RealField = f64> + Copy {
    /// Thin SVD of the column-major `m × n` matrix in `a` (overwritten);
    /// returns LAPACK's `info`.
    #[doc(hidden)]
    fn gesvd(m: usize, n: usize, a: &mut [Self], s: &mut [f64], u: &mut [Self], vt: &mut [Self]) -> i32;
}

impl SvdScalar for f64 {
    fn gesvd(m: usize, n: usize, a: &mut [f64], s: &mut [f64], u: &mut [f64], vt: &mut [f64]) -> i32 {
        let (mi, ni, ki) = (m as i32, n as i32, m.min(n) as i32);
        let mut info = 0;
        let mut query = [0.0];
        // SAFETY: slice lengths match the dimensions passed alongside them
        unsafe {
            lapack::dgesvd(b'S', b'S', mi, ni, a, mi, s, u, mi, vt, ki, &mut query, -1, &mut info);
        }
        if info != 0 {
            return info;
        }
        let mut work = vec![0.0; query[0] as usize];
        let lw = work.len() as i32;
        unsafe {
            lapack::dgesvd(b'S', b'S', mi, ni, a, mi, s, u, mi, vt, ki, &mut work, lw, &mut info);
        }
        info
    }
}

impl SvdScalar for Complex64 {
    fn gesvd(m: usize, n: usize, a: &mut [Complex64], s: &mut [f64], u: &mut [Complex64], vt: &mut [Complex64]) -> i32 {
        let (mi, ni, ki) = (m as i32, n as i32, m.min(n) as i32);
        let mut info = 0;
        let mut rwork = vec![0.0; 5 * m.min(n)];
        let mut query = [Complex64::new(0.0, 0.0)];
        // SAFETY: slice lengths match the dimensions passed alongside them
        unsafe {
            lapack::zgesvd(b'S', b'S', mi, ni, a, mi, s, u, mi, vt, ki, &mut query, -1, &mut rwork, &mut info);
        }
        if info != 0 {
            return info;
        }
        let mut work = vec![Complex64::new(0.0, 0.0); query[0].re as usize];
        let lw = work.len() as i32;
        unsafe {
            lapack::zgesvd(b'S', b'S', mi, ni, a, mi, s, u, mi, vt, ki, &mut work, lw, &mut rwork, &mut info);
        }
        info
    }
}

/// Thin SVD with both factors, singular values descending.
///
/// Goes through LAPACK: nalgebra's own bidiagonal iteration occasionally
/// stops on an inaccurate factorization (reconstruction errors near 1e-2 on
/// well-conditioned input), and it is kept only as a fallback.
pub fn svd<T: SvdScalar>(a: &DMatrix<T>) -> DSvd<T> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return a.clone().svd(true, true);
    }
    let mut work = a.clone();
    let mut s = vec![0.0; k];
    let mut u = vec![T::zero(); m * k];
    let mut vt = vec![T::zero(); k * n];
    if T::gesvd(m, n, work.as_mut_slice(), &mut s, &mut u, &mut vt) != 0 {
        return a.clone().svd(true, true);
    }
    SVD {
        u: Some(DMatrix::from_column_slice(m, k, &u)),
        v_t: Some(DMatrix::from_column_slice(k, n, &vt)),
        singular_values: DVector::from_vec(s),
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = svd(a).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

/// Numerical rank with a threshold relative to the largest singular value.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(a);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&v| v > rel_tol * smax).count(),
        _ => 0,
    }
}

/// Orthonormal basis of the null space of a square (or wide) matrix.
///
/// Columns whose singular value falls at or below `abs_tol` are kept.
pub fn null_space<T>(a: &DMatrix<T>, abs_tol: f64) -> DMatrix<T>
where
    T: SvdScalar,
{
    let n = a.ncols();
    // pad to square so the SVD returns a full right basis
    let m = a.nrows().max(n);
    let mut sq = DMatrix::<T>::zeros(m, n);
    sq.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let dec = svd(&sq);
    let v_t = dec.v_t.expect("requested V^T");
    let cols: Vec<DVector<T>> = dec
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= abs_tol)
        .map(|(i, _)| v_t.row(i).adjoint())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Least-squares solve `a x = b` through the SVD pseudoinverse.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let dec = svd(a);
    let smax = dec.singular_values.max();
    dec.solve(b, rel_tol * smax.max(f64::MIN_POSITIVE))
        .expect("SVD computed with U and V")
}

/// Extreme eigenvalues of a symmetric matrix (symmetrized first).
pub fn sym_eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    let s = symmetrize(a);
    let eig = SymmetricEigen::new(s).eigenvalues;
    (eig.min(), eig.max())
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetric square root and inverse square root of a positive-definite matrix.
pub fn spd_sqrt_pair(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(symmetrize(a));
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return None;
    }
    let q = &eig.eigenvectors;
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let isqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Some((q * sqrt * q.transpose(), q * isqrt * q.transpose()))
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Block-diagonal assembly of the given matrices.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Vertical concatenation; all blocks must share a column count.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Horizontal concatenation; all blocks must share a row count.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), b.shape()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Eigenvalues of a general real matrix as (re, im) pairs.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<(f64, f64)> {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_rank_one() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let n = null_space(&a, 1e-10);
        assert_eq!(n.ncols(), 1);
        assert!((&a * &n).norm() < 1e-12);
    }

    #[test]
    fn wide_matrix_null_space() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let n = null_space(&a, 1e-10);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).norm() < 1e-12);
    }

    #[test]
    fn rank_and_stacking() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let s = vstack(&[&a, &a]);
        assert_eq!(s.shape(), (4, 3));
        assert_eq!(rank(&s, 1e-10), 2);
        let h = hstack(&[&a, &a]);
        assert_eq!(h.shape(), (2, 6));
        let bd = block_diag(&[a.clone(), DMatrix::identity(1, 1)]);
        assert_eq!(bd.shape(), (3, 4));
        assert_eq!(bd[(2, 3)], 1.0);
    }
}
