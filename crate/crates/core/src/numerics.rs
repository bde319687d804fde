//! Dense linear-algebra primitives.
//!
//! Everything here works on `nalgebra` dynamic matrices. Matrices with zero
//! rows or zero columns are legal and behave as dimensioned zeros; they encode
//! absent channels (a node without unknown inputs, a trivial quotient space).

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("ragged matrix: row {row} has {found} entries, expected {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Thresholds shared by the rank-revealing and residual checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    /// Singular values below `rel_rank_tol * sigma_max` count as zero.
    pub rel_rank_tol: f64,
    pub residual_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel_rank_tol: 1e-9,
            residual_tol: 1e-8,
        }
    }
}

impl Tolerance {
    pub fn new(rel_rank_tol: f64, residual_tol: f64) -> Result<Self> {
        for (name, v) in [
            ("rel_rank_tol", rel_rank_tol),
            ("residual_tol", residual_tol),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(NumericsError::InvalidTolerance(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        Ok(Self {
            rel_rank_tol,
            residual_tol,
        })
    }
}

/// Builds a matrix from row vectors, rejecting ragged input and NaN/Inf.
///
/// `cols_if_empty` fixes the column count when `rows` is empty, so a `0 x n`
/// matrix can still be expressed.
pub fn matrix_from_rows(rows: &[Vec<f64>], cols_if_empty: usize) -> Result<Matrix> {
    let cols = rows.first().map_or(cols_if_empty, Vec::len);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(NumericsError::Ragged {
                row: r,
                found: row.len(),
                expected: cols,
            });
        }
    }
    let m = Matrix::from_fn(rows.len(), cols, |r, c| rows[r][c]);
    ensure_finite(&m)?;
    Ok(m)
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn ensure_finite(m: &Matrix) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(NumericsError::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

fn ensure_square(m: &Matrix) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(NumericsError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

/// Largest absolute entry, 0 for empty matrices.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn ensure_symmetric(m: &Matrix, tol: &Tolerance) -> Result<()> {
    ensure_square(m)?;
    let asymmetry = max_abs(&(m - m.transpose()));
    if asymmetry > tol.residual_tol * (1.0 + max_abs(m)) {
        return Err(NumericsError::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// Upper-triangular `S` with positive diagonal such that `H = S^T S`.
pub fn cholesky_upper(h: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    ensure_symmetric(h, tol)?;
    let h = symmetrize(h);
    let n = h.nrows();
    let floor = tol.rel_rank_tol * spectral_norm(&h);
    let mut s = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = h[(j, j)];
        for k in 0..j {
            pivot -= s[(k, j)] * s[(k, j)];
        }
        if pivot.is_nan() || pivot <= floor {
            return Err(NumericsError::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        s[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = h[(j, i)];
            for k in 0..j {
                v -= s[(k, j)] * s[(k, i)];
            }
            s[(j, i)] = v / d;
        }
    }
    Ok(s)
}

/// Inverse of an upper-triangular matrix with nonzero diagonal.
pub fn upper_triangular_inverse(s: &Matrix) -> Result<Matrix> {
    ensure_square(s)?;
    s.solve_upper_triangular(&Matrix::identity(s.nrows(), s.ncols()))
        .ok_or(NumericsError::NotPositiveDefinite {
            index: 0,
            pivot: 0.0,
        })
}

/// Solves `H x = b` for symmetric positive-definite `H` through its Cholesky factor.
pub fn solve_spd(h: &Matrix, b: &Vector, tol: &Tolerance) -> Result<Vector> {
    if h.nrows() != b.len() {
        return Err(NumericsError::DimensionMismatch(format!(
            "H is {}x{}, b has length {}",
            h.nrows(),
            h.ncols(),
            b.len()
        )));
    }
    let s = cholesky_upper(h, tol)?;
    // S^T y = b, then S x = y.
    let y = s
        .tr_solve_upper_triangular(b)
        .expect("Cholesky factor has a positive diagonal");
    Ok(s.solve_upper_triangular(&y)
        .expect("Cholesky factor has a positive diagonal"))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &Matrix, tol: &Tolerance) -> Result<Vec<f64>> {
    ensure_symmetric(m, tol)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut ev: Vec<f64> = symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

pub fn min_eigenvalue_symmetric(m: &Matrix, tol: &Tolerance) -> Result<f64> {
    let ev = symmetric_eigenvalues(m, tol)?;
    ev.first().copied().ok_or(NumericsError::DimensionMismatch(
        "empty matrix has no eigenvalues".into(),
    ))
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Largest singular value; 0 for empty or zero matrices.
pub fn spectral_norm(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Eigenvalues of a general square matrix.
///
/// # Panics
///
/// Panics if `m` is not square.
pub fn eigenvalues(m: &Matrix) -> Vec<Complex<f64>> {
    assert!(m.is_square(), "eigenvalues of a non-square matrix");
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest eigenvalue modulus; 0 for the empty matrix.
///
/// # Panics
///
/// Panics if `m` is not square.
pub fn spectral_radius(m: &Matrix) -> f64 {
    eigenvalues(m)
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn numerical_rank(m: &Matrix, tol: &Tolerance) -> usize {
    let sv = singular_values(m);
    let Some(&top) = sv.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol.rel_rank_tol * top).count()
}

/// Right singular vectors of `m` (as columns of a `cols x cols` orthogonal
/// matrix) paired with singular values, both in descending singular order.
/// Short matrices are padded with zero rows so the full basis is available.
fn full_right_singular(m: &Matrix) -> (Vec<f64>, Matrix) {
    let n = m.ncols();
    let padded = if m.nrows() < n {
        let mut p = Matrix::zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let v = Matrix::from_fn(n, n, |r, c| v_t[(order[c], r)]);
    (values, v)
}

/// Orthonormal basis of `Ker m`, one basis vector per column (possibly none).
pub fn kernel_basis(m: &Matrix, tol: &Tolerance) -> Matrix {
    let n = m.ncols();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return Matrix::identity(n, n);
    }
    let rank = numerical_rank(m, tol);
    let (_, v) = full_right_singular(m);
    v.columns(rank, n - rank).into_owned()
}

/// The `k` right singular vectors belonging to the `k` smallest singular values.
pub(crate) fn smallest_right_singular(m: &Matrix, k: usize) -> Matrix {
    let n = m.ncols();
    if m.nrows() == 0 {
        return Matrix::identity(n, n).columns(n - k, k).into_owned();
    }
    let (_, v) = full_right_singular(m);
    v.columns(n - k, k).into_owned()
}

/// Orthonormal basis of the column space of `m`.
pub fn range_basis(m: &Matrix, tol: &Tolerance) -> Matrix {
    let rows = m.nrows();
    if rows == 0 || m.ncols() == 0 {
        return Matrix::zeros(rows, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let top = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    if top == 0.0 {
        return Matrix::zeros(rows, 0);
    }
    let mut keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol.rel_rank_tol * top)
        .collect();
    keep.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Matrix::from_fn(rows, keep.len(), |r, c| u[(r, keep[c])])
}

/// Orthonormal basis of the orthogonal complement of `span(basis)`.
pub fn orthogonal_complement(basis: &Matrix, tol: &Tolerance) -> Matrix {
    let n = basis.nrows();
    if basis.ncols() == 0 {
        return Matrix::identity(n, n);
    }
    kernel_basis(&basis.transpose(), tol)
}

/// Moore-Penrose pseudo-inverse with the relative rank threshold of `tol`.
pub fn pseudo_inverse(m: &Matrix, tol: &Tolerance) -> Matrix {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Matrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let top = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    let cut = tol.rel_rank_tol * top;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut out = Matrix::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            out += (v_t.row(i).transpose() * u.column(i).transpose()) / s;
        }
    }
    out
}

/// Stacks `top` over `bottom`; both must have the same column count.
pub fn vstack(top: &Matrix, bottom: &Matrix) -> Result<Matrix> {
    if top.ncols() != bottom.ncols() {
        return Err(NumericsError::DimensionMismatch(format!(
            "vstack of {}x{} over {}x{}",
            top.nrows(),
            top.ncols(),
            bottom.nrows(),
            bottom.ncols()
        )));
    }
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape())
        .copy_from(bottom);
    Ok(out)
}

/// Places `left` beside `right`; both must have the same row count.
pub fn hstack(left: &Matrix, right: &Matrix) -> Result<Matrix> {
    if left.nrows() != right.nrows() {
        return Err(NumericsError::DimensionMismatch(format!(
            "hstack of {}x{} beside {}x{}",
            left.nrows(),
            left.ncols(),
            right.nrows(),
            right.ncols()
        )));
    }
    let mut out = Matrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape())
        .copy_from(right);
    Ok(out)
}

/// Largest principal angle (radians) between two subspaces given by
/// orthonormal bases. Subspaces of different dimension are `pi / 2` apart.
pub fn max_principal_angle(a: &Matrix, b: &Matrix) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    // sin of the largest angle is the norm of the part of B outside span(A);
    // this stays accurate for tiny angles where acos of the cosine does not.
    let outside = b - a * (a.transpose() * b);
    spectral_norm(&outside).min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn m(rows: &[&[f64]]) -> Matrix {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        matrix_from_rows(&v, 0).unwrap()
    }

    #[test]
    fn rejects_non_finite_and_ragged() {
        assert!(matches!(
            matrix_from_rows(&[vec![1.0, f64::NAN]], 0),
            Err(NumericsError::NonFinite { row: 0, col: 1 })
        ));
        assert!(matches!(
            matrix_from_rows(&[vec![1.0, 2.0], vec![1.0]], 0),
            Err(NumericsError::Ragged { row: 1, .. })
        ));
        let empty = matrix_from_rows(&[], 6).unwrap();
        assert_eq!(empty.shape(), (0, 6));
    }

    #[test]
    fn tolerance_bounds() {
        assert!(Tolerance::new(0.0, 1e-8).is_err());
        assert!(Tolerance::new(1e-9, 1.0).is_err());
        assert!(Tolerance::new(1e-9, 1e-8).is_ok());
    }

    #[test]
    fn cholesky_identity() {
        let s = cholesky_upper(&Matrix::identity(3, 3), &tol()).unwrap();
        assert_eq!(s, Matrix::identity(3, 3));
    }

    #[test]
    fn cholesky_two_by_two() {
        let h = m(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let s = cholesky_upper(&h, &tol()).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(0, 1)], 1.0, epsilon = 1e-15);
        assert_eq!(s[(1, 0)], 0.0);
        assert_abs_diff_eq!(s[(1, 1)], 2.0_f64.sqrt(), epsilon = 1e-15);
        assert!(max_abs(&(s.transpose() * &s - &h)) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        let h = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(
            cholesky_upper(&h, &tol()),
            Err(NumericsError::NotPositiveDefinite { index: 1, .. })
        ));
        let singular = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert!(cholesky_upper(&singular, &tol()).is_err());
        let skew = m(&[&[2.0, 1.0], &[0.0, 2.0]]);
        assert!(matches!(
            cholesky_upper(&skew, &tol()),
            Err(NumericsError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn min_eigenvalue_cases() {
        assert_eq!(
            min_eigenvalue_symmetric(&Matrix::identity(4, 4), &tol()).unwrap(),
            1.0
        );
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![0.0034, 3.0351]));
        assert_abs_diff_eq!(
            min_eigenvalue_symmetric(&d, &tol()).unwrap(),
            0.0034,
            epsilon = 1e-15
        );
        let skew = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert!(matches!(
            min_eigenvalue_symmetric(&skew, &tol()),
            Err(NumericsError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn spectral_norm_cases() {
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2)), 0.0);
        assert_eq!(spectral_norm(&Matrix::zeros(0, 6)), 0.0);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 5.0]));
        assert_abs_diff_eq!(spectral_norm(&d), 5.0, epsilon = 1e-14);
        // T = [0-row; e1^T] gives T^T T = diag(1, 0, ..., 0).
        let t = m(&[&[0.0; 6], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]]);
        assert_abs_diff_eq!(spectral_norm(&(t.transpose() * &t)), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn spectral_radius_cases() {
        assert_eq!(spectral_radius(&Matrix::zeros(3, 3)), 0.0);
        assert_eq!(spectral_radius(&Matrix::zeros(0, 0)), 0.0);
        let rot = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert_abs_diff_eq!(spectral_radius(&rot), 1.0, epsilon = 1e-12);
        let th = 0.7_f64;
        let scaled = m(&[
            &[0.5 * th.cos(), 0.5 * th.sin()],
            &[-0.5 * th.sin(), 0.5 * th.cos()],
        ]);
        assert_abs_diff_eq!(spectral_radius(&scaled), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kernel_cases() {
        assert_eq!(kernel_basis(&Matrix::identity(3, 3), &tol()).ncols(), 0);
        let row = m(&[&[1.0, 0.0, 0.0]]);
        let k = kernel_basis(&row, &tol());
        assert_eq!(k.shape(), (3, 2));
        assert!(max_abs(&(&row * &k)) < 1e-14);
        assert!(max_abs(&(k.transpose() * &k - Matrix::identity(2, 2))) < 1e-14);
        // e1 has no component in the kernel.
        assert!(k.row(0).norm() < 1e-14);
        assert_eq!(kernel_basis(&Matrix::zeros(0, 4), &tol()).shape(), (4, 4));
    }

    #[test]
    fn solve_spd_cases() {
        let b = Vector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(solve_spd(&Matrix::identity(3, 3), &b, &tol()).unwrap(), b);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 4.0]));
        let x = solve_spd(&d, &Vector::from_vec(vec![2.0, 8.0]), &tol()).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-15);
        assert!(matches!(
            solve_spd(&d, &Vector::zeros(3), &tol()),
            Err(NumericsError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn stacking() {
        let a = Matrix::zeros(0, 3);
        let b = m(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(vstack(&a, &b).unwrap(), b);
        assert!(vstack(&a, &Matrix::zeros(1, 2)).is_err());
        assert_eq!(
            hstack(&Matrix::zeros(2, 0), &Matrix::identity(2, 2))
                .unwrap()
                .ncols(),
            2
        );
    }

    fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-5.0_f64..5.0, rows * cols)
            .prop_map(move |data| Matrix::from_vec(rows, cols, data))
    }

    fn orthogonal(seed: &Matrix) -> Matrix {
        seed.clone().qr().q()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn cholesky_reconstructs(g in matrix_strategy(6, 6)) {
            let h = g.transpose() * &g + Matrix::identity(6, 6) * 0.1;
            let s = cholesky_upper(&h, &tol()).unwrap();
            let resid = spectral_norm(&(s.transpose() * &s - &h)) / spectral_norm(&h);
            prop_assert!(resid <= 1e-10);
            for i in 0..6 {
                prop_assert!(s[(i, i)] > 0.0);
                for j in 0..i {
                    prop_assert_eq!(s[(i, j)], 0.0);
                }
            }
        }

        #[test]
        fn solve_spd_residual(g in matrix_strategy(6, 6), b in proptest::collection::vec(-3.0_f64..3.0, 6)) {
            let h = g.transpose() * &g + Matrix::identity(6, 6) * 0.5;
            let b = Vector::from_vec(b);
            let x = solve_spd(&h, &b, &tol()).unwrap();
            prop_assert!((&h * &x - &b).norm() < 1e-10 * (1.0 + b.norm()));
        }

        #[test]
        fn min_eigenvalue_is_rotation_invariant(
            seed in matrix_strategy(5, 5),
            diag in proptest::collection::vec(-4.0_f64..4.0, 5),
        ) {
            let q = orthogonal(&(seed + Matrix::identity(5, 5) * 11.0));
            let d = Matrix::from_diagonal(&Vector::from_vec(diag.clone()));
            let mat = q.transpose() * d * &q;
            let expected = diag.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!((min_eigenvalue_symmetric(&mat, &tol()).unwrap() - expected).abs() < 1e-9);
        }

        #[test]
        fn kernel_contract(g in matrix_strategy(3, 6), mix in matrix_strategy(2, 3)) {
            // Stack dependent rows so rank deficiency is exercised.
            let mat = vstack(&g, &(mix * &g)).unwrap();
            let k = kernel_basis(&mat, &tol());
            let rank = numerical_rank(&mat, &tol());
            prop_assert_eq!(k.ncols(), 6 - rank);
            prop_assert!(max_abs(&(&mat * &k)) < 1e-8 * (1.0 + spectral_norm(&mat)));
            prop_assert!(max_abs(&(k.transpose() * &k - Matrix::identity(k.ncols(), k.ncols()))) < 1e-12);
        }

        #[test]
        fn radius_below_norm(g in matrix_strategy(5, 5)) {
            prop_assert!(spectral_radius(&g) <= spectral_norm(&g) * (1.0 + 1e-12) + 1e-12);
        }
    }
}
