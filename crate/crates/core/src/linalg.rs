//! Small dense symmetric-positive-definite helpers.
//!
//! The problems in this crate have tiny parameter counts, so a plain
//! `O(n^3)` Cholesky with no pivoting is both sufficient and allocation-free,
//! which matters in the per-sample Gauss-Newton path.

use nalgebra::{DMatrix, DVector};

/// Matrix counterpart of the BLAS axpy: `y <- a * x + b * y`.
pub fn mat_axpy(y: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>, b: f64) {
    debug_assert_eq!(y.shape(), x.shape());
    for (yv, xv) in y.iter_mut().zip(x.iter()) {
        *yv = a * *xv + b * *yv;
    }
}

/// In-place lower Cholesky factorization `A = L L^T`.
///
/// On success the lower triangle of `a` holds `L` (the strict upper triangle
/// is left untouched) and `true` is returned. Returns `false` if a pivot is
/// non-positive or non-finite, i.e. the matrix is not numerically SPD.
pub fn cholesky_in_place(a: &mut DMatrix<f64>) -> bool {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / d;
        }
    }
    true
}

/// Solves `L L^T x = b` in place given the factor from [`cholesky_in_place`].
pub fn cholesky_solve_in_place(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Cheap condition estimate of the factored matrix: the squared ratio of the
/// extreme Cholesky diagonal entries. A lower bound on the true 2-norm
/// condition number, adequate as an ill-conditioning tripwire.
pub fn cholesky_condition_estimate(l: &DMatrix<f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let r = hi / lo;
    r * r
}

/// Inverse of a symmetric positive definite matrix, or `None` if the
/// factorization fails.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = a.clone();
    if !cholesky_in_place(&mut l) {
        return None;
    }
    let mut inv = DMatrix::zeros(n, n);
    let mut col = DVector::zeros(n);
    for j in 0..n {
        col.fill(0.0);
        col[j] = 1.0;
        cholesky_solve_in_place(&l, &mut col);
        inv.set_column(j, &col);
    }
    // symmetrize against roundoff drift
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn factor_solve_roundtrip() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let mut l = a.clone();
        assert!(cholesky_in_place(&mut l));
        let b = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let mut x = b.clone();
        cholesky_solve_in_place(&l, &mut x);
        assert_relative_eq!(&a * &x, b, epsilon = 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(!cholesky_in_place(&mut a));
    }

    #[test]
    fn inverse_matches_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let inv = spd_inverse(&a).unwrap();
        assert_relative_eq!(&a * &inv, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn condition_estimate_matches_diagonal_condition_number() {
        let mut l = DMatrix::from_row_slice(2, 2, &[1e6, 0.0, 0.0, 1e-6]);
        assert!(cholesky_in_place(&mut l));
        assert_relative_eq!(cholesky_condition_estimate(&l), 1e12, max_relative = 1e-10);
    }
}
