//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{FactorError, Result};

/// Thin SVD with singular values sorted in descending order.
///
/// Equal singular values keep nalgebra's output order (stable sort).
pub(crate) fn sorted_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let vt = svd.v_t.expect("svd computed with v_t");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&x, &y| s[y].partial_cmp(&s[x]).unwrap_or(std::cmp::Ordering::Equal));
    let k = s.len();
    let mut u_sorted = DMatrix::zeros(u.nrows(), k);
    let mut v_sorted = DMatrix::zeros(vt.ncols(), k);
    let mut s_sorted = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &vt.row(src).transpose());
        s_sorted[dst] = s[src];
    }
    (u_sorted, s_sorted, v_sorted)
}

/// Orthonormal basis (thin Q factor) of the columns of `a`.
pub(crate) fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}

/// Matrix of iid standard normal draws.
pub(crate) fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // Filled column-major, so the draw order is part of the seeding contract.
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Solve `a x = b` for symmetric positive definite `a`, falling back to LU.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| FactorError::Singular(what.to_string()))
}

/// General square solve via LU with partial pivoting.
pub(crate) fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| FactorError::Singular(what.to_string()))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(FactorError::Singular(what.to_string()))
    }
}

/// Inverse of a square matrix, rejecting numerically singular input.
pub(crate) fn inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let (_, s, _) = sorted_svd(a);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if !(smin > 1e-13 * smax.max(f64::MIN_POSITIVE)) {
        return Err(FactorError::Singular(what.to_string()));
    }
    solve(a, &DMatrix::identity(n, n), what)
}

/// Eigenvalues of the symmetric part of `a`.
#[cfg(test)]
pub(crate) fn symmetric_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues
}

/// Population variance of all entries of a matrix.
pub(crate) fn entry_variance(a: &DMatrix<f64>) -> f64 {
    let n = a.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = a.iter().sum::<f64>() / n;
    a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Flip column signs so the entry of largest magnitude in each column of `u`
/// is positive; the paired columns of `v` flip with it.
pub(crate) fn fix_signs(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    for j in 0..u.ncols() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for x in u.column(j).iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
}
