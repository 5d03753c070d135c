//! Partial SVD by seeded randomized subspace iteration, and singular-value
//! soft-thresholding.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{fix_signs, gaussian_matrix, orthonormal_basis, sorted_svd};
use crate::{FactorError, Result};

/// Tuning for [`top_k_svd`].
#[derive(Debug, Clone, PartialEq)]
pub struct SvdOptions {
    /// Stop when the top-k subspace moves less than this between passes.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra sketch columns beyond `k`.
    pub oversample: usize,
    /// Power passes performed before convergence is checked.
    pub min_passes: usize,
    pub seed: u64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 1000, oversample: 10, min_passes: 2, seed: 0 }
    }
}

impl SvdOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// Top-k singular triplets `Z ~ U diag(d) V'`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSvd {
    /// `T x k`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending singular values.
    pub d: DVector<f64>,
    /// `N x k`, orthonormal columns.
    pub v: DMatrix<f64>,
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
    /// The input was the zero matrix; `u` and `v` are arbitrary.
    pub degenerate: bool,
    /// Some adjacent singular values (including `d_k` vs `d_{k+1}`) coincide
    /// to `1e-12 * max(1, d_1)`, so the matching vectors are not identified.
    pub ties: bool,
}

impl PartialSvd {
    /// `U diag(d) V'`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.d) * self.v.transpose()
    }

    /// `U diag(g(d)) V'` for an arbitrary map of the singular values.
    pub fn reconstruct_with(&self, d: &DVector<f64>) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(d) * self.v.transpose()
    }

    /// Keep the leading `k` triplets.
    pub fn truncate(&self, k: usize) -> Self {
        let k = k.min(self.k);
        Self {
            u: self.u.columns(0, k).into_owned(),
            d: self.d.rows(0, k).into_owned(),
            v: self.v.columns(0, k).into_owned(),
            k,
            ..self.clone()
        }
    }
}

fn tie_tol(d1: f64) -> f64 {
    1e-12 * d1.max(1.0)
}

/// Singular values at or below this fraction of `d_1` are numerically zero;
/// their vectors are arbitrary and excluded from the convergence test.
const NULL_RATIO: f64 = 1e-10;

fn has_ties(values: &[f64], d1: f64) -> bool {
    values.windows(2).any(|w| (w[0] - w[1]).abs() <= tie_tol(d1) && w[0] > 0.0)
}

/// Top `k` singular triplets of `z`.
///
/// Uses a Gaussian sketch with `k + oversample` columns, QR re-orthonormalization
/// after every multiplication and a Rayleigh-Ritz step per pass. When the sketch
/// covers the smaller dimension the result is exact after one pass.
pub fn top_k_svd(z: &DMatrix<f64>, k: usize, opts: &SvdOptions) -> Result<PartialSvd> {
    let (t, n) = z.shape();
    let kmax = t.min(n);
    if k == 0 || k > kmax {
        return Err(FactorError::Argument(format!("k = {k} must lie in 1..={kmax}")));
    }
    if !(opts.tol > 0.0) {
        return Err(FactorError::Argument(format!("tol must be positive, got {}", opts.tol)));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(FactorError::Precondition("matrix contains non-finite values".into()));
    }
    if z.iter().all(|&v| v == 0.0) {
        let u = DMatrix::identity(t, k);
        let v = DMatrix::identity(n, k);
        return Ok(PartialSvd {
            u,
            d: DVector::zeros(k),
            v,
            k,
            converged: true,
            iterations: 0,
            degenerate: true,
            ties: k > 1,
        });
    }

    let width = (k + opts.oversample).min(kmax);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let omega = gaussian_matrix(&mut rng, n, width);
    let mut q = orthonormal_basis(&(z * omega));

    let mut prev_u: Option<DMatrix<f64>> = None;
    let mut iterations = 0;
    let mut converged = false;
    let (mut u, mut d, mut v);
    loop {
        iterations += 1;
        // One power pass: Q <- orth(Z orth(Z'Q)).
        let w = orthonormal_basis(&(z.transpose() * &q));
        q = orthonormal_basis(&(z * w));

        // Rayleigh-Ritz on the current range.
        let b = q.transpose() * z;
        let (ub, sb, vb) = sorted_svd(&b);
        let full_u = &q * &ub;
        u = full_u.columns(0, k).into_owned();
        d = sb.rows(0, k).into_owned();
        v = vb.columns(0, k).into_owned();

        let exact = width == kmax;
        if let Some(prev) = &prev_u {
            let live = d.iter().take_while(|&&x| x > NULL_RATIO * d[0]).count();
            let cur = u.columns(0, live);
            let old = prev.columns(0, live);
            let moved = (cur - old * (old.transpose() * cur)).norm();
            if iterations >= opts.min_passes && moved < opts.tol {
                converged = true;
            }
        }
        if exact && iterations >= opts.min_passes {
            converged = true;
        }
        if converged || iterations >= opts.max_iter {
            let d1 = d[0];
            let mut ritz: Vec<f64> = d.iter().copied().collect();
            if sb.len() > k {
                ritz.push(sb[k]);
            }
            let ties = has_ties(&ritz, d1);
            fix_signs(&mut u, &mut v);
            return Ok(PartialSvd { u, d, v, k, converged, iterations, degenerate: false, ties });
        }
        prev_u = Some(u);
    }
}

/// Elementwise `(d_j - gamma)_+`.
pub fn soft_threshold(d: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    if !(gamma >= 0.0) {
        return Err(FactorError::Argument(format!("gamma must be nonnegative, got {gamma}")));
    }
    Ok(d.map(|x| (x - gamma).max(0.0)))
}

/// Number of strictly positive entries.
pub fn effective_rank(d: &DVector<f64>) -> usize {
    d.iter().filter(|&&x| x > 0.0).count()
}

/// Singular-value thresholded approximation `U_k diag((d - gamma)_+) V_k'`.
///
/// With `k = min(T, N)` this is the minimizer of
/// `gamma ||L||_* + 0.5 ||Z - L||_F^2`.
pub fn svt(z: &DMatrix<f64>, k: usize, gamma: f64, opts: &SvdOptions) -> Result<DMatrix<f64>> {
    if !(gamma >= 0.0) {
        return Err(FactorError::Argument(format!("gamma must be nonnegative, got {gamma}")));
    }
    let svd = top_k_svd(z, k, opts)?;
    let shrunk = soft_threshold(&svd.d, gamma)?;
    Ok(svd.reconstruct_with(&shrunk))
}
