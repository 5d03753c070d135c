//! Number-of-factors selection with the `IC2` penalty and its rank-regularized
//! counterpart.
//!
//! For population-standardized data `||Z||_F^2 = 1`, so the residual sum of
//! squares after `k` factors is `1 - sum_{j<=k} d_j^2`. The regularized
//! criterion replaces `d_j` by `(d_j - gamma)_+`, which leaves more of the
//! variance unexplained and can only lower the selected count.

use nalgebra::DVector;
use serde::Serialize;

use crate::panel::ScaledData;
use crate::{FactorError, Result};

/// Default threshold on singular values of `Z`.
pub const DEFAULT_GAMMA: f64 = 0.05;
/// Default largest candidate number of factors.
pub const DEFAULT_RMAX: usize = 8;

const SSR_FLOOR: f64 = 1e-15;

/// Both criteria evaluated over `k = 0..=rmax`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub rmax: usize,
    pub gamma: f64,
    pub penalty: f64,
    pub ssr_plain: Vec<f64>,
    pub ssr_thresh: Vec<f64>,
    pub ic_plain: Vec<f64>,
    pub ic_thresh: Vec<f64>,
    pub r_hat: usize,
    pub r_bar: usize,
    /// Some SSR hit zero and was floored before taking logs.
    pub ssr_floored: bool,
}

/// Per-`k` gap between the two criteria.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapDecomposition {
    /// `IC_thresh(k) - IC_plain(k)`.
    pub exact: Vec<f64>,
    /// First-order approximation `gamma * sum_{j<=k} (2 d_j - gamma) / SSR_k`.
    pub approx: Vec<f64>,
}

/// `((N+T)/(NT)) log(NT/(N+T))`.
pub fn penalty_g(n: usize, t: usize) -> f64 {
    let (n, t) = (n as f64, t as f64);
    (n + t) / (n * t) * (n * t / (n + t)).ln()
}

/// SSR curves for `k = 0..=rmax` from the singular values of `Z`.
pub fn ssr_curves(d: &[f64], rmax: usize, gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(gamma >= 0.0) {
        return Err(FactorError::Argument(format!("gamma must be nonnegative, got {gamma}")));
    }
    if rmax > d.len() {
        return Err(FactorError::Argument(format!("rmax = {rmax} exceeds {} singular values", d.len())));
    }
    let total: f64 = d.iter().map(|x| x * x).sum();
    if total > 1.0 + 1e-6 {
        return Err(FactorError::Precondition(format!(
            "squared singular values sum to {total}; data must be population-standardized"
        )));
    }
    let mut plain = Vec::with_capacity(rmax + 1);
    let mut thresh = Vec::with_capacity(rmax + 1);
    let (mut sp, mut st) = (1.0, 1.0);
    plain.push(sp);
    thresh.push(st);
    for &dj in &d[..rmax] {
        sp -= dj * dj;
        st -= (dj - gamma).max(0.0).powi(2);
        plain.push(sp);
        thresh.push(st);
    }
    Ok((plain, thresh))
}

fn argmin(values: &[f64]) -> usize {
    // Strict comparison keeps the smaller k on ties.
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = k;
        }
    }
    best
}

/// Evaluate both criteria from singular values of a `T x N` scaled panel.
pub fn select_from_singular_values(d: &[f64], n: usize, t: usize, rmax: usize, gamma: f64) -> Result<SelectionResult> {
    let (ssr_plain, ssr_thresh) = ssr_curves(d, rmax, gamma)?;
    let g = penalty_g(n, t);
    let mut floored = false;
    let mut ic = |ssr: &[f64]| -> Vec<f64> {
        ssr.iter()
            .enumerate()
            .map(|(k, &s)| {
                if s < SSR_FLOOR {
                    floored = true;
                }
                s.max(SSR_FLOOR).ln() + k as f64 * g
            })
            .collect()
    };
    let ic_plain = ic(&ssr_plain);
    let ic_thresh = ic(&ssr_thresh);
    Ok(SelectionResult {
        rmax,
        gamma,
        penalty: g,
        r_hat: argmin(&ic_plain),
        r_bar: argmin(&ic_thresh),
        ssr_plain,
        ssr_thresh,
        ic_plain,
        ic_thresh,
        ssr_floored: floored,
    })
}

/// Singular values of `Z` in descending order.
pub fn singular_values(z: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let mut d: Vec<f64> = z.clone().singular_values().iter().copied().collect();
    d.sort_by(|a, b| b.total_cmp(a));
    d
}

/// Select the number of factors of population-standardized scaled data.
pub fn select(data: &ScaledData, rmax: usize, gamma: f64) -> Result<SelectionResult> {
    let norm = data.frobenius_sq();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(FactorError::Precondition(format!(
            "||Z||_F^2 = {norm}; select expects population-standardized data with unit norm"
        )));
    }
    let d = singular_values(data.z());
    if rmax > d.len() {
        return Err(FactorError::Argument(format!("rmax = {rmax} exceeds min(T, N) = {}", d.len())));
    }
    select_from_singular_values(&d, data.n(), data.t(), rmax, gamma)
}

/// Exact and first-order gap between the regularized and plain criteria.
pub fn ic_gap_decomposition(result: &SelectionResult, d: &DVector<f64>) -> GapDecomposition {
    let exact = result.ic_thresh.iter().zip(&result.ic_plain).map(|(a, b)| a - b).collect();
    let gamma = result.gamma;
    let mut acc = 0.0;
    let mut approx = vec![0.0];
    for k in 1..=result.rmax {
        acc += gamma * (2.0 * d[k - 1] - gamma);
        approx.push(acc / result.ssr_plain[k].max(SSR_FLOOR));
    }
    GapDecomposition { exact, approx }
}
