//! EM-style completion of unbalanced panels.
//!
//! Missing cells start at their column means. Each iteration standardizes the
//! current completed panel, fits `k` principal-component factors, and
//! overwrites the missing cells with the fitted common component mapped back
//! to original units. Observed cells are never written.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::estimators::pc;
use crate::panel::{standardize_and_scale, Panel};
use crate::selection::{select, DEFAULT_GAMMA};
use crate::{FactorError, Result};

/// Stopping rule for [`em_impute`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    /// Threshold on the largest change of an imputed cell, in standardized units.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500 }
    }
}

/// Completed panel and convergence record.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    /// Fully observed panel; observed cells are bit-identical to the input.
    pub completed: Panel,
    pub iterations: usize,
    /// Largest absolute change on imputed cells at each iteration, in
    /// standardized units.
    pub delta_history: Vec<f64>,
    /// Number of factors used.
    pub k: usize,
    pub converged: bool,
}

/// Summary written next to an imputed panel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputationSummary {
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    pub imputed_cells: usize,
    pub delta_history: Vec<f64>,
}

impl ImputationResult {
    pub fn summary(&self, imputed_cells: usize) -> ImputationSummary {
        ImputationSummary {
            k: self.k,
            iterations: self.iterations,
            converged: self.converged,
            imputed_cells,
            delta_history: self.delta_history.clone(),
        }
    }
}

fn check_floor(panel: &Panel, k: usize) -> Result<()> {
    if k == 0 {
        return Err(FactorError::Argument("k must be at least 1".into()));
    }
    if k >= panel.t().min(panel.n()) {
        return Err(FactorError::Argument(format!(
            "k = {k} must be below min(T, N) = {}",
            panel.t().min(panel.n())
        )));
    }
    for (j, name) in panel.series_names().iter().enumerate() {
        let observed = panel.mask().column(j).iter().filter(|&&m| m).count();
        if observed < k + 1 {
            return Err(FactorError::Validation(format!(
                "column '{name}' has {observed} observed value(s); imputing with {k} factors needs at least {}",
                k + 1
            )));
        }
    }
    Ok(())
}

/// Fill missing cells of `panel` using a `k`-factor model.
pub fn em_impute(panel: &Panel, k: usize, opts: &EmOptions) -> Result<ImputationResult> {
    check_floor(panel, k)?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(FactorError::Argument("tol must be positive and max_iter at least 1".into()));
    }
    let (t, n) = (panel.t(), panel.n());
    let mask = panel.mask();
    let missing: Vec<(usize, usize)> =
        (0..n).flat_map(|j| (0..t).filter(move |&i| !mask[(i, j)]).map(move |i| (i, j))).collect();
    if missing.is_empty() {
        return Ok(ImputationResult {
            completed: panel.clone(),
            iterations: 1,
            delta_history: vec![0.0],
            k,
            converged: true,
        });
    }

    let mut values = panel.values().clone();
    for j in 0..n {
        let (sum, count) = (0..t)
            .filter(|&i| mask[(i, j)])
            .fold((0.0, 0usize), |(s, c), i| (s + values[(i, j)], c + 1));
        let mean = sum / count as f64;
        for i in 0..t {
            if !mask[(i, j)] {
                values[(i, j)] = mean;
            }
        }
    }

    let mut delta_history = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let current = Panel::from_matrix(values.clone())?;
        let (data, info) = standardize_and_scale(&current)?;
        let fit = pc(&data, k)?;
        let fitted: DMatrix<f64> = fit.factors() * fit.loadings().transpose();
        let mut delta = 0.0f64;
        for &(i, j) in &missing {
            let new = info.means[j] + info.sds[j] * fitted[(i, j)];
            delta = delta.max((new - values[(i, j)]).abs() / info.sds[j]);
            values[(i, j)] = new;
        }
        delta_history.push(delta);
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(ImputationResult {
        completed: panel.clone().into_complete(values),
        iterations: delta_history.len(),
        delta_history,
        k,
        converged,
    })
}

/// Number of factors chosen on the fully observed rows of `panel`.
///
/// Uses the plain criterion with `rmax` candidates and returns at least 1.
pub fn select_k_balanced(panel: &Panel, rmax: usize) -> Result<usize> {
    let rows: Vec<usize> = (0..panel.t()).filter(|&i| panel.mask().row(i).iter().all(|&m| m)).collect();
    let width = rows.len().min(panel.n());
    if width < 3 {
        return Err(FactorError::Precondition(format!(
            "only {} fully observed row(s); cannot choose k automatically",
            rows.len()
        )));
    }
    let values = DMatrix::from_fn(rows.len(), panel.n(), |r, j| panel.values()[(rows[r], j)]);
    let (data, _) = standardize_and_scale(&Panel::from_matrix(values)?)?;
    let result = select(&data, rmax.min(width - 1), DEFAULT_GAMMA)?;
    Ok(result.r_hat.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn low_rank(t: usize, n: usize, r: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gaussian_matrix(&mut rng, t, r) * gaussian_matrix(&mut rng, n, r).transpose()
    }

    fn mask_random(t: usize, n: usize, frac: f64, seed: u64) -> DMatrix<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let m = DMatrix::from_fn(t, n, |_, _| rng.random::<f64>() >= frac);
            if (0..n).all(|j| m.column(j).iter().filter(|&&b| b).count() >= 5) {
                return m;
            }
        }
    }

    fn masked_panel(truth: &DMatrix<f64>, mask: &DMatrix<bool>) -> Panel {
        let values = DMatrix::from_fn(truth.nrows(), truth.ncols(), |i, j| if mask[(i, j)] { truth[(i, j)] } else { f64::NAN });
        let names = (1..=truth.ncols()).map(|j| format!("s{j}")).collect();
        Panel::new(values, mask.clone(), names).unwrap()
    }

    fn recovery_error(result: &ImputationResult, truth: &DMatrix<f64>, mask: &DMatrix<bool>) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..truth.ncols() {
            for i in 0..truth.nrows() {
                if !mask[(i, j)] {
                    num += (result.completed.values()[(i, j)] - truth[(i, j)]).powi(2);
                    den += truth[(i, j)].powi(2);
                }
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn complete_panel_is_untouched() {
        let panel = Panel::from_matrix(low_rank(20, 8, 2, 1)).unwrap();
        let res = em_impute(&panel, 2, &EmOptions::default()).unwrap();
        assert_eq!(res.completed, panel);
        assert_eq!(res.iterations, 1);
        assert!(res.converged);
    }

    #[test]
    fn recovers_rank_one() {
        let truth = low_rank(60, 20, 1, 2);
        let mask = mask_random(60, 20, 0.1, 3);
        let res = em_impute(&masked_panel(&truth, &mask), 1, &EmOptions::default()).unwrap();
        assert!(res.converged);
        assert!(recovery_error(&res, &truth, &mask) < 1e-3);
    }

    #[test]
    fn recovers_rank_three_and_keeps_observed_bits() {
        let truth = low_rank(120, 40, 3, 4);
        let mask = mask_random(120, 40, 0.1, 5);
        let panel = masked_panel(&truth, &mask);
        let res = em_impute(&panel, 3, &EmOptions::default()).unwrap();
        assert!(recovery_error(&res, &truth, &mask) < 1e-3);
        assert!(res.completed.is_complete());
        for j in 0..40 {
            for i in 0..120 {
                if mask[(i, j)] {
                    assert_eq!(res.completed.values()[(i, j)].to_bits(), truth[(i, j)].to_bits());
                }
            }
        }
        let tail = &res.delta_history[res.delta_history.len() - 5..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn flags_non_convergence() {
        let truth = low_rank(40, 15, 2, 6);
        let mask = mask_random(40, 15, 0.2, 7);
        let res = em_impute(&masked_panel(&truth, &mask), 2, &EmOptions { tol: 1e-14, max_iter: 3 }).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 3);
        assert_eq!(res.delta_history.len(), 3);
    }

    #[test]
    fn observation_floor_is_enforced() {
        let truth = low_rank(10, 4, 1, 8);
        let mut mask = DMatrix::from_element(10, 4, true);
        for i in 0..7 {
            mask[(i, 2)] = false;
        }
        let panel = masked_panel(&truth, &mask);
        assert!(em_impute(&panel, 2, &EmOptions::default()).is_ok());
        assert!(matches!(em_impute(&panel, 3, &EmOptions::default()), Err(FactorError::Validation(_))));
        assert!(matches!(em_impute(&panel, 0, &EmOptions::default()), Err(FactorError::Argument(_))));
    }

    #[test]
    fn auto_k_finds_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = low_rank(200, 100, 3, 10) + gaussian_matrix(&mut rng, 200, 100);
        let mask = mask_random(200, 100, 0.003, 11);
        assert_eq!(select_k_balanced(&masked_panel(&truth, &mask), 8).unwrap(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn permutation_commutes(seed in 0u64..1000) {
            let truth = low_rank(30, 8, 2, seed);
            let mask = mask_random(30, 8, 0.1, seed + 1);
            let panel = masked_panel(&truth, &mask);
            let mut order: Vec<usize> = (0..8).collect();
            order.rotate_left((seed % 7) as usize + 1);
            let opts = EmOptions { tol: 1e-10, max_iter: 2000 };
            let a = em_impute(&panel, 2, &opts).unwrap().completed.permute_columns(&order).unwrap();
            let b = em_impute(&panel.permute_columns(&order).unwrap(), 2, &opts).unwrap().completed;
            prop_assert!((a.values() - b.values()).amax() < 1e-6);
        }
    }
}
