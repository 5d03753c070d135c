//! Rotation diagnostics, asymptotic variances, confidence intervals for the
//! common component and ridge regressions on estimated factors.
//!
//! Variances are expressed for the PC normalization first and then carried
//! to the other normalizations by the diagonal map relating each estimator
//! to PC: `F_t = S_F F_hat_t`, `Lambda_i = S_L Lambda_hat_i`.
//!
//! | method      | `S_F`            | `S_L`             |
//! |-------------|------------------|-------------------|
//! | APC         | `D^{-1/2}`       | `D^{1/2}`         |
//! | PC          | `I`              | `I`               |
//! | RPC         | `Delta`          | `Delta`           |
//! | RPC general | `c Delta`        | `Delta / c`       |
//!
//! with `Delta = diag(sqrt((d_j - gamma)_+ / d_j))` and
//! `c = (gamma2/gamma1)^{1/4}`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::estimators::{FactorFit, Method};
use crate::linalg::{inverse, solve_spd};
use crate::panel::ScaledData;
use crate::{FactorError, Result};

/// Rotations linking estimates to simulated truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationDiagnostics {
    /// `(L0'L0/N)(F0'F_apc/T) D^{-2}`.
    pub h_tilde: DMatrix<f64>,
    /// `(L0'L0)(L_apc'L0)^{-1}`.
    pub h1: DMatrix<f64>,
    /// `(F0'F0)^{-1}(F0'F_apc)`.
    pub h2: DMatrix<f64>,
    /// `h_tilde D^{1/2}`, the rotation for PC factors.
    pub h_hat: DMatrix<f64>,
    /// `(L0'L0)(L_pc'L0)^{-1}`.
    pub h1_hat: DMatrix<f64>,
    /// `(F0'F0)^{-1}(F0'F_pc)`.
    pub h2_hat: DMatrix<f64>,
    /// `h_hat Delta`, the rotation for RPC factors.
    pub h_bar: DMatrix<f64>,
    /// `Delta h_hat^{-1}`, the rotation for RPC loadings.
    pub g_bar: DMatrix<f64>,
    pub delta: DVector<f64>,
}

fn diag(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

fn svd_parts(fit: &FactorFit) -> Result<(&DMatrix<f64>, &DMatrix<f64>)> {
    match (&fit.u, &fit.v) {
        (Some(u), Some(v)) => Ok((u, v)),
        _ => Err(FactorError::Precondition(format!(
            "{} fit carries no singular vectors; rotations need an SVD-based fit",
            fit.method.name()
        ))),
    }
}

/// Shrinkage factors `sqrt((d_j - gamma)_+ / d_j)`, zero where `d_j = 0`.
pub fn shrinkage(d: &DVector<f64>, gamma: f64) -> DVector<f64> {
    d.map(|x| if x > 0.0 { ((x - gamma).max(0.0) / x).sqrt() } else { 0.0 })
}

/// Rotation matrices for a fit against known factors and loadings.
pub fn rotation_diagnostics(fit: &FactorFit, f0: &DMatrix<f64>, lambda0: &DMatrix<f64>) -> Result<RotationDiagnostics> {
    let (u, v) = svd_parts(fit)?;
    let (t, n, r) = (fit.t as f64, fit.n as f64, fit.r());
    if f0.shape() != (fit.t, r) || lambda0.shape() != (fit.n, r) {
        return Err(FactorError::Argument(format!(
            "truth must be {} x {r} and {} x {r}; got {:?} and {:?}",
            fit.t,
            fit.n,
            f0.shape(),
            lambda0.shape()
        )));
    }
    let d = &fit.d;
    if d.iter().any(|&x| x <= 0.0) {
        return Err(FactorError::Singular("zero singular value in the fit".into()));
    }
    let root_d = d.map(f64::sqrt);
    let f_apc = u * t.sqrt();
    let l_apc = v * diag(d) * n.sqrt();
    let f_pc = u * diag(&root_d) * t.sqrt();
    let l_pc = v * diag(&root_d) * n.sqrt();

    let l0l0 = lambda0.transpose() * lambda0;
    let f0f0 = f0.transpose() * f0;
    let h_tilde = &l0l0 / n * (f0.transpose() * &f_apc / t) * diag(&d.map(|x| 1.0 / (x * x)));
    let h1 = &l0l0 * inverse(&(l_apc.transpose() * lambda0), "loading cross-moment")?;
    let h2 = solve_spd(&f0f0, &(f0.transpose() * &f_apc), "factor second moment")?;
    let h1_hat = &l0l0 * inverse(&(l_pc.transpose() * lambda0), "loading cross-moment")?;
    let h2_hat = solve_spd(&f0f0, &(f0.transpose() * &f_pc), "factor second moment")?;
    let h_hat = &h_tilde * diag(&root_d);
    let delta = shrinkage(d, fit.gamma());
    let h_bar = &h_hat * diag(&delta);
    let g_bar = diag(&delta) * inverse(&h_hat, "rotation")?;
    Ok(RotationDiagnostics { h_tilde, h1, h2, h_hat, h1_hat, h2_hat, h_bar, g_bar, delta })
}

/// Plug-in variance estimates at one `(i, t)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvarEstimates {
    pub i: usize,
    pub t: usize,
    /// Cross-section score covariance `(1/N) sum_i L_i L_i' e_it^2` (PC loadings).
    pub gamma_t: DMatrix<f64>,
    /// Newey-West long-run covariance of `F_t e_it` (PC factors).
    pub phi_i: DMatrix<f64>,
    /// Asymptotic variance of `sqrt(N)(F_t - H'F0_t)` for the fit's factors.
    pub avar_f_t: DMatrix<f64>,
    /// Asymptotic variance of `sqrt(T)(L_i - G L0_i)` for the fit's loadings.
    pub avar_lambda_i: DMatrix<f64>,
    /// Variance of the estimated common component at `(i, t)`.
    pub a_c_it: f64,
    /// Estimated common component at `(i, t)` in data units.
    pub c_it: f64,
    pub hac_lags: usize,
}

/// Newey-West lag `floor(4 (T/100)^{2/9})`.
pub fn default_hac_lags(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Residuals and scaled quantities shared by all `(i, t)` cells of one fit.
///
/// Only factors with positive thresholded singular value enter.
#[derive(Debug, Clone)]
pub struct AvarContext {
    factors: DMatrix<f64>,
    loadings: DMatrix<f64>,
    pc_factors: DMatrix<f64>,
    pc_loadings: DMatrix<f64>,
    residuals: DMatrix<f64>,
    d: DVector<f64>,
    scale_f: DVector<f64>,
    scale_l: DVector<f64>,
    delta: DVector<f64>,
    gamma: f64,
    method: Method,
    hac_lags: usize,
}

impl AvarContext {
    pub fn new(fit: &FactorFit, data: &ScaledData, hac_lags: Option<usize>) -> Result<Self> {
        let (u, v) = svd_parts(fit)?;
        if (data.t(), data.n()) != (fit.t, fit.n) {
            return Err(FactorError::Argument("fit and data dimensions differ".into()));
        }
        let k = fit.effective_rank;
        if k == 0 {
            return Err(FactorError::Precondition("fit retains no factors".into()));
        }
        let (t, n) = (fit.t as f64, fit.n as f64);
        let d = fit.d.rows(0, k).into_owned();
        if d.iter().any(|&x| x <= 0.0) {
            return Err(FactorError::Singular("zero singular value among retained factors".into()));
        }
        let root_d = d.map(f64::sqrt);
        let pc_factors = u.columns(0, k) * diag(&root_d) * t.sqrt();
        let pc_loadings = v.columns(0, k) * diag(&root_d) * n.sqrt();
        let residuals = data.x() - &pc_factors * pc_loadings.transpose();
        let gamma = fit.gamma();
        let delta = match fit.method {
            Method::Rpc | Method::RpcGeneral => shrinkage(&d, gamma),
            _ => DVector::from_element(k, 1.0),
        };
        let (scale_f, scale_l) = match fit.method {
            Method::Apc => (root_d.map(|x| 1.0 / x), root_d.clone()),
            Method::Pc | Method::Rpc => (delta.clone(), delta.clone()),
            Method::RpcGeneral => {
                let tilt = (fit.gamma2 / fit.gamma1).powf(0.25);
                (&delta * tilt, &delta / tilt)
            }
            Method::Constrained => {
                return Err(FactorError::Precondition("variances are not available for constrained fits".into()))
            }
        };
        let factors = fit.factors().columns(0, k).into_owned();
        let loadings = fit.loadings().columns(0, k).into_owned();
        let hac_lags = hac_lags.unwrap_or_else(|| default_hac_lags(fit.t));
        Ok(Self {
            factors,
            loadings,
            pc_factors,
            pc_loadings,
            residuals,
            d,
            scale_f,
            scale_l,
            delta,
            gamma,
            method: fit.method,
            hac_lags,
        })
    }

    /// Estimates at series `i`, period `t` (0-based).
    pub fn at(&self, i: usize, t: usize) -> Result<AvarEstimates> {
        let (tt, nn) = self.residuals.shape();
        if i >= nn || t >= tt {
            return Err(FactorError::Argument(format!("cell ({i}, {t}) outside {nn} series x {tt} periods")));
        }
        let k = self.d.len();
        let (n, big_t) = (nn as f64, tt as f64);

        let mut gamma_t = DMatrix::zeros(k, k);
        for j in 0..nn {
            let l = self.pc_loadings.row(j).transpose();
            let e = self.residuals[(t, j)];
            gamma_t += &l * l.transpose() * (e * e);
        }
        gamma_t /= n;

        let scores: Vec<DVector<f64>> =
            (0..tt).map(|s| self.pc_factors.row(s).transpose() * self.residuals[(s, i)]).collect();
        let mut phi_i = DMatrix::zeros(k, k);
        for s in &scores {
            phi_i += s * s.transpose();
        }
        for lag in 1..=self.hac_lags.min(tt - 1) {
            let w = 1.0 - lag as f64 / (self.hac_lags as f64 + 1.0);
            let mut cross = DMatrix::zeros(k, k);
            for s in lag..tt {
                cross += &scores[s] * scores[s - lag].transpose();
            }
            phi_i += (&cross + cross.transpose()) * w;
        }
        phi_i /= big_t;

        let d_inv = diag(&self.d.map(|x| 1.0 / x));
        let pc_avar_f = &d_inv * &gamma_t * &d_inv;
        let pc_avar_l = &d_inv * &phi_i * &d_inv;
        let sf = diag(&self.scale_f);
        let sl = diag(&self.scale_l);
        let avar_f_t = symmetrize(&sf * pc_avar_f * &sf);
        let avar_lambda_i = symmetrize(&sl * pc_avar_l * &sl);

        let lam = self.loadings.row(i).transpose();
        let fac = self.factors.row(t).transpose();
        let a_c_it = (lam.transpose() * &avar_f_t * &lam)[(0, 0)] / n
            + (fac.transpose() * &avar_lambda_i * &fac)[(0, 0)] / big_t;
        Ok(AvarEstimates {
            i,
            t,
            gamma_t,
            phi_i,
            avar_f_t,
            avar_lambda_i,
            a_c_it,
            c_it: fac.dot(&lam),
            hac_lags: self.hac_lags,
        })
    }

    /// Shrinkage factors of the retained columns.
    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    /// Feasible plug-in for the bias `E[C_it] - C0_it` of a regularized fit;
    /// zero for unregularized fits.
    ///
    /// Since `C_hat - C_bar = gamma F_bar (D^gamma)^{-1} L_bar'`, the bias is
    /// `-gamma F_bar_t' (D^gamma)^{-1} L_bar_i`.
    pub fn bias(&self, i: usize, t: usize) -> Result<f64> {
        match self.method {
            Method::Rpc | Method::RpcGeneral if self.gamma > 0.0 => {}
            _ => return Ok(0.0),
        }
        let mut acc = 0.0;
        for j in 0..self.d.len() {
            let shrunk = self.d[j] - self.gamma;
            if shrunk <= 0.0 {
                return Err(FactorError::Precondition(format!(
                    "singular value {} does not exceed gamma {}; reduce the number of factors",
                    j + 1,
                    self.gamma
                )));
            }
            acc += self.factors[(t, j)] * self.loadings[(i, j)] / shrunk;
        }
        Ok(-self.gamma * acc)
    }
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Plug-in variance estimates for cell `(i, t)`.
pub fn avar(fit: &FactorFit, data: &ScaledData, i: usize, t: usize, hac_lags: Option<usize>) -> Result<AvarEstimates> {
    AvarContext::new(fit, data, hac_lags)?.at(i, t)
}

/// Confidence interval for one entry of the common component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentInterval {
    pub estimate: f64,
    /// Estimated `E[estimate] - C0_it`.
    pub bias: f64,
    /// `estimate - bias`.
    pub corrected: f64,
    pub half_width: f64,
    /// Interval centred on the corrected estimate.
    pub lower: f64,
    pub upper: f64,
}

/// Two-sided normal interval at confidence `level` around the bias-corrected
/// estimate.
pub fn common_component_ci(ctx: &AvarContext, est: &AvarEstimates, level: f64) -> Result<ComponentInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(FactorError::Argument(format!("level must lie in (0, 1), got {level}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z = normal.inverse_cdf(0.5 + level / 2.0);
    let bias = ctx.bias(est.i, est.t)?;
    let half_width = z * est.a_c_it.max(0.0).sqrt();
    let corrected = est.c_it - bias;
    Ok(ComponentInterval {
        estimate: est.c_it,
        bias,
        corrected,
        half_width,
        lower: corrected - half_width,
        upper: corrected + half_width,
    })
}

/// Relative asymptotic MSE of a shrunk single-factor common component,
/// `(delta1 - 1)^2 C0^2 / avar_C + delta1^2`.
pub fn amse_ratio(delta1: f64, c0_it: f64, avar_c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta1) {
        return Err(FactorError::Argument(format!("delta1 must lie in [0, 1], got {delta1}")));
    }
    if !(avar_c > 0.0) {
        return Err(FactorError::Argument(format!("avar_C must be positive, got {avar_c}")));
    }
    Ok((delta1 - 1.0).powi(2) * c0_it * c0_it / avar_c + delta1 * delta1)
}

/// Coefficients from regressing `y` on the retained factors of a fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub ols: Vec<f64>,
    pub ridge: Vec<f64>,
    pub kappa: f64,
    /// `y - F alpha_ols`.
    pub residuals: Vec<f64>,
}

/// Ridge coefficients from OLS ones: `(G + kappa/T I)^{-1} G alpha_ols` with
/// `G = F'F/T`.
pub fn ridge_from_ols(alpha_ols: &DVector<f64>, gram: &DMatrix<f64>, kappa: f64, t: usize) -> Result<DVector<f64>> {
    let k = gram.nrows();
    let lhs = gram + DMatrix::identity(k, k) * (kappa / t as f64);
    let sol = solve_spd(&lhs, &column(&(gram * alpha_ols)), "ridge system")?;
    Ok(sol.column(0).into_owned())
}

/// OLS and ridge regression of `y` on the factors with positive thresholded
/// singular value. No intercept is added.
///
/// The ridge coefficients are derived from the OLS ones and the factor Gram
/// matrix, which is diagonal (`d^gamma`, `d` or `I`) for SVD-based fits.
pub fn regress(y: &DVector<f64>, fit: &FactorFit, kappa: f64) -> Result<RegressionResult> {
    if !(kappa >= 0.0) {
        return Err(FactorError::Argument(format!("kappa must be nonnegative, got {kappa}")));
    }
    if y.len() != fit.t {
        return Err(FactorError::Argument(format!("y has {} entries, factors have {} rows", y.len(), fit.t)));
    }
    let kept = fit.retained();
    let k = kept.r();
    if k == 0 {
        return Err(FactorError::Precondition("fit retains no factors".into()));
    }
    let f = kept.factors();
    let gram = match fit.method {
        Method::Apc => DMatrix::identity(k, k),
        Method::Pc | Method::Rpc | Method::RpcGeneral => {
            let c = match fit.method {
                Method::RpcGeneral => (fit.gamma2 / fit.gamma1).sqrt(),
                _ => 1.0,
            };
            diag(&(&kept.d_shrunk * c))
        }
        Method::Constrained => kept.factor_gram(),
    };
    let t = fit.t as f64;
    let alpha = solve_spd(&(&gram * t), &column(&(f.transpose() * y)), "factor Gram matrix")?.column(0).into_owned();
    let ridge = ridge_from_ols(&alpha, &gram, kappa, fit.t)?;
    let residuals = y - &f * &alpha;
    Ok(RegressionResult {
        ols: alpha.iter().copied().collect(),
        ridge: ridge.iter().copied().collect(),
        kappa,
        residuals: residuals.iter().copied().collect(),
    })
}
