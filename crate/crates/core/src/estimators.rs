//! Principal-components estimators.
//!
//! Every estimator returns a [`FactorFit`] whose factor and loading matrices
//! are held in scaled units, so that `Z ~ f_z * lambda_z'`. Data units follow
//! from `F = sqrt(T) f_z` and `Lambda = sqrt(N) lambda_z`, which gives
//! `F Lambda' = sqrt(NT) f_z lambda_z'`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{gaussian_matrix, orthonormal_basis, solve_spd, sorted_svd};
use crate::panel::{ScaledData, StandardizationInfo};
use crate::svdcore::{effective_rank, soft_threshold, top_k_svd, PartialSvd, SvdOptions};
use crate::{FactorError, Result};

/// Estimator family that produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Asymptotic principal components: `F'F/T = I`.
    Apc,
    /// Principal components with `F'F/T = Lambda'Lambda/N = diag(d)`.
    Pc,
    /// Rank-regularized principal components.
    Rpc,
    /// Rank-regularized with separate penalties on factors and loadings.
    RpcGeneral,
    /// Fit under linear restrictions on the loadings.
    Constrained,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Apc => "apc",
            Method::Pc => "pc",
            Method::Rpc => "rpc",
            Method::RpcGeneral => "rpc_general",
            Method::Constrained => "constrained",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = FactorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "apc" => Ok(Method::Apc),
            "pc" => Ok(Method::Pc),
            "rpc" => Ok(Method::Rpc),
            "rpc_general" => Ok(Method::RpcGeneral),
            "constrained" => Ok(Method::Constrained),
            other => Err(FactorError::Argument(format!("unknown method '{other}'"))),
        }
    }
}

/// Factors and loadings from one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    /// `T x r` factors in scaled units.
    pub f_z: DMatrix<f64>,
    /// `N x r` loadings in scaled units.
    pub lambda_z: DMatrix<f64>,
    /// Leading singular values of `Z`.
    pub d: DVector<f64>,
    /// Singular values actually carried by the fit: `d` for APC/PC, the
    /// thresholded values for the regularized methods.
    pub d_shrunk: DVector<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub method: Method,
    pub effective_rank: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Some requested singular value is zero.
    pub degenerate: bool,
    pub t: usize,
    pub n: usize,
    /// Left singular vectors behind the fit, when it came from an SVD.
    pub u: Option<DMatrix<f64>>,
    /// Right singular vectors behind the fit, when it came from an SVD.
    pub v: Option<DMatrix<f64>>,
}

impl FactorFit {
    /// Number of columns, including any zeroed by thresholding.
    pub fn r(&self) -> usize {
        self.f_z.ncols()
    }

    /// Factors in data units, `sqrt(T) f_z`.
    pub fn factors(&self) -> DMatrix<f64> {
        &self.f_z * (self.t as f64).sqrt()
    }

    /// Loadings in data units, `sqrt(N) lambda_z`.
    pub fn loadings(&self) -> DMatrix<f64> {
        &self.lambda_z * (self.n as f64).sqrt()
    }

    /// `f_z lambda_z'`, the fitted part of `Z`.
    pub fn scaled_component(&self) -> DMatrix<f64> {
        &self.f_z * self.lambda_z.transpose()
    }

    /// `F'F / T`.
    pub fn factor_gram(&self) -> DMatrix<f64> {
        self.f_z.transpose() * &self.f_z
    }

    /// `Lambda'Lambda / N`.
    pub fn loading_gram(&self) -> DMatrix<f64> {
        self.lambda_z.transpose() * &self.lambda_z
    }

    /// The fit restricted to its first `effective_rank` columns.
    pub fn retained(&self) -> FactorFit {
        let k = self.effective_rank;
        FactorFit {
            f_z: self.f_z.columns(0, k).into_owned(),
            lambda_z: self.lambda_z.columns(0, k).into_owned(),
            d: self.d.rows(0, k.min(self.d.len())).into_owned(),
            d_shrunk: self.d_shrunk.rows(0, k.min(self.d_shrunk.len())).into_owned(),
            u: self.u.as_ref().map(|u| u.columns(0, k).into_owned()),
            v: self.v.as_ref().map(|v| v.columns(0, k).into_owned()),
            ..self.clone()
        }
    }

    /// Penalty level `sqrt(gamma1 gamma2)` applied to the singular values.
    pub fn gamma(&self) -> f64 {
        (self.gamma1 * self.gamma2).sqrt()
    }
}

/// `C = F Lambda'` in data units.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonComponent {
    pub c: DMatrix<f64>,
}

fn check_rank(data: &ScaledData, r: usize) -> Result<()> {
    let kmax = data.t().min(data.n());
    if r == 0 || r > kmax {
        return Err(FactorError::Argument(format!("r = {r} must lie in 1..={kmax}")));
    }
    Ok(())
}

fn check_gamma(gamma: f64, name: &str) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(FactorError::Argument(format!("{name} must be a nonnegative number, got {gamma}")));
    }
    Ok(())
}

fn svd_of(data: &ScaledData, r: usize) -> Result<PartialSvd> {
    check_rank(data, r)?;
    top_k_svd(data.z(), r, &SvdOptions::default())
}

fn scale_columns(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= w[j];
    }
    out
}

fn base_fit(svd: &PartialSvd, t: usize, n: usize, method: Method) -> FactorFit {
    FactorFit {
        f_z: DMatrix::zeros(t, svd.k),
        lambda_z: DMatrix::zeros(n, svd.k),
        d: svd.d.clone(),
        d_shrunk: svd.d.clone(),
        gamma1: 0.0,
        gamma2: 0.0,
        method,
        effective_rank: effective_rank(&svd.d),
        converged: svd.converged,
        iterations: svd.iterations,
        degenerate: svd.degenerate || svd.d.iter().any(|&x| x == 0.0),
        t,
        n,
        u: Some(svd.u.clone()),
        v: Some(svd.v.clone()),
    }
}

/// APC from a precomputed partial SVD: `f_z = U`, `lambda_z = V diag(d)`.
pub fn apc_from_svd(svd: &PartialSvd, t: usize, n: usize) -> FactorFit {
    let mut fit = base_fit(svd, t, n, Method::Apc);
    fit.f_z = svd.u.clone();
    fit.lambda_z = scale_columns(&svd.v, &svd.d);
    fit
}

/// PC from a precomputed partial SVD: both sides carry `diag(d)^{1/2}`.
pub fn pc_from_svd(svd: &PartialSvd, t: usize, n: usize) -> FactorFit {
    let root = svd.d.map(f64::sqrt);
    let mut fit = base_fit(svd, t, n, Method::Pc);
    fit.f_z = scale_columns(&svd.u, &root);
    fit.lambda_z = scale_columns(&svd.v, &root);
    fit
}

/// RPC from a precomputed partial SVD.
pub fn rpc_from_svd(svd: &PartialSvd, t: usize, n: usize, gamma: f64) -> Result<FactorFit> {
    let shrunk = soft_threshold(&svd.d, gamma)?;
    let root = shrunk.map(f64::sqrt);
    let mut fit = base_fit(svd, t, n, Method::Rpc);
    fit.f_z = scale_columns(&svd.u, &root);
    fit.lambda_z = scale_columns(&svd.v, &root);
    fit.effective_rank = effective_rank(&shrunk);
    fit.d_shrunk = shrunk;
    fit.gamma1 = gamma;
    fit.gamma2 = gamma;
    Ok(fit)
}

/// Asymptotic principal components with `r` factors.
pub fn apc(data: &ScaledData, r: usize) -> Result<FactorFit> {
    Ok(apc_from_svd(&svd_of(data, r)?, data.t(), data.n()))
}

/// Principal components with `r` factors.
pub fn pc(data: &ScaledData, r: usize) -> Result<FactorFit> {
    Ok(pc_from_svd(&svd_of(data, r)?, data.t(), data.n()))
}

/// Rank-regularized principal components: singular values soft-thresholded by
/// `gamma` and split evenly between factors and loadings.
pub fn rpc_closed_form(data: &ScaledData, r: usize, gamma: f64) -> Result<FactorFit> {
    check_gamma(gamma, "gamma")?;
    rpc_from_svd(&svd_of(data, r)?, data.t(), data.n(), gamma)
}

/// Closed form with separate penalties on factors (`gamma1`) and loadings
/// (`gamma2`).
///
/// Singular values are thresholded at `sqrt(gamma1 gamma2)`; the factor side
/// is scaled by `(gamma2/gamma1)^{1/4}` and the loading side by its inverse,
/// so the common component does not depend on how the penalty is split.
pub fn rpc_general(data: &ScaledData, r: usize, gamma1: f64, gamma2: f64) -> Result<FactorFit> {
    if !(gamma1 > 0.0 && gamma2 > 0.0) {
        return Err(FactorError::Argument(format!(
            "gamma1 and gamma2 must be positive, got {gamma1} and {gamma2}"
        )));
    }
    let svd = svd_of(data, r)?;
    let gamma = (gamma1 * gamma2).sqrt();
    let mut fit = rpc_from_svd(&svd, data.t(), data.n(), gamma)?;
    let tilt = (gamma2 / gamma1).powf(0.25);
    fit.f_z *= tilt;
    fit.lambda_z /= tilt;
    fit.gamma1 = gamma1;
    fit.gamma2 = gamma2;
    fit.method = Method::RpcGeneral;
    Ok(fit)
}

/// Settings for [`algorithm_rpc`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterationOptions {
    /// Relative change in `F Lambda'` between sweeps that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 10_000, seed: 0 }
    }
}

/// Result of [`algorithm_rpc_detailed`].
#[derive(Debug, Clone)]
pub struct AlgorithmRpcOutput {
    /// Final fit after the singular-vector cleanup.
    pub fit: FactorFit,
    /// Factors from the last ridge step, before orthogonalization and cleanup.
    pub stage_factors: DMatrix<f64>,
    /// Orthogonalized loadings paired with `stage_factors`.
    pub stage_loadings: DMatrix<f64>,
}

/// RPC by alternating ridge regressions followed by a cleanup SVD.
pub fn algorithm_rpc(data: &ScaledData, r: usize, gamma: f64, opts: &IterationOptions) -> Result<FactorFit> {
    algorithm_rpc_detailed(data, r, gamma, opts).map(|out| out.fit)
}

/// [`algorithm_rpc`] that also returns the pre-cleanup pair, on which the
/// first-order conditions of the penalized problem hold.
pub fn algorithm_rpc_detailed(
    data: &ScaledData,
    r: usize,
    gamma: f64,
    opts: &IterationOptions,
) -> Result<AlgorithmRpcOutput> {
    check_rank(data, r)?;
    check_gamma(gamma, "gamma")?;
    if !(opts.tol > 0.0) {
        return Err(FactorError::Argument(format!("tol must be positive, got {}", opts.tol)));
    }
    let z = data.z();
    let ridge = DMatrix::<f64>::identity(r, r) * gamma;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut f = orthonormal_basis(&gaussian_matrix(&mut rng, data.t(), r));
    let mut prev: Option<DMatrix<f64>> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut lambda_basis;
    let mut stage_f;
    let mut stage_l;
    loop {
        iterations += 1;
        // Loadings given factors, then strip the rotation.
        let gram = f.transpose() * &f + &ridge;
        let lambda_tilde = solve_spd(&gram, &(f.transpose() * z), "ridge step for loadings")?.transpose();
        let (ul, dl, _) = sorted_svd(&lambda_tilde);
        let lambda = scale_columns(&ul, &dl);
        lambda_basis = ul;

        // Factors given loadings, then strip the rotation.
        let gram = lambda.transpose() * &lambda + &ridge;
        let f_tilde = solve_spd(&gram, &(lambda.transpose() * z.transpose()), "ridge step for factors")?.transpose();
        let (uf, df, _) = sorted_svd(&f_tilde);
        f = scale_columns(&uf, &df);

        let fitted = &f_tilde * lambda.transpose();
        let change = match &prev {
            Some(p) => (&fitted - p).norm() / fitted.norm().max(f64::MIN_POSITIVE),
            None => f64::INFINITY,
        };
        stage_f = f_tilde;
        stage_l = lambda;
        if change < opts.tol || fitted.norm() == 0.0 {
            converged = true;
        }
        if converged || iterations >= opts.max_iter {
            break;
        }
        prev = Some(fitted);
    }

    // Cleanup: SVD of Z projected on the loading basis gives the left
    // singular vectors and values; the right ones follow by rotation.
    let (u, d, small_v) = sorted_svd(&(z * &lambda_basis));
    let mut v = &lambda_basis * small_v;
    let mut u = u;
    crate::linalg::fix_signs(&mut u, &mut v);
    let svd = PartialSvd { u, d, v, k: r, converged, iterations, degenerate: false, ties: false };
    let mut fit = rpc_from_svd(&svd, data.t(), data.n(), gamma)?;
    fit.converged = converged;
    fit.iterations = iterations;
    Ok(AlgorithmRpcOutput { fit, stage_factors: stage_f, stage_loadings: stage_l })
}

/// Common component of a fit in data units, optionally mapped back to the
/// original units of the panel (column means added back, sds multiplied in).
pub fn common_component(fit: &FactorFit, scale_back: Option<&StandardizationInfo>) -> Result<CommonComponent> {
    let c = fit.factors() * fit.loadings().transpose();
    let c = match scale_back {
        Some(info) => info.destandardize(&c)?,
        None => c,
    };
    Ok(CommonComponent { c })
}
