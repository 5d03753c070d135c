//! Linear restrictions `R vec(Lambda) = phi` on factor loadings.
//!
//! `vec` stacks the `N x r` loading matrix column by column, so entry
//! `(i, j)` sits at position `j * N + i` (0-based). Restrictions are stored as
//! sparse coefficient lists and never expanded to the `N r x N r` Kronecker
//! system on the exact path.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::estimators::{rpc_closed_form, FactorFit, Method};
use crate::linalg::{inverse, solve_spd, sorted_svd};
use crate::panel::ScaledData;
use crate::{FactorError, Result};

/// One coefficient of a restriction, 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub series: usize,
    pub factor: usize,
    pub coef: f64,
}

/// `sum(coef * Lambda[series, factor]) = phi`, in data-unit loadings.
#[derive(Debug, Clone, PartialEq)]
pub struct Restriction {
    pub terms: Vec<Term>,
    pub phi: f64,
}

/// A validated set of restrictions for an `N x r` loading matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionSet {
    n: usize,
    r: usize,
    rows: Vec<Restriction>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TermFile {
    i: usize,
    j: usize,
    c: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RowFile {
    terms: Vec<TermFile>,
    phi: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SetFile {
    r: usize,
    constraints: Vec<RowFile>,
}

impl RestrictionSet {
    /// Validate indices, `m < N r` and full row rank.
    ///
    /// Repeated `(series, factor)` pairs inside one restriction are merged.
    pub fn new(n: usize, r: usize, rows: Vec<Restriction>) -> Result<Self> {
        let mut merged = Vec::with_capacity(rows.len());
        for (a, row) in rows.into_iter().enumerate() {
            let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for term in &row.terms {
                if term.series >= n || term.factor >= r {
                    return Err(FactorError::Argument(format!(
                        "constraint {}: entry ({}, {}) outside the {n} x {r} loading matrix",
                        a + 1,
                        term.series + 1,
                        term.factor + 1
                    )));
                }
                if !term.coef.is_finite() {
                    return Err(FactorError::Argument(format!("constraint {}: non-finite coefficient", a + 1)));
                }
                *acc.entry((term.factor, term.series)).or_insert(0.0) += term.coef;
            }
            if !row.phi.is_finite() {
                return Err(FactorError::Argument(format!("constraint {}: non-finite phi", a + 1)));
            }
            let terms = acc
                .into_iter()
                .filter(|&(_, c)| c != 0.0)
                .map(|((factor, series), coef)| Term { series, factor, coef })
                .collect();
            merged.push(Restriction { terms, phi: row.phi });
        }
        if !merged.is_empty() && merged.len() >= n * r {
            return Err(FactorError::Argument(format!(
                "{} restrictions leave no freedom in a {n} x {r} loading matrix",
                merged.len()
            )));
        }
        let set = Self { n, r, rows: merged };
        set.check_row_rank()?;
        Ok(set)
    }

    /// No restrictions.
    pub fn empty(n: usize, r: usize) -> Self {
        Self { n, r, rows: Vec::new() }
    }

    /// Parse the JSON restriction format (1-based indices).
    pub fn from_json_str(text: &str, n: usize) -> Result<Self> {
        let file: SetFile = serde_json::from_str(text)?;
        let mut rows = Vec::with_capacity(file.constraints.len());
        for (a, row) in file.constraints.into_iter().enumerate() {
            let mut terms = Vec::with_capacity(row.terms.len());
            for t in row.terms {
                if t.i == 0 || t.j == 0 {
                    return Err(FactorError::Argument(format!("constraint {}: indices are 1-based", a + 1)));
                }
                terms.push(Term { series: t.i - 1, factor: t.j - 1, coef: t.c });
            }
            rows.push(Restriction { terms, phi: row.phi });
        }
        Self::new(n, file.r, rows)
    }

    /// Read a JSON restriction file.
    pub fn load(path: impl AsRef<Path>, n: usize) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?, n)
    }

    /// Serialize back to the JSON file format.
    pub fn to_json(&self) -> Result<String> {
        let file = SetFile {
            r: self.r,
            constraints: self
                .rows
                .iter()
                .map(|row| RowFile {
                    terms: row.terms.iter().map(|t| TermFile { i: t.series + 1, j: t.factor + 1, c: t.coef }).collect(),
                    phi: row.phi,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Number of restrictions.
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Restriction] {
        &self.rows
    }

    pub fn phi(&self) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.rows.iter().map(|r| r.phi))
    }

    /// Dense `m x Nr` matrix, for diagnostics and small problems.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.m(), self.n * self.r);
        for (a, row) in self.rows.iter().enumerate() {
            for t in &row.terms {
                out[(a, t.factor * self.n + t.series)] += t.coef;
            }
        }
        out
    }

    /// `R vec(lambda)`.
    pub fn apply(&self, lambda: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.m(),
            self.rows.iter().map(|row| row.terms.iter().map(|t| t.coef * lambda[(t.series, t.factor)]).sum()),
        )
    }

    /// `||R vec(lambda) - phi||_inf`.
    pub fn residual(&self, lambda: &DMatrix<f64>) -> f64 {
        (self.apply(lambda) - self.phi()).amax()
    }

    /// `R' mu` reshaped to `N x r`.
    fn adjoint(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.r);
        for (a, row) in self.rows.iter().enumerate() {
            for t in &row.terms {
                out[(t.series, t.factor)] += t.coef * mu[a];
            }
        }
        out
    }

    /// `R (W kron I_N) R'` for a symmetric `r x r` weight `W`, built from the
    /// sparse terms: only terms on the same series interact.
    fn weighted_gram(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut by_series: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
        for (a, row) in self.rows.iter().enumerate() {
            for t in &row.terms {
                by_series.entry(t.series).or_default().push((a, t.factor, t.coef));
            }
        }
        let m = self.m();
        let mut out = DMatrix::zeros(m, m);
        for terms in by_series.values() {
            for &(a, ja, ca) in terms {
                for &(b, jb, cb) in terms {
                    out[(a, b)] += ca * cb * w[(ja, jb)];
                }
            }
        }
        out
    }

    fn check_row_rank(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Ok(());
        }
        let dense = self.dense();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut dependent = Vec::new();
        for a in 0..self.m() {
            let row = dense.row(a).transpose();
            let scale = row.norm();
            let mut resid = row.clone();
            for q in &basis {
                let proj = q.dot(&resid);
                resid -= q * proj;
            }
            let left = resid.norm();
            if scale == 0.0 || left <= 1e-10 * scale {
                dependent.push(a + 1);
            } else {
                basis.push(resid / left);
            }
        }
        if !dependent.is_empty() {
            let list: Vec<String> = dependent.iter().map(|a| a.to_string()).collect();
            return Err(FactorError::Argument(format!(
                "restriction matrix is not full row rank; constraint(s) {} depend on earlier ones",
                list.join(", ")
            )));
        }
        let (_, s, _) = sorted_svd(&dense);
        if s[s.len() - 1] <= 1e-10 * s[0] {
            return Err(FactorError::Argument("restriction matrix is numerically rank deficient".into()));
        }
        Ok(())
    }

    /// Same restrictions with `phi` multiplied by `factor`.
    fn with_scaled_phi(&self, factor: f64) -> Self {
        let rows = self.rows.iter().map(|r| Restriction { terms: r.terms.clone(), phi: r.phi * factor }).collect();
        Self { n: self.n, r: self.r, rows }
    }

    fn check_dims(&self, n: usize, r: usize) -> Result<()> {
        if (n, r) != (self.n, self.r) {
            return Err(FactorError::Argument(format!(
                "restrictions target a {} x {} loading matrix, got {n} x {r}",
                self.n, self.r
            )));
        }
        Ok(())
    }
}

fn ridge_gram(m: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let r = m.ncols();
    m.transpose() * m + DMatrix::identity(r, r) * gamma
}

/// Factors given loadings: `Z Lambda (Lambda'Lambda + gamma I)^{-1}`.
pub fn f_update(z: &DMatrix<f64>, lambda: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let gram = ridge_gram(lambda, gamma);
    Ok(solve_spd(&gram, &(lambda.transpose() * z.transpose()), "loading Gram matrix")?.transpose())
}

/// Loadings given factors with restrictions enforced by a quadratic penalty
/// of weight `tau`. Dense in `N r` unless `tau = 0` or there are no
/// restrictions, in which case the system splits into a ridge regression.
pub fn lambda_update_penalized(
    z: &DMatrix<f64>,
    f: &DMatrix<f64>,
    gamma: f64,
    tau: f64,
    restrictions: &RestrictionSet,
) -> Result<DMatrix<f64>> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(FactorError::Argument(format!("tau must be finite and nonnegative, got {tau}")));
    }
    let (n, r) = (z.ncols(), f.ncols());
    restrictions.check_dims(n, r)?;
    let gram = ridge_gram(f, gamma);
    let ztf = z.transpose() * f;
    if tau == 0.0 || restrictions.is_empty() {
        return Ok(solve_spd(&gram, &ztf.transpose(), "factor Gram matrix")?.transpose());
    }
    let dense_r = restrictions.dense();
    let nr = n * r;
    let mut system = dense_r.transpose() * &dense_r * tau;
    for a in 0..r {
        for b in 0..r {
            let g = gram[(a, b)];
            if g != 0.0 {
                for i in 0..n {
                    system[(a * n + i, b * n + i)] += g;
                }
            }
        }
    }
    let mut rhs = DVector::from_column_slice(ztf.as_slice());
    rhs += dense_r.transpose() * restrictions.phi() * tau;
    let sol = solve_spd(&system, &DMatrix::from_column_slice(nr, 1, rhs.as_slice()), "penalized loading system")?;
    Ok(DMatrix::from_column_slice(n, r, sol.as_slice()))
}

/// Project `lambda0` onto the restriction set in the metric `(F'F + gamma I)`.
fn project(lambda0: &DMatrix<f64>, weight_inv: &DMatrix<f64>, restrictions: &RestrictionSet) -> Result<DMatrix<f64>> {
    let inner = restrictions.weighted_gram(weight_inv);
    let mut lambda = lambda0.clone();
    // A second pass removes the rounding left by the first.
    for _ in 0..2 {
        let resid = restrictions.apply(&lambda) - restrictions.phi();
        if resid.amax() == 0.0 {
            break;
        }
        let mu = solve_spd(&inner, &DMatrix::from_column_slice(resid.len(), 1, resid.as_slice()), "restriction system")?;
        let mu = DVector::from_column_slice(mu.as_slice());
        lambda -= restrictions.adjoint(&mu) * weight_inv;
    }
    Ok(lambda)
}

/// Apply the exact restriction correction to given unrestricted loadings.
///
/// `factor_gram` is `F'F + gamma I`; only its inverse enters.
pub fn restrict_loadings(
    lambda0: &DMatrix<f64>,
    factor_gram: &DMatrix<f64>,
    restrictions: &RestrictionSet,
) -> Result<DMatrix<f64>> {
    restrictions.check_dims(lambda0.nrows(), lambda0.ncols())?;
    if restrictions.is_empty() {
        return Ok(lambda0.clone());
    }
    let weight_inv = inverse(factor_gram, "factor Gram matrix")?;
    project(lambda0, &weight_inv, restrictions)
}

/// Loadings given factors under exact restrictions: the ridge solution
/// corrected by the weighted projection onto `R vec(Lambda) = phi`.
pub fn lambda_update_exact(
    z: &DMatrix<f64>,
    f: &DMatrix<f64>,
    gamma: f64,
    restrictions: &RestrictionSet,
) -> Result<DMatrix<f64>> {
    restrictions.check_dims(z.ncols(), f.ncols())?;
    let gram = ridge_gram(f, gamma);
    let weight_inv = inverse(&gram, "factor Gram matrix")?;
    let lambda0 = z.transpose() * f * &weight_inv;
    if restrictions.is_empty() {
        return Ok(lambda0);
    }
    project(&lambda0, &weight_inv, restrictions)
}

/// Settings for [`constrained_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedOptions {
    /// Bound on the summed change of both Gram matrices between sweeps.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ConstrainedOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 50_000 }
    }
}

/// A fit under loading restrictions.
#[derive(Debug, Clone)]
pub struct ConstrainedFit {
    /// Factors and loadings; Gram matrices are generally not diagonal.
    pub fit: FactorFit,
    pub restrictions: RestrictionSet,
    /// `||R vec(Lambda) - phi||_inf` on data-unit loadings.
    pub constraint_residual: f64,
}

/// Alternate exact loading updates and factor updates, starting from the
/// unrestricted rank-regularized solution.
///
/// Restrictions refer to data-unit loadings `sqrt(N) lambda_z`.
pub fn constrained_fit(
    data: &ScaledData,
    r: usize,
    gamma: f64,
    restrictions: &RestrictionSet,
    opts: &ConstrainedOptions,
) -> Result<ConstrainedFit> {
    let n = data.n();
    restrictions.check_dims(n, r)?;
    let start = rpc_closed_form(data, r, gamma)?;
    let z = data.z();
    let root_n = (n as f64).sqrt();
    let scaled = restrictions.with_scaled_phi(1.0 / root_n);

    let mut f_u = start.f_z.clone();
    let mut l_u = start.lambda_z.clone();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let l_r = lambda_update_exact(z, &f_u, gamma, &scaled)?;
        let f_r = f_update(z, &l_r, gamma)?;
        let change = (f_r.transpose() * &f_r - f_u.transpose() * &f_u).norm()
            + (l_r.transpose() * &l_r - l_u.transpose() * &l_u).norm();
        f_u = f_r;
        l_u = l_r;
        if change <= opts.tol {
            converged = true;
            break;
        }
    }

    let mut fit = start;
    fit.f_z = f_u;
    fit.lambda_z = l_u;
    fit.method = Method::Constrained;
    fit.converged = converged;
    fit.iterations = iterations;
    fit.u = None;
    fit.v = None;
    let constraint_residual = restrictions.residual(&fit.loadings());
    Ok(ConstrainedFit { fit, restrictions: restrictions.clone(), constraint_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn term(i: usize, j: usize, c: f64) -> Term {
        Term { series: i, factor: j, coef: c }
    }

    pub(crate) fn identifying_set(n: usize) -> RestrictionSet {
        RestrictionSet::new(
            n,
            3,
            vec![
                Restriction { terms: vec![term(0, 1, 1.0)], phi: 0.0 },
                Restriction { terms: vec![term(0, 2, 1.0)], phi: 0.0 },
                Restriction { terms: vec![term(1, 0, 1.0), term(2, 0, -1.0)], phi: 0.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn vec_is_column_major() {
        let set = RestrictionSet::new(4, 2, vec![Restriction { terms: vec![term(1, 1, 2.0)], phi: 0.0 }]).unwrap();
        let dense = set.dense();
        assert_eq!(dense[(0, 4 + 1)], 2.0);
        assert_eq!(dense.row(0).iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn identifying_projection_with_diagonal_weights() {
        let unrestricted = DMatrix::from_row_slice(
            5,
            3,
            &[4.70, -1.13, 0.89, 1.21, 0.77, 2.41, -3.67, 0.05, 1.73, -1.27, -3.71, 0.45, 0.16, -0.81, -0.93],
        );
        let gram = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.5, 0.7]));
        let out = restrict_loadings(&unrestricted, &gram, &identifying_set(5)).unwrap();
        let expected = DMatrix::from_row_slice(
            5,
            3,
            &[4.70, 0.0, 0.0, -1.23, 0.77, 2.41, -1.23, 0.05, 1.73, -1.27, -3.71, 0.45, 0.16, -0.81, -0.93],
        );
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"r": 3, "constraints": [
            {"terms": [{"i": 1, "j": 2, "c": 1.0}], "phi": 0.0},
            {"terms": [{"i": 1, "j": 3, "c": 1.0}], "phi": 0.0},
            {"terms": [{"i": 2, "j": 1, "c": 1.0}, {"i": 3, "j": 1, "c": -1.0}], "phi": 0.0}
        ]}"#;
        let set = RestrictionSet::from_json_str(text, 5).unwrap();
        assert_eq!(set, identifying_set(5));
        assert_eq!(RestrictionSet::from_json_str(&set.to_json().unwrap(), 5).unwrap(), set);
    }

    #[test]
    fn rejects_dependent_rows_by_name() {
        let rows = vec![
            Restriction { terms: vec![term(0, 0, 1.0)], phi: 0.0 },
            Restriction { terms: vec![term(1, 0, 1.0)], phi: 0.0 },
            Restriction { terms: vec![term(0, 0, 2.0), term(1, 0, -3.0)], phi: 1.0 },
        ];
        let err = RestrictionSet::new(3, 2, rows).unwrap_err();
        assert!(matches!(err, FactorError::Argument(ref m) if m.contains("constraint(s) 3")), "{err}");
    }

    #[test]
    fn rejects_out_of_range_and_too_many() {
        let bad = vec![Restriction { terms: vec![term(5, 0, 1.0)], phi: 0.0 }];
        assert!(RestrictionSet::new(3, 2, bad).is_err());
        let full: Vec<_> = (0..2).map(|i| Restriction { terms: vec![term(i, 0, 1.0)], phi: 0.0 }).collect();
        assert!(RestrictionSet::new(2, 1, full).is_err());
    }

    fn problem(seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (gaussian_matrix(&mut rng, 30, 6) * 0.1, gaussian_matrix(&mut rng, 30, 3))
    }

    #[test]
    fn f_update_matches_normal_equations() {
        let (z, _) = problem(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lambda = gaussian_matrix(&mut rng, 6, 3);
        let f = f_update(&z, &lambda, 0.1).unwrap();
        let lhs = &f * (lambda.transpose() * &lambda + DMatrix::identity(3, 3) * 0.1);
        assert!((lhs - &z * &lambda).norm() < 1e-10);
        let huge = f_update(&z, &lambda, 1e12).unwrap();
        assert!(huge.norm() < 1e-10);
    }

    #[test]
    fn penalized_zero_tau_is_ridge() {
        let (z, f) = problem(3);
        let set = identifying_set(6);
        let a = lambda_update_penalized(&z, &f, 0.05, 0.0, &set).unwrap();
        let b = lambda_update_exact(&z, &f, 0.05, &RestrictionSet::empty(6, 3)).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn penalized_approaches_exact() {
        let (z, f) = problem(4);
        let set = RestrictionSet::new(
            6,
            3,
            vec![
                Restriction { terms: vec![term(0, 1, 1.0)], phi: 0.2 },
                Restriction { terms: vec![term(2, 0, 1.0), term(4, 2, 1.0)], phi: -0.1 },
            ],
        )
        .unwrap();
        let exact = lambda_update_exact(&z, &f, 0.05, &set).unwrap();
        assert!(set.residual(&exact) < 1e-12);
        let mut last = f64::INFINITY;
        for tau in [1e2, 1e4, 1e6, 1e8] {
            let pen = lambda_update_penalized(&z, &f, 0.05, tau, &set).unwrap();
            let res = set.residual(&pen);
            assert!(res < last);
            last = res;
        }
        let pen = lambda_update_penalized(&z, &f, 0.05, 1e8, &set).unwrap();
        assert!((pen - &exact).norm() <= 1e-4 * exact.norm());
    }

    #[test]
    fn exact_update_matches_kkt_oracle() {
        let (z, f) = problem(5);
        let gamma = 0.05;
        let set = identifying_set(6);
        let got = lambda_update_exact(&z, &f, gamma, &set).unwrap();
        let oracle = kkt_oracle(&z, &f, gamma, &set);
        assert!((got - oracle).amax() < 1e-10);
    }

    pub(crate) fn kkt_oracle(z: &DMatrix<f64>, f: &DMatrix<f64>, gamma: f64, set: &RestrictionSet) -> DMatrix<f64> {
        let (n, r) = (z.ncols(), f.ncols());
        let nr = n * r;
        let m = set.m();
        let gram = f.transpose() * f + DMatrix::identity(r, r) * gamma;
        let big = gram.kronecker(&DMatrix::<f64>::identity(n, n));
        let dense = set.dense();
        let mut kkt = DMatrix::zeros(nr + m, nr + m);
        kkt.view_mut((0, 0), (nr, nr)).copy_from(&big);
        kkt.view_mut((0, nr), (nr, m)).copy_from(&dense.transpose());
        kkt.view_mut((nr, 0), (m, nr)).copy_from(&dense);
        let mut rhs = DVector::zeros(nr + m);
        let ztf = z.transpose() * f;
        rhs.rows_mut(0, nr).copy_from(&DVector::from_column_slice(ztf.as_slice()));
        rhs.rows_mut(nr, m).copy_from(&set.phi());
        let sol = kkt.lu().solve(&rhs).unwrap();
        DMatrix::from_column_slice(n, r, &sol.as_slice()[..nr])
    }

    #[test]
    fn zero_restrictions_hold_exactly() {
        let (z, f) = problem(6);
        let set = RestrictionSet::new(
            6,
            3,
            vec![
                Restriction { terms: vec![term(0, 1, 1.0)], phi: 0.0 },
                Restriction { terms: vec![term(0, 2, 1.0)], phi: 0.0 },
            ],
        )
        .unwrap();
        let l = lambda_update_exact(&z, &f, 0.0, &set).unwrap();
        assert!(l[(0, 1)].abs() < 1e-15 && l[(0, 2)].abs() < 1e-15);
    }

    fn panel_data(seed: u64) -> ScaledData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = gaussian_matrix(&mut rng, 80, 3);
        let l = gaussian_matrix(&mut rng, 12, 3);
        let e = gaussian_matrix(&mut rng, 80, 12);
        ScaledData::from_matrix(&(f * l.transpose() + e * 0.5)).unwrap()
    }

    #[test]
    fn empty_restrictions_reproduce_rpc() {
        let data = panel_data(7);
        let fit = constrained_fit(&data, 3, 0.02, &RestrictionSet::empty(12, 3), &Default::default()).unwrap();
        let base = rpc_closed_form(&data, 3, 0.02).unwrap();
        assert!(fit.fit.converged);
        assert!((fit.fit.scaled_component() - base.scaled_component()).norm() < 1e-10);
    }

    #[test]
    fn homogeneity_restriction_binds() {
        let data = panel_data(8);
        let group = [2usize, 5, 7];
        let rows = group[1..]
            .iter()
            .map(|&k| Restriction { terms: vec![term(group[0], 0, 1.0), term(k, 0, -1.0)], phi: 0.0 })
            .collect();
        let set = RestrictionSet::new(12, 3, rows).unwrap();
        let fit = constrained_fit(&data, 3, 0.0, &set, &Default::default()).unwrap();
        let l = fit.fit.loadings();
        assert!((l[(2, 0)] - l[(5, 0)]).abs() < 1e-10 && (l[(2, 0)] - l[(7, 0)]).abs() < 1e-10);
        assert!(fit.constraint_residual < 1e-10);
    }
}
