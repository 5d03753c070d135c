//! Simulated panels with sparse outliers, their diagnostics, and replication
//! sweeps over grids of designs.
//!
//! Two designs are available. `Dgp1` draws factors and loadings with iid
//! standard normal entries. `Dgp2` fixes the singular values of the common
//! component at `(1, 0.8, 0.5, 0.3, 0.2 theta)` in `Z` units, so its smallest
//! factors are weak by construction.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::{entry_variance, gaussian_matrix, orthonormal_basis, sorted_svd};
use crate::panel::{standardize_and_scale, Panel};
use crate::selection::select_from_singular_values;
use crate::{FactorError, Result};

/// Share threshold defining the minimum rank of the common component.
pub const RSTAR_SHARE: f64 = 0.05;

const DGP2_BASE: [f64; 5] = [1.0, 0.8, 0.5, 0.3, 0.2];

/// Data generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dgp {
    Dgp1,
    Dgp2,
}

/// Placement of outliers among contaminated units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierLayout {
    /// Every contaminated unit is hit in the same periods.
    #[default]
    Grid,
    /// Each contaminated unit draws its own periods.
    PerUnit,
}

fn default_r() -> usize {
    5
}
fn default_mu() -> f64 {
    5.0
}
fn default_kappa_n() -> f64 {
    0.1
}
fn default_kappa_t() -> f64 {
    0.03
}
fn default_theta() -> f64 {
    1.0
}

/// One simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub dgp: Dgp,
    pub n: usize,
    pub t: usize,
    #[serde(default = "default_r")]
    pub r: usize,
    /// Standard deviation of outliers.
    #[serde(default)]
    pub omega: f64,
    /// Mean of outliers.
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Fraction of contaminated units.
    #[serde(default = "default_kappa_n")]
    pub kappa_n: f64,
    /// Fraction of contaminated periods.
    #[serde(default = "default_kappa_t")]
    pub kappa_t: f64,
    /// Multiplier on the smallest singular value under `Dgp2`.
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub outliers_on: bool,
    #[serde(default)]
    pub layout: OutlierLayout,
    #[serde(default)]
    pub seed: u64,
}

impl DgpConfig {
    pub fn dgp1(n: usize, t: usize) -> Self {
        Self {
            dgp: Dgp::Dgp1,
            n,
            t,
            r: 5,
            omega: 0.0,
            mu: 5.0,
            kappa_n: 0.1,
            kappa_t: 0.03,
            theta: 1.0,
            outliers_on: false,
            layout: OutlierLayout::Grid,
            seed: 0,
        }
    }

    pub fn dgp2(n: usize, t: usize, theta: f64) -> Self {
        Self { dgp: Dgp::Dgp2, theta, ..Self::dgp1(n, t) }
    }

    /// Same design with outliers of standard deviation `omega`.
    pub fn with_outliers(mut self, omega: f64) -> Self {
        self.omega = omega;
        self.outliers_on = true;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn contaminated_units(&self) -> usize {
        // Guard against 0.03 * 100 = 3.0000000000000004 rounding up.
        (self.kappa_n * self.n as f64 - 1e-9).ceil().max(0.0) as usize
    }

    fn contaminated_periods(&self) -> usize {
        (self.kappa_t * self.t as f64 - 1e-9).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FactorError::Argument(msg));
        if self.n < 2 || self.t < 2 {
            return bad(format!("N and T must be at least 2, got N={} T={}", self.n, self.t));
        }
        if self.r == 0 || self.r >= self.n.min(self.t) {
            return bad(format!("r = {} must lie in 1..min(N, T)", self.r));
        }
        if self.dgp == Dgp::Dgp2 && self.r != DGP2_BASE.len() {
            return bad(format!("dgp2 has {} factors, got r = {}", DGP2_BASE.len(), self.r));
        }
        for (name, v) in [("kappa_n", self.kappa_n), ("kappa_t", self.kappa_t)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return bad(format!("omega must be finite and nonnegative, got {}", self.omega));
        }
        if !self.mu.is_finite() || !(self.theta >= 0.0) {
            return bad("mu must be finite and theta nonnegative".into());
        }
        if self.outliers_on && (self.contaminated_units() == 0 || self.contaminated_periods() == 0) {
            return bad(format!(
                "outliers are on but kappa_n * N = {} and kappa_t * T = {} leave nothing to contaminate",
                self.kappa_n * self.n as f64,
                self.kappa_t * self.t as f64
            ));
        }
        Ok(())
    }
}

/// Components of a simulated panel, all in data units.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub f0: DMatrix<f64>,
    pub lambda0: DMatrix<f64>,
    /// `f0 lambda0'`.
    pub c0: DMatrix<f64>,
    /// Sparse outliers.
    pub s: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

impl SimTruth {
    /// `c0 + e + s`.
    pub fn x(&self) -> DMatrix<f64> {
        &self.c0 + &self.e + &self.s
    }
}

/// Draw a panel from `config`, seeded by `config.seed`.
pub fn generate(config: &DgpConfig) -> Result<(Panel, SimTruth)> {
    generate_with_rng(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

/// Draw a panel from `config` using the caller's generator.
pub fn generate_with_rng(config: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<(Panel, SimTruth)> {
    config.validate()?;
    let (t, n, r) = (config.t, config.n, config.r);
    let (f0, lambda0) = match config.dgp {
        Dgp::Dgp1 => (gaussian_matrix(rng, t, r), gaussian_matrix(rng, n, r)),
        Dgp::Dgp2 => {
            let u = orthonormal_basis(&gaussian_matrix(rng, t, r));
            let v = orthonormal_basis(&gaussian_matrix(rng, n, r));
            let mut root = DVector::from_column_slice(&DGP2_BASE);
            root[r - 1] *= config.theta;
            let root = root.map(f64::sqrt);
            let scale_cols = |m: DMatrix<f64>, w: f64| {
                let mut m = m * w;
                for (j, &s) in root.iter().enumerate() {
                    m.column_mut(j).scale_mut(s);
                }
                m
            };
            (scale_cols(u, (t as f64).sqrt()), scale_cols(v, (n as f64).sqrt()))
        }
    };
    let c0 = &f0 * lambda0.transpose();
    let e = gaussian_matrix(rng, t, n);
    let mut s = DMatrix::zeros(t, n);
    if config.outliers_on {
        let dist = Normal::new(config.mu, config.omega)
            .map_err(|err| FactorError::Argument(format!("outlier distribution: {err}")))?;
        let units = sample(rng, n, config.contaminated_units()).into_vec();
        let periods = config.contaminated_periods();
        let grid = sample(rng, t, periods).into_vec();
        for &i in &units {
            let rows = match config.layout {
                OutlierLayout::Grid => grid.clone(),
                OutlierLayout::PerUnit => sample(rng, t, periods).into_vec(),
            };
            for tt in rows {
                s[(tt, i)] = dist.sample(rng);
            }
        }
    }
    let truth = SimTruth { f0, lambda0, c0, s, e };
    let panel = Panel::from_matrix(truth.x())?;
    Ok((panel, truth))
}

/// Diagnostics of one simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    /// `var(C0) / var(X)`.
    pub c_r_total: f64,
    /// Variance of the smallest singular component of `C0` over `var(X)`.
    pub c_r_smallest: f64,
    /// The same variance over `var(C0)`.
    pub c_r_share: f64,
    /// `var(S) / var(X)`.
    pub c_s: f64,
    pub r_star: usize,
    pub r_hat: usize,
    pub r_bar: usize,
    /// Spanning R-squared of the `r_hat`-th principal component; absent when
    /// `r_hat = 0`.
    pub r2_hat: Option<f64>,
    /// Spanning R-squared of the `r_bar`-th regularized factor; absent when
    /// `r_bar = 0`.
    pub r2_bar: Option<f64>,
}

/// Singular values and left singular vectors of `f0 lambda0'` without
/// forming a `T x N` decomposition.
fn truth_svd(truth: &SimTruth) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let qr = truth.f0.clone().qr();
    let (q, rf) = (qr.q(), qr.r());
    let (a, d, b) = sorted_svd(&(rf * truth.lambda0.transpose()));
    (q * a, d, b)
}

/// Number of singular values of the common component whose squared share
/// exceeds `share`.
pub fn min_rank(d: &DVector<f64>, share: f64) -> usize {
    let total: f64 = d.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return 0;
    }
    d.iter().filter(|&&x| x * x / total > share).count()
}

/// R-squared from regressing `y` on a constant and the columns of `basis`.
pub fn spanning_r2(y: &DVector<f64>, basis: &DMatrix<f64>) -> f64 {
    let t = y.len();
    let mut design = DMatrix::from_element(t, basis.ncols() + 1, 1.0);
    design.columns_mut(1, basis.ncols()).copy_from(basis);
    let q = orthonormal_basis(&design);
    let fitted = &q * (q.transpose() * y);
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst == 0.0 {
        return 1.0;
    }
    let ssr: f64 = (y - fitted).norm_squared();
    (1.0 - ssr / sst).clamp(0.0, 1.0)
}

/// Select factors on the standardized panel and score the estimated factor
/// space against the truth.
pub fn evaluate(panel: &Panel, truth: &SimTruth, gamma: f64, rmax: usize) -> Result<SimMetrics> {
    let (data, _) = standardize_and_scale(panel)?;
    let (t, n) = (data.t(), data.n());
    if rmax > t.min(n) {
        return Err(FactorError::Argument(format!("rmax = {rmax} exceeds min(T, N) = {}", t.min(n))));
    }
    let svd = data.z().clone().svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let d: Vec<f64> = order.iter().map(|&j| svd.singular_values[j]).collect();
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let selection = select_from_singular_values(&d, n, t, rmax, gamma)?;

    let (c_u, c_d, c_v) = truth_svd(truth);
    let r_star = min_rank(&c_d, RSTAR_SHARE);
    let basis = c_u.columns(0, r_star.max(1)).into_owned();
    // The regularized factors share singular vectors with the principal
    // components, so both R-squared values come from columns of `u`.
    let r2_of = |k: usize| (k > 0).then(|| spanning_r2(&u.column(order[k - 1]).into_owned(), &basis));

    let x = truth.x();
    let var_x = entry_variance(&x);
    let r = c_d.len();
    let smallest = c_u.column(r - 1) * c_v.column(r - 1).transpose() * c_d[r - 1];
    let var_c = entry_variance(&truth.c0);
    let var_smallest = entry_variance(&smallest);
    Ok(SimMetrics {
        c_r_total: var_c / var_x,
        c_r_smallest: var_smallest / var_x,
        c_r_share: if var_c > 0.0 { var_smallest / var_c } else { 0.0 },
        c_s: entry_variance(&truth.s) / var_x,
        r_star,
        r_hat: selection.r_hat,
        r_bar: selection.r_bar,
        r2_hat: r2_of(selection.r_hat),
        r2_bar: r2_of(selection.r_bar),
    })
}

/// How replications are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon worker pool, optionally capped at the given number of threads.
    /// Runs sequentially when the `parallel` feature is off.
    #[default]
    Parallel,
    ParallelWith(usize),
}

/// Replication settings shared by every cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub reps: usize,
    pub gamma: f64,
    pub rmax: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { reps: 200, gamma: crate::selection::DEFAULT_GAMMA, rmax: 8, seed: 0, execution: Execution::default() }
    }
}

/// Averages over the replications of one design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub config: DgpConfig,
    pub reps: usize,
    pub mean_r_star: f64,
    pub c_r_total: f64,
    pub c_r_smallest: f64,
    pub c_r_share: f64,
    pub c_s: f64,
    pub mean_r_hat: f64,
    pub mean_r_bar: f64,
    pub prob_hat_eq_r: f64,
    pub prob_bar_eq_r: f64,
    pub prob_hat_eq_rstar: f64,
    pub prob_bar_eq_rstar: f64,
    /// Mean over replications where the R-squared is defined.
    pub r2_hat: Option<f64>,
    pub r2_bar: Option<f64>,
    /// Replications with `r_bar > r_hat`; zero by construction.
    pub order_violations: usize,
}

/// Generator for replication `rep` of grid cell `cell`.
///
/// Each pair gets its own ChaCha stream of the base seed, so results do not
/// depend on scheduling.
pub fn replication_rng(seed: u64, cell: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 32) | rep as u64);
    rng
}

fn run_one(config: &DgpConfig, opts: &SweepOptions, cell: usize, rep: usize) -> Result<SimMetrics> {
    let (panel, truth) = generate_with_rng(config, &mut replication_rng(opts.seed, cell, rep))?;
    evaluate(&panel, &truth, opts.gamma, opts.rmax)
}

fn aggregate(config: &DgpConfig, metrics: &[SimMetrics]) -> SweepRow {
    let reps = metrics.len() as f64;
    let mean = |f: &dyn Fn(&SimMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / reps;
    let freq = |f: &dyn Fn(&SimMetrics) -> bool| metrics.iter().filter(|m| f(m)).count() as f64 / reps;
    let defined_mean = |f: &dyn Fn(&SimMetrics) -> Option<f64>| {
        let vals: Vec<f64> = metrics.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let r = config.r;
    SweepRow {
        config: config.clone(),
        reps: metrics.len(),
        mean_r_star: mean(&|m| m.r_star as f64),
        c_r_total: mean(&|m| m.c_r_total),
        c_r_smallest: mean(&|m| m.c_r_smallest),
        c_r_share: mean(&|m| m.c_r_share),
        c_s: mean(&|m| m.c_s),
        mean_r_hat: mean(&|m| m.r_hat as f64),
        mean_r_bar: mean(&|m| m.r_bar as f64),
        prob_hat_eq_r: freq(&|m| m.r_hat == r),
        prob_bar_eq_r: freq(&|m| m.r_bar == r),
        prob_hat_eq_rstar: freq(&|m| m.r_hat == m.r_star),
        prob_bar_eq_rstar: freq(&|m| m.r_bar == m.r_star),
        r2_hat: defined_mean(&|m| m.r2_hat),
        r2_bar: defined_mean(&|m| m.r2_bar),
        order_violations: metrics.iter().filter(|m| m.r_bar > m.r_hat).count(),
    }
}

/// Per-replication metrics for every cell, in grid order.
pub fn sweep_metrics(grid: &[DgpConfig], opts: &SweepOptions) -> Result<Vec<Vec<SimMetrics>>> {
    if opts.reps == 0 {
        return Err(FactorError::Argument("reps must be at least 1".into()));
    }
    for config in grid {
        config.validate()?;
        if opts.rmax > config.n.min(config.t) {
            return Err(FactorError::Argument(format!(
                "rmax = {} exceeds min(N, T) = {}",
                opts.rmax,
                config.n.min(config.t)
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..opts.reps).map(move |r| (c, r))).collect();
    let run = |&(c, r): &(usize, usize)| run_one(&grid[c], opts, c, r);
    let flat: Vec<Result<SimMetrics>> = match opts.execution {
        Execution::Sequential => jobs.iter().map(run).collect(),
        Execution::Parallel => parallel_map(&jobs, run, None)?,
        Execution::ParallelWith(threads) => parallel_map(&jobs, run, Some(threads))?,
    };
    let mut flat = flat.into_iter();
    let mut out = Vec::with_capacity(grid.len());
    for _ in grid {
        out.push((&mut flat).take(opts.reps).collect::<Result<Vec<_>>>()?);
    }
    Ok(out)
}

#[cfg(feature = "parallel")]
fn parallel_map<F>(jobs: &[(usize, usize)], run: F, threads: Option<usize>) -> Result<Vec<Result<SimMetrics>>>
where
    F: Fn(&(usize, usize)) -> Result<SimMetrics> + Sync,
{
    use rayon::prelude::*;
    let collect = || jobs.par_iter().map(&run).collect::<Vec<_>>();
    match threads {
        None => Ok(collect()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|err| FactorError::Argument(format!("thread pool: {err}")))?;
            Ok(pool.install(collect))
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<F>(jobs: &[(usize, usize)], run: F, _threads: Option<usize>) -> Result<Vec<Result<SimMetrics>>>
where
    F: Fn(&(usize, usize)) -> Result<SimMetrics>,
{
    Ok(jobs.iter().map(run).collect())
}

/// Run `opts.reps` replications of every design and average them.
pub fn sweep(grid: &[DgpConfig], opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    let metrics = sweep_metrics(grid, opts)?;
    Ok(grid.iter().zip(&metrics).map(|(c, m)| aggregate(c, m)).collect())
}

/// A grid file: designs plus optional replication settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub reps: Option<usize>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub rmax: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub configs: Vec<DgpConfig>,
}

impl SweepGrid {
    /// Read a JSON grid, or a CSV with one design per row and `DgpConfig`
    /// field names as headers.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            let mut reader = csv::Reader::from_path(path)?;
            let configs = reader.deserialize().collect::<std::result::Result<Vec<DgpConfig>, _>>()?;
            Ok(Self { reps: None, gamma: None, rmax: None, seed: None, configs })
        } else {
            Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
        }
    }
}

/// Column order of [`write_sweep_csv`].
pub const SWEEP_COLUMNS: [&str; 23] = [
    "dgp",
    "N",
    "T",
    "r_star",
    "omega",
    "theta",
    "outliers",
    "layout",
    "C_r_total",
    "C_r_smallest",
    "C_r_share",
    "c_S",
    "mean_r_hat",
    "mean_r_bar",
    "prob_r_hat_eq_r",
    "prob_r_bar_eq_r",
    "prob_r_hat_eq_r_star",
    "prob_r_bar_eq_r_star",
    "R2_hat",
    "R2_bar",
    "reps",
    "r",
    "order_violations",
];

/// Table-shaped CSV with six decimals, so equal inputs give equal bytes.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    let f = |x: f64| format!("{x:.6}");
    let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
    for row in rows {
        let c = &row.config;
        w.write_record([
            match c.dgp {
                Dgp::Dgp1 => "dgp1".to_string(),
                Dgp::Dgp2 => "dgp2".to_string(),
            },
            c.n.to_string(),
            c.t.to_string(),
            f(row.mean_r_star),
            f(c.omega),
            f(c.theta),
            c.outliers_on.to_string(),
            match c.layout {
                OutlierLayout::Grid => "grid".to_string(),
                OutlierLayout::PerUnit => "per_unit".to_string(),
            },
            f(row.c_r_total),
            f(row.c_r_smallest),
            f(row.c_r_share),
            f(row.c_s),
            f(row.mean_r_hat),
            f(row.mean_r_bar),
            f(row.prob_hat_eq_r),
            f(row.prob_bar_eq_r),
            f(row.prob_hat_eq_rstar),
            f(row.prob_bar_eq_rstar),
            opt(row.r2_hat),
            opt(row.r2_bar),
            row.reps.to_string(),
            c.r.to_string(),
            row.order_violations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
