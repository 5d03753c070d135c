//! One function per subcommand.

use std::path::Path;

use factorkit::constraints::{constrained_fit, ConstrainedOptions};
use factorkit::estimators::{algorithm_rpc, apc, pc, rpc_closed_form, rpc_general, IterationOptions};
use factorkit::imputation::{em_impute, select_k_balanced};
use factorkit::inference::regress as regress_on_factors;
use factorkit::montecarlo::{sweep, write_sweep_csv, Execution, SweepGrid, SweepOptions};
use factorkit::panel::{
    apply_transforms, ingest_csv_with_codes, read_transform_codes, scale, standardize, CsvOptions,
};
use factorkit::selection::{ic_gap_decomposition, select_from_singular_values, singular_values, DEFAULT_GAMMA};
use factorkit::{EmOptions, FactorError, FactorFit, Panel, RestrictionSet, ScaledData, StandardizationInfo};
use factorkit::VarianceConvention;
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::output::{ensure_dir, summary, warn, write_json, Table};
use crate::{
    CliError, ConstrainArgs, EstimateArgs, FitArgs, ImputeArgs, MethodArg, Outcome, PanelArgs, RegressArgs,
    SelectArgs, SimulateArgs, VarianceArg,
};

/// Singular values below this count as numerically zero in summaries.
const NEAR_ZERO: f64 = 1e-8;

const THREADS_VAR: &str = "FACTORKIT_THREADS";

fn load_panel(args: &PanelArgs) -> Result<Panel, CliError> {
    let opts = CsvOptions { codes_row: args.codes_row, ..CsvOptions::default() };
    let (panel, row_codes) = ingest_csv_with_codes(&args.input, &opts)?;
    let codes = match (&args.transform_codes, row_codes) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("give transformation codes either in a codes row or in a file, not both".into()))
        }
        (Some(path), None) => Some(read_transform_codes(path, panel.series_names())?),
        (None, codes) => codes,
    };
    match codes {
        Some(codes) => Ok(apply_transforms(&panel, &codes)?),
        None => Ok(panel),
    }
}

fn convention(arg: VarianceArg) -> VarianceConvention {
    match arg {
        VarianceArg::Population => VarianceConvention::Population,
        VarianceArg::Sample => VarianceConvention::Sample,
    }
}

fn prepare(panel: &Panel, variance: VarianceArg) -> Result<(ScaledData, StandardizationInfo), CliError> {
    if !panel.is_complete() {
        return Err(FactorError::Validation(format!(
            "panel has {} missing cell(s); run `factorkit impute` first",
            panel.missing_count()
        ))
        .into());
    }
    let (std_panel, info) = standardize(panel, convention(variance))?;
    Ok((scale(&std_panel)?, info))
}

fn factor_columns(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("factor_{j}")).collect()
}

fn check_nonnegative(name: &str, value: Option<f64>) -> Result<(), CliError> {
    match value {
        Some(v) if !(v >= 0.0 && v.is_finite()) => {
            Err(FactorError::Argument(format!("{name} must be a nonnegative number, got {v}")).into())
        }
        _ => Ok(()),
    }
}

/// Estimate with the requested method, filling method details into `report`.
fn fit_panel(data: &ScaledData, args: &FitArgs, seed: u64, report: &mut Value) -> Result<FactorFit, CliError> {
    check_nonnegative("--gamma", args.gamma)?;
    check_nonnegative("--gamma1", args.gamma1)?;
    check_nonnegative("--gamma2", args.gamma2)?;
    let split = match (args.gamma1, args.gamma2) {
        (Some(g1), Some(g2)) => Some((g1, g2)),
        (None, None) => None,
        _ => return Err(CliError::Usage("--gamma1 and --gamma2 must be given together".into())),
    };
    let method_name = match args.method {
        MethodArg::Apc => "apc",
        MethodArg::Pc => "pc",
        MethodArg::Rpc => "rpc",
    };
    if args.method != MethodArg::Rpc {
        if args.gamma.is_some() || split.is_some() {
            warn(report, format!("gamma is ignored by method {method_name}"));
        }
        if args.iterative {
            warn(report, format!("--iterative is ignored by method {method_name}"));
        }
    } else if split.is_some() && (args.gamma.is_some() || args.iterative) {
        return Err(CliError::Usage("--gamma1/--gamma2 cannot be combined with --gamma or --iterative".into()));
    }
    let gamma = args.gamma.unwrap_or(DEFAULT_GAMMA);

    let r = match args.r {
        Some(r) => {
            report["r_selected_by"] = json!("user");
            r
        }
        None => {
            let d = singular_values(data.z());
            let rmax = args.rmax.min(d.len());
            let crit_gamma = if args.method == MethodArg::Rpc { split.map_or(gamma, |(a, b)| (a * b).sqrt()) } else { DEFAULT_GAMMA };
            let sel = select_from_singular_values(&d, data.n(), data.t(), rmax, crit_gamma)?;
            if sel.r_bar == 0 {
                return Err(FactorError::Validation(format!(
                    "the regularized criterion selects no factors (rmax = {rmax}); pass --r explicitly"
                ))
                .into());
            }
            report["r_selected_by"] = json!("criterion");
            sel.r_bar
        }
    };

    let fit = match (args.method, split) {
        (MethodArg::Apc, _) => apc(data, r)?,
        (MethodArg::Pc, _) => pc(data, r)?,
        (MethodArg::Rpc, Some((g1, g2))) => rpc_general(data, r, g1, g2)?,
        (MethodArg::Rpc, None) if args.iterative => {
            algorithm_rpc(data, r, gamma, &IterationOptions { seed, ..IterationOptions::default() })?
        }
        (MethodArg::Rpc, None) => rpc_closed_form(data, r, gamma)?,
    };
    Ok(fit)
}

/// Singular values, shrunk values and their variance shares.
fn describe_fit(fit: &FactorFit, data: &ScaledData, report: &mut Value) {
    let total = data.frobenius_sq();
    let d: Vec<f64> = fit.d.iter().copied().collect();
    let d_shrunk: Vec<f64> = fit.d_shrunk.iter().copied().collect();
    let eigen_table: Vec<Value> = d
        .iter()
        .zip(&d_shrunk)
        .enumerate()
        .map(|(j, (a, b))| {
            json!({
                "j": j + 1,
                "d_hat_sq": a * a,
                "d_bar_sq": b * b,
                "share_hat": a * a / total,
                "share_bar": b * b / total,
                "retained": *b > 0.0,
            })
        })
        .collect();
    let near_zero = d.iter().filter(|&&x| x < NEAR_ZERO).count();
    report["method"] = json!(fit.method.name());
    report["gamma"] = json!(fit.gamma());
    report["gamma1"] = json!(fit.gamma1);
    report["gamma2"] = json!(fit.gamma2);
    report["T"] = json!(fit.t);
    report["N"] = json!(fit.n);
    report["r"] = json!(fit.r());
    report["r_star"] = json!(fit.effective_rank);
    report["d"] = json!(d);
    report["d_shrunk"] = json!(d_shrunk);
    report["variance_shares"] = json!(d.iter().map(|x| x * x / total).collect::<Vec<_>>());
    report["eigen_table"] = json!(eigen_table);
    report["near_zero_singular_values"] = json!(near_zero);
    report["effective_content"] = json!(d.len() - near_zero);
    report["converged"] = json!(fit.converged);
    report["iterations"] = json!(fit.iterations);
    report["degenerate"] = json!(fit.degenerate);
}

fn write_fit(fit: &FactorFit, names: &[String], dir: &Path, format: crate::Format) -> Result<(), CliError> {
    let kept = fit.retained();
    let columns = factor_columns(kept.r());
    Table::new(columns.clone(), kept.factors()).write(dir, "factors", format)?;
    Table::new(columns, kept.loadings()).with_labels("series", names.to_vec()).write(dir, "loadings", format)?;
    Ok(())
}

fn outcome(converged: bool, report: &mut Value) -> Outcome {
    if converged {
        Outcome::Done
    } else {
        warn(report, "iteration limit reached before convergence".into());
        Outcome::NotConverged
    }
}

pub fn estimate(args: &EstimateArgs) -> Result<Outcome, CliError> {
    let panel = load_panel(&args.panel)?;
    let (data, info) = prepare(&panel, args.panel.variance)?;
    let mut report = summary("estimate");
    let fit = fit_panel(&data, &args.fit, args.out.seed, &mut report)?;
    describe_fit(&fit, &data, &mut report);
    report["standardization"] = json!(info);
    report["series"] = json!(panel.series_names());
    report["seed"] = json!(args.out.seed);
    let result = outcome(fit.converged, &mut report);

    ensure_dir(&args.out.output)?;
    write_fit(&fit, panel.series_names(), &args.out.output, args.out.format)?;
    write_json(&args.out.output.join("summary.json"), &report)?;
    println!("{} factors retained by {}", fit.effective_rank, fit.method.name());
    Ok(result)
}

pub fn select(args: &SelectArgs) -> Result<Outcome, CliError> {
    check_nonnegative("--gamma", Some(args.gamma))?;
    let panel = load_panel(&args.panel)?;
    let (data, info) = prepare(&panel, args.panel.variance)?;
    let d = singular_values(data.z());
    if args.rmax > d.len() {
        return Err(FactorError::Argument(format!("rmax = {} exceeds min(T, N) = {}", args.rmax, d.len())).into());
    }
    let result = select_from_singular_values(&d, data.n(), data.t(), args.rmax, args.gamma)?;
    let gap = ic_gap_decomposition(&result, &DVector::from_vec(d.clone()));

    let rows = args.rmax + 1;
    let table = DMatrix::from_fn(rows, 7, |k, c| match c {
        0 => k as f64,
        1 => result.ssr_plain[k],
        2 => result.ssr_thresh[k],
        3 => result.ic_plain[k],
        4 => result.ic_thresh[k],
        5 => gap.exact[k],
        _ => gap.approx[k],
    });
    let columns = ["k", "ssr_plain", "ssr_thresh", "ic_plain", "ic_thresh", "gap_exact", "gap_approx"];

    let mut report = summary("select");
    report["r_hat"] = json!(result.r_hat);
    report["r_bar"] = json!(result.r_bar);
    report["rmax"] = json!(result.rmax);
    report["gamma"] = json!(result.gamma);
    report["penalty"] = json!(result.penalty);
    report["ssr_floored"] = json!(result.ssr_floored);
    report["T"] = json!(data.t());
    report["N"] = json!(data.n());
    report["singular_values"] = json!(d);
    report["table"] = json!(result);
    report["gap"] = json!(gap);
    report["standardization"] = json!(info);
    if result.ssr_floored {
        warn(&mut report, "a residual sum of squares reached zero and was floored before the log".into());
    }

    ensure_dir(&args.out.output)?;
    Table::new(columns.iter().map(|s| s.to_string()).collect(), table).write(&args.out.output, "selection", args.out.format)?;
    write_json(&args.out.output.join("summary.json"), &report)?;
    println!("r_hat={} r_bar={}", result.r_hat, result.r_bar);
    Ok(Outcome::Done)
}

pub fn constrain(args: &ConstrainArgs) -> Result<Outcome, CliError> {
    check_nonnegative("--gamma", Some(args.gamma))?;
    let panel = load_panel(&args.panel)?;
    let restrictions = RestrictionSet::load(&args.restrictions, panel.n())?;
    if let Some(r) = args.r {
        if r != restrictions.r() {
            return Err(FactorError::Argument(format!(
                "--r {r} disagrees with r = {} in the restriction file",
                restrictions.r()
            ))
            .into());
        }
    }
    let (data, info) = prepare(&panel, args.panel.variance)?;
    let opts = ConstrainedOptions { tol: args.tol, max_iter: args.max_iter };
    let cfit = constrained_fit(&data, restrictions.r(), args.gamma, &restrictions, &opts)?;

    let mut report = summary("constrain");
    describe_fit(&cfit.fit, &data, &mut report);
    report["restrictions"] = json!(restrictions.m());
    report["constraint_residual"] = json!(cfit.constraint_residual);
    report["standardization"] = json!(info);
    report["series"] = json!(panel.series_names());
    let result = outcome(cfit.fit.converged, &mut report);

    ensure_dir(&args.out.output)?;
    write_fit(&cfit.fit, panel.series_names(), &args.out.output, args.out.format)?;
    write_json(&args.out.output.join("summary.json"), &report)?;
    println!(
        "{} restriction(s), residual {:e}, {} sweep(s)",
        restrictions.m(),
        cfit.constraint_residual,
        cfit.fit.iterations
    );
    Ok(result)
}

pub fn impute(args: &ImputeArgs) -> Result<Outcome, CliError> {
    let panel = load_panel(&args.panel)?;
    let mut report = summary("impute");
    if args.panel.variance == VarianceArg::Sample {
        warn(&mut report, "imputation standardizes with the population convention; --variance is ignored".into());
    }
    let (k, chosen_by) = match args.k {
        Some(k) => (k, "user"),
        None => (select_k_balanced(&panel, args.rmax)?, "criterion"),
    };
    let opts = EmOptions { tol: args.tol, max_iter: args.max_iter };
    let result = em_impute(&panel, k, &opts)?;

    let body = json!(result.summary(panel.missing_count()));
    for (key, value) in body.as_object().into_iter().flatten() {
        report[key] = value.clone();
    }
    report["k_selected_by"] = json!(chosen_by);
    report["tol"] = json!(args.tol);
    report["max_iter"] = json!(args.max_iter);
    report["T"] = json!(panel.t());
    report["N"] = json!(panel.n());
    let status = outcome(result.converged, &mut report);

    ensure_dir(&args.out.output)?;
    let names = result.completed.series_names().to_vec();
    Table::new(names, result.completed.values().clone()).write(&args.out.output, "imputed", args.out.format)?;
    write_json(&args.out.output.join("summary.json"), &report)?;
    println!("imputed {} cell(s) with k = {k} in {} iteration(s)", panel.missing_count(), result.iterations);
    Ok(status)
}

fn execution_from_env() -> Result<Execution, CliError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(Execution::Parallel),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(FactorError::Argument(format!(
                "{THREADS_VAR} must be a positive integer, got '{raw}'"
            ))
            .into()),
            Ok(1) => Ok(Execution::Sequential),
            Ok(n) => Ok(Execution::ParallelWith(n)),
        },
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<Outcome, CliError> {
    let execution = execution_from_env()?;
    let grid = SweepGrid::load(&args.input)?;
    let defaults = SweepOptions::default();
    let opts = SweepOptions {
        reps: args.reps.or(grid.reps).unwrap_or(defaults.reps),
        gamma: args.gamma.or(grid.gamma).unwrap_or(defaults.gamma),
        rmax: args.rmax.or(grid.rmax).unwrap_or(defaults.rmax),
        seed: args.out.seed.or(grid.seed).unwrap_or(defaults.seed),
        execution,
    };
    check_nonnegative("--gamma", Some(opts.gamma))?;
    if opts.reps == 0 {
        return Err(FactorError::Argument("reps must be at least 1".into()).into());
    }
    for cfg in &grid.configs {
        cfg.validate()?;
    }
    let rows = sweep(&grid.configs, &opts)?;

    let mut report = summary("simulate");
    report["designs"] = json!(rows.len());
    report["reps"] = json!(opts.reps);
    report["gamma"] = json!(opts.gamma);
    report["rmax"] = json!(opts.rmax);
    report["seed"] = json!(opts.seed);

    let dir = &args.out.output;
    ensure_dir(dir)?;
    match args.out.format {
        crate::Format::Csv => {
            let file = std::io::BufWriter::new(std::fs::File::create(dir.join("sweep.csv"))?);
            write_sweep_csv(&rows, file)?;
        }
        crate::Format::Json => write_json(&dir.join("sweep.json"), &json!(rows))?,
    }
    write_json(&dir.join("summary.json"), &report)?;
    println!("{} design(s), {} replication(s) each", rows.len(), opts.reps);
    Ok(Outcome::Done)
}

pub fn regress(args: &RegressArgs) -> Result<Outcome, CliError> {
    check_nonnegative("--kappa", Some(args.kappa))?;
    let panel = load_panel(&args.panel)?;
    let target = panel
        .series_names()
        .iter()
        .position(|n| *n == args.target)
        .ok_or_else(|| FactorError::Argument(format!("target series '{}' not in the panel", args.target)))?;
    if panel.n() < 2 {
        return Err(FactorError::Validation("regression needs at least one series besides the target".into()).into());
    }
    let keep: Vec<usize> = (0..panel.n()).filter(|&j| j != target).collect();
    let pick = |m: &DMatrix<f64>| DMatrix::from_fn(panel.t(), keep.len(), |i, c| m[(i, keep[c])]);
    let pick_mask = DMatrix::from_fn(panel.t(), keep.len(), |i, c| panel.mask()[(i, keep[c])]);
    let names: Vec<String> = keep.iter().map(|&j| panel.series_names()[j].clone()).collect();
    let predictors = Panel::new(pick(panel.values()), pick_mask, names)?;
    if panel.mask().column(target).iter().any(|&m| !m) {
        return Err(FactorError::Validation(format!("target series '{}' has missing cells", args.target)).into());
    }

    let (data, info) = prepare(&predictors, args.panel.variance)?;
    let mut report = summary("regress");
    let fit = fit_panel(&data, &args.fit, args.out.seed, &mut report)?;
    describe_fit(&fit, &data, &mut report);

    let y: DVector<f64> = panel.values().column(target).into_owned();
    let intercept = y.mean();
    let centred = y.add_scalar(-intercept);
    let reg = regress_on_factors(&centred, &fit, args.kappa)?;

    report["target"] = json!(args.target);
    report["intercept"] = json!(intercept);
    report["ols"] = json!(reg.ols);
    report["ridge"] = json!(reg.ridge);
    report["kappa"] = json!(reg.kappa);
    report["standardization"] = json!(info);
    let result = outcome(fit.converged, &mut report);

    ensure_dir(&args.out.output)?;
    let residuals = DMatrix::from_column_slice(reg.residuals.len(), 1, &reg.residuals);
    Table::new(vec!["residual".into()], residuals).write(&args.out.output, "residuals", args.out.format)?;
    write_json(&args.out.output.join("summary.json"), &report)?;
    println!("regressed '{}' on {} factor(s)", args.target, reg.ols.len());
    Ok(result)
}
