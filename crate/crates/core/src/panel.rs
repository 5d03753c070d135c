//! Panel ingest, transformation, standardization and scaling.
//!
//! A [`Panel`] is a `T x N` matrix (rows are periods, columns are series)
//! with an observation mask. Estimators never read masked-out cells; they
//! only accept a complete panel turned into [`ScaledData`].

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{FactorError, Result};

/// Raw observations with a missing-value mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    series_names: Vec<String>,
}

impl Panel {
    /// Build a panel, validating shape and the per-column observation floor.
    pub fn new(values: DMatrix<f64>, mask: DMatrix<bool>, series_names: Vec<String>) -> Result<Self> {
        let (t, n) = values.shape();
        if mask.shape() != (t, n) {
            return Err(FactorError::Validation(format!(
                "mask shape {:?} does not match values shape {:?}",
                mask.shape(),
                (t, n)
            )));
        }
        if series_names.len() != n {
            return Err(FactorError::Validation(format!(
                "{} series names for {} columns",
                series_names.len(),
                n
            )));
        }
        if t < 2 || n < 2 {
            return Err(FactorError::Validation(format!(
                "panel must have T >= 2 and N >= 2, got T={t}, N={n}"
            )));
        }
        for j in 0..n {
            let observed = mask.column(j).iter().filter(|&&m| m).count();
            if observed < 2 {
                return Err(FactorError::Validation(format!(
                    "column '{}' has {} observed value(s); at least 2 required",
                    series_names[j], observed
                )));
            }
            for i in 0..t {
                if mask[(i, j)] && !values[(i, j)].is_finite() {
                    return Err(FactorError::Validation(format!(
                        "column '{}' row {} is marked observed but is not finite",
                        series_names[j],
                        i + 1
                    )));
                }
            }
        }
        Ok(Self { values, mask, series_names })
    }

    /// Fully observed panel with generated names `x1..xN`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let (t, n) = values.shape();
        let names = (1..=n).map(|j| format!("x{j}")).collect();
        Self::new(values, DMatrix::from_element(t, n, true), names)
    }

    /// Number of periods.
    pub fn t(&self) -> usize {
        self.values.nrows()
    }

    /// Number of series.
    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `true` marks an observed cell.
    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    /// Whether every cell is observed.
    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Number of unobserved cells.
    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// Same panel with columns reordered; `order[k]` is the source column of
    /// output column `k`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&j| j >= n || std::mem::replace(&mut seen[j], true)) {
            return Err(FactorError::Argument("column order is not a permutation".into()));
        }
        let values = DMatrix::from_fn(self.t(), n, |i, k| self.values[(i, order[k])]);
        let mask = DMatrix::from_fn(self.t(), n, |i, k| self.mask[(i, order[k])]);
        let names = order.iter().map(|&j| self.series_names[j].clone()).collect();
        Panel::new(values, mask, names)
    }

    pub(crate) fn with_values(&self, values: DMatrix<f64>) -> Self {
        Self { values, mask: self.mask.clone(), series_names: self.series_names.clone() }
    }

    pub(crate) fn into_complete(self, values: DMatrix<f64>) -> Self {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self { values, mask, series_names: self.series_names }
    }
}

/// Settings for [`ingest_csv`].
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// First line carries series names.
    pub has_header: bool,
    /// Line after the header carries transformation codes (1..7).
    pub codes_row: bool,
    /// Tokens read as missing, compared case-insensitively after trimming.
    pub missing_tokens: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
            codes_row: false,
            missing_tokens: vec![String::new(), "NA".into(), "NaN".into()],
        }
    }
}

/// Read a panel from a CSV file.
pub fn ingest_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Panel> {
    let file = std::fs::File::open(path)?;
    Ok(ingest_reader(file, options)?.0)
}

/// Read a panel and, when `options.codes_row` is set, its transformation codes.
pub fn ingest_csv_with_codes(
    path: impl AsRef<Path>,
    options: &CsvOptions,
) -> Result<(Panel, Option<Vec<TransformCode>>)> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, options)
}

/// Parse CSV text from any reader.
pub fn ingest_reader<R: Read>(reader: R, options: &CsvOptions) -> Result<(Panel, Option<Vec<TransformCode>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let mut names: Option<Vec<String>> = None;
    if options.has_header {
        match records.next() {
            Some(rec) => names = Some(rec?.iter().map(|s| s.trim().to_string()).collect()),
            None => return Err(FactorError::Validation("empty CSV input".into())),
        }
    }
    let mut width = names.as_ref().map(Vec::len);

    let mut codes = None;
    if options.codes_row {
        let rec = records
            .next()
            .ok_or_else(|| FactorError::Validation("missing transformation-code row".into()))??;
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(FactorError::RaggedRow { row: 0, expected: w, found: rec.len() });
        }
        let parsed = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.trim()
                    .parse::<u8>()
                    .map_err(|_| FactorError::Parse {
                        row: 0,
                        col: c + 1,
                        message: format!("transformation code '{s}' is not an integer"),
                    })
                    .and_then(|v| {
                        TransformCode::from_code(v).ok_or_else(|| FactorError::Parse {
                            row: 0,
                            col: c + 1,
                            message: format!("transformation code {v} outside 1..7"),
                        })
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        codes = Some(parsed);
    }

    let missing: Vec<String> = options.missing_tokens.iter().map(|s| s.trim().to_ascii_lowercase()).collect();
    let mut cells: Vec<f64> = Vec::new();
    let mut observed: Vec<bool> = Vec::new();
    let mut rows = 0usize;
    for rec in records {
        let rec = rec?;
        let row = rows + 1;
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(FactorError::RaggedRow { row, expected: w, found: rec.len() });
        }
        for (c, field) in rec.iter().enumerate() {
            let token = field.trim();
            if missing.iter().any(|m| m == &token.to_ascii_lowercase()) {
                cells.push(f64::NAN);
                observed.push(false);
                continue;
            }
            let v: f64 = token.parse().map_err(|_| FactorError::Parse {
                row,
                col: c + 1,
                message: format!("'{token}' is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(FactorError::Parse { row, col: c + 1, message: format!("'{token}' is not finite") });
            }
            cells.push(v);
            observed.push(true);
        }
        rows += 1;
    }
    let n = width.unwrap_or(0);
    let names = names.unwrap_or_else(|| (1..=n).map(|j| format!("x{j}")).collect());
    let values = DMatrix::from_row_slice(rows, n, &cells);
    let mask = DMatrix::from_row_slice(rows, n, &observed);
    Ok((Panel::new(values, mask, names)?, codes))
}

/// Read a sidecar CSV of `(series_name, code)` pairs and align it with `names`.
///
/// Series absent from the sidecar default to code 1 (levels).
pub fn read_transform_codes(path: impl AsRef<Path>, names: &[String]) -> Result<Vec<TransformCode>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut codes = vec![TransformCode::Level; names.len()];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(FactorError::RaggedRow { row: k + 1, expected: 2, found: rec.len() });
        }
        let name = rec[0].trim();
        let raw = rec[1].trim();
        let Ok(code) = raw.parse::<u8>() else {
            if k == 0 {
                // header line such as "series,code"
                continue;
            }
            return Err(FactorError::Parse { row: k + 1, col: 2, message: format!("'{raw}' is not a code") });
        };
        let code = TransformCode::from_code(code).ok_or_else(|| FactorError::Parse {
            row: k + 1,
            col: 2,
            message: format!("transformation code {code} outside 1..7"),
        })?;
        let j = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| FactorError::Validation(format!("unknown series '{name}' in transformation codes")))?;
        codes[j] = code;
    }
    Ok(codes)
}

/// Stationarity transformations in the usual macro-panel numbering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformCode {
    /// 1: no transformation.
    Level,
    /// 2: first difference.
    Diff,
    /// 3: second difference.
    Diff2,
    /// 4: log level.
    Log,
    /// 5: first difference of logs.
    DiffLog,
    /// 6: second difference of logs.
    Diff2Log,
    /// 7: first difference of the percent change `x_t / x_{t-1} - 1`.
    DiffPctChange,
}

impl TransformCode {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => Self::Level,
            2 => Self::Diff,
            3 => Self::Diff2,
            4 => Self::Log,
            5 => Self::DiffLog,
            6 => Self::Diff2Log,
            7 => Self::DiffPctChange,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Level => 1,
            Self::Diff => 2,
            Self::Diff2 => 3,
            Self::Log => 4,
            Self::DiffLog => 5,
            Self::Diff2Log => 6,
            Self::DiffPctChange => 7,
        }
    }

    /// Leading rows lost by the transformation.
    pub fn lag(self) -> usize {
        match self {
            Self::Level | Self::Log => 0,
            Self::Diff | Self::DiffLog => 1,
            Self::Diff2 | Self::Diff2Log | Self::DiffPctChange => 2,
        }
    }

    fn uses_log(self) -> bool {
        matches!(self, Self::Log | Self::DiffLog | Self::Diff2Log)
    }

    /// Value at row `t` (`t >= lag`), or `None` when an input cell is missing.
    fn apply_at(self, col: &[Option<f64>], t: usize) -> Option<f64> {
        let x = |k: usize| col[t - k];
        match self {
            Self::Level | Self::Log => x(0),
            Self::Diff | Self::DiffLog => Some(x(0)? - x(1)?),
            Self::Diff2 | Self::Diff2Log => Some(x(0)? - 2.0 * x(1)? + x(2)?),
            Self::DiffPctChange => Some((x(0)? / x(1)? - 1.0) - (x(1)? / x(2)? - 1.0)),
        }
    }
}

/// Apply one transformation code per series.
///
/// Leading rows are dropped for every column alike (the largest lag among the
/// codes) so the panel stays rectangular. A transformed cell is missing when
/// any input it depends on is missing.
pub fn apply_transforms(panel: &Panel, codes: &[TransformCode]) -> Result<Panel> {
    let (t, n) = (panel.t(), panel.n());
    if codes.len() != n {
        return Err(FactorError::Argument(format!("{} transformation codes for {} series", codes.len(), n)));
    }
    let drop = codes.iter().map(|c| c.lag()).max().unwrap_or(0);
    if t <= drop {
        return Err(FactorError::Validation(format!("{t} rows cannot absorb a lag of {drop}")));
    }
    let out_t = t - drop;
    let mut values = DMatrix::from_element(out_t, n, f64::NAN);
    let mut mask = DMatrix::from_element(out_t, n, false);
    for (j, &code) in codes.iter().enumerate() {
        let mut col: Vec<Option<f64>> = Vec::with_capacity(t);
        for i in 0..t {
            if !panel.mask[(i, j)] {
                col.push(None);
                continue;
            }
            let v = panel.values[(i, j)];
            if code.uses_log() {
                if v <= 0.0 {
                    return Err(FactorError::Domain {
                        row: i + 1,
                        col: j + 1,
                        message: format!("log of nonpositive value {v} in series '{}'", panel.series_names[j]),
                    });
                }
                col.push(Some(v.ln()));
            } else {
                col.push(Some(v));
            }
        }
        for i in drop..t {
            if let Some(v) = code.apply_at(&col, i) {
                if v.is_finite() {
                    values[(i - drop, j)] = v;
                    mask[(i - drop, j)] = true;
                }
            }
        }
    }
    Panel::new(values, mask, panel.series_names.clone())
}

/// Divisor used for column variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceConvention {
    /// Divide by the number of observations; gives `||Z||_F^2 = 1` exactly.
    #[default]
    Population,
    /// Divide by the number of observations minus one.
    Sample,
}

/// Column means and standard deviations removed by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationInfo {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub variance_convention: VarianceConvention,
}

impl StandardizationInfo {
    /// Map standardized values back to original units.
    pub fn destandardize(&self, standardized: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(standardized.ncols())?;
        Ok(DMatrix::from_fn(standardized.nrows(), standardized.ncols(), |i, j| {
            self.means[j] + self.sds[j] * standardized[(i, j)]
        }))
    }

    /// Map original values to standardized units.
    pub fn standardize_values(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(raw.ncols())?;
        Ok(DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| (raw[(i, j)] - self.means[j]) / self.sds[j]))
    }

    fn check_width(&self, n: usize) -> Result<()> {
        if n != self.means.len() {
            return Err(FactorError::Argument(format!(
                "standardization covers {} series, matrix has {n} columns",
                self.means.len()
            )));
        }
        Ok(())
    }
}

/// Standardize every column to mean 0 and unit variance over observed cells.
pub fn standardize(panel: &Panel, convention: VarianceConvention) -> Result<(Panel, StandardizationInfo)> {
    let (t, n) = (panel.t(), panel.n());
    let mut means = Vec::with_capacity(n);
    let mut sds = Vec::with_capacity(n);
    for j in 0..n {
        let obs: Vec<f64> = (0..t).filter(|&i| panel.mask[(i, j)]).map(|i| panel.values[(i, j)]).collect();
        let count = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / count;
        let ss: f64 = obs.iter().map(|v| (v - mean) * (v - mean)).sum();
        let divisor = match convention {
            VarianceConvention::Population => count,
            VarianceConvention::Sample => count - 1.0,
        };
        let sd = (ss / divisor).sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            return Err(FactorError::Validation(format!(
                "column '{}' has zero variance",
                panel.series_names[j]
            )));
        }
        means.push(mean);
        sds.push(sd);
    }
    let info = StandardizationInfo { means, sds, variance_convention: convention };
    let values = DMatrix::from_fn(t, n, |i, j| {
        if panel.mask[(i, j)] {
            (panel.values[(i, j)] - info.means[j]) / info.sds[j]
        } else {
            panel.values[(i, j)]
        }
    });
    Ok((panel.with_values(values), info))
}

/// The scaled matrix `Z = X / sqrt(NT)` of a complete panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledData {
    z: DMatrix<f64>,
    scale: f64,
    series_names: Vec<String>,
}

impl ScaledData {
    /// Scale a complete matrix without standardizing it.
    pub fn from_matrix(x: &DMatrix<f64>) -> Result<Self> {
        let (t, n) = x.shape();
        if t == 0 || n == 0 {
            return Err(FactorError::Argument("empty matrix".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FactorError::Precondition("matrix contains non-finite values".into()));
        }
        let scale = ((n * t) as f64).sqrt();
        Ok(Self { z: x / scale, scale, series_names: (1..=n).map(|j| format!("x{j}")).collect() })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn t(&self) -> usize {
        self.z.nrows()
    }

    pub fn n(&self) -> usize {
        self.z.ncols()
    }

    /// `sqrt(NT)`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    /// Data in original (unscaled) units, `X = sqrt(NT) Z`.
    pub fn x(&self) -> DMatrix<f64> {
        &self.z * self.scale
    }

    /// `||Z||_F^2`.
    pub fn frobenius_sq(&self) -> f64 {
        self.z.norm_squared()
    }
}

/// Divide a complete panel by `sqrt(NT)`.
pub fn scale(panel: &Panel) -> Result<ScaledData> {
    if !panel.is_complete() {
        return Err(FactorError::Precondition(format!(
            "panel has {} unobserved cell(s); impute before scaling",
            panel.missing_count()
        )));
    }
    let mut scaled = ScaledData::from_matrix(&panel.values)?;
    scaled.series_names = panel.series_names.clone();
    Ok(scaled)
}

/// Population-standardize and scale in one step.
pub fn standardize_and_scale(panel: &Panel) -> Result<(ScaledData, StandardizationInfo)> {
    let (std_panel, info) = standardize(panel, VarianceConvention::Population)?;
    Ok((scale(&std_panel)?, info))
}
