//! Estimation of large approximate factor models.
//!
//! The crate covers the whole pipeline from a raw `T x N` panel to factor
//! estimates and diagnostics:
//!
//! * [`panel`]: CSV ingest, transformation codes, standardization and the
//!   scaled matrix `Z = X / sqrt(NT)`.
//! * [`svdcore`]: seeded randomized partial SVD and singular-value
//!   soft-thresholding.
//! * [`estimators`]: asymptotic principal components (APC), principal
//!   components (PC), robust principal components (RPC) in closed form and by
//!   iterated ridge regressions, and the two-penalty generalization.
//! * [`selection`]: the `IC2` criterion and its rank-regularized counterpart.
//! * [`constraints`]: linear restrictions `R vec(Lambda) = phi` on loadings.
//! * [`inference`]: rotation matrices, asymptotic variances, confidence
//!   intervals for the common component and factor-augmented ridge regression.
//! * [`imputation`]: EM imputation of missing panel cells.
//! * [`montecarlo`]: simulation designs, replication metrics and sweeps.
//!
//! All estimators work on [`panel::ScaledData`]. A [`estimators::FactorFit`]
//! stores factors and loadings in scaled units and converts to data units
//! (`sqrt(T)` for factors, `sqrt(N)` for loadings) in its accessors.

// `!(x >= 0.0)` is used on purpose so NaN arguments are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod estimators;
pub mod imputation;
pub mod inference;
pub mod montecarlo;
pub mod panel;
pub mod selection;
pub mod svdcore;

mod linalg;

pub use constraints::{ConstrainedFit, RestrictionSet};
pub use estimators::{CommonComponent, FactorFit, Method};
pub use imputation::{EmOptions, ImputationResult};
pub use inference::{AvarEstimates, RotationDiagnostics};
pub use montecarlo::{DgpConfig, SimMetrics, SimTruth, SweepRow};
pub use panel::{Panel, ScaledData, StandardizationInfo, VarianceConvention};
pub use selection::SelectionResult;
pub use svdcore::PartialSvd;

use thiserror::Error;

/// Errors produced by factorkit operations.
#[derive(Debug, Error)]
pub enum FactorError {
    /// Malformed input file.
    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        /// 1-based data row (header excluded).
        row: usize,
        /// 1-based column.
        col: usize,
        /// What went wrong.
        message: String,
    },

    /// A data row with the wrong number of fields.
    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        /// 1-based data row (header excluded).
        row: usize,
        /// Field count of the header / first row.
        expected: usize,
        /// Field count of this row.
        found: usize,
    },

    /// Input data violate a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument is out of its admissible range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A precondition on the input state does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A mathematical domain error, e.g. log of a nonpositive value.
    #[error("domain error at row {row}, column {col}: {message}")]
    Domain {
        /// 1-based row.
        row: usize,
        /// 1-based column.
        col: usize,
        /// What went wrong.
        message: String,
    },

    /// A linear system could not be solved.
    #[error("singular system: {0}")]
    Singular(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// CSV reader/writer failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// JSON failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FactorError {
    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            FactorError::Parse { .. } => "parse",
            FactorError::RaggedRow { .. } => "ragged_row",
            FactorError::Validation(_) => "validation",
            FactorError::Argument(_) => "argument",
            FactorError::Precondition(_) => "precondition",
            FactorError::Domain { .. } => "domain",
            FactorError::Singular(_) => "singular",
            FactorError::Io(_) => "io",
            FactorError::Csv(_) => "csv",
            FactorError::Json(_) => "json",
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, FactorError>;
