use thiserror::Error;

use crate::fields::{MultiIndex, Window};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix {index} is not symmetric (relative defect {defect:.3e})")]
    NotSymmetric { index: usize, defect: f64 },

    #[error("matrix {index} is not positive definite (smallest eigenvalue {min_eigenvalue:.6e})")]
    NotPositiveDefinite { index: usize, min_eigenvalue: f64 },

    #[error(
        "theta tuple does not commute pairwise (max relative commutator {defect:.3e} > 1e-10); \
         the transforms require pairwise commuting matrices"
    )]
    NonCommuting { defect: f64 },

    #[error("site {site} lies outside window {window}")]
    OutOfWindow { site: MultiIndex, window: Window },

    #[error("{op} needs input window {required}, but only {available} is available")]
    InsufficientWindow {
        op: &'static str,
        required: Window,
        available: Window,
    },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("field is on the {actual} clock, {op} expects the {expected} clock")]
    ClockMismatch {
        op: &'static str,
        expected: &'static str,
        actual: &'static str,
    },

    #[error("field windows are not aligned: {0}")]
    Misaligned(String),

    #[error("Hurst index {value} at component {component}, axis {axis} is outside (0, 1]")]
    InvalidHurst {
        component: usize,
        axis: usize,
        value: f64,
    },

    #[error("grid of {points} points exceeds the dense factorization cap of {cap}")]
    GridTooLarge { points: usize, cap: usize },

    #[error("covariance matrix is not symmetric (defect {defect:.3e})")]
    AsymmetricCovariance { defect: f64 },

    #[error("covariance matrix is indefinite (eigenvalue {eigenvalue:.6e} below -1e-10 * {norm:.6e})")]
    IndefiniteCovariance { eigenvalue: f64, norm: f64 },

    #[error(
        "mixing matrix does not commute with exp(s * theta) for unit shift along axis {axis} \
         (defect {defect:.3e}); the second-kind construction assumes A and exp(s * theta) commute"
    )]
    MixingNotCommuting { axis: usize, defect: f64 },

    #[error("exponential clock coordinate {coord} exceeds the double precision range (|t| <= {limit})")]
    DynamicRange { coord: i64, limit: i64 },

    #[error("need at least {required} replications, got {actual}")]
    InsufficientReplications { required: usize, actual: usize },

    #[error("non-finite value {value} at site {site}")]
    NonFinite { site: MultiIndex, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed field file: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by malformed input parameters or schemas, as opposed
    /// to numeric or window failures during a computation.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::NotSymmetric { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::NonCommuting { .. }
                | Error::InvalidWindow(_)
                | Error::InvalidHurst { .. }
                | Error::MixingNotCommuting { .. }
                | Error::InvalidParameter(_)
                | Error::Json(_)
                | Error::Format(_)
                | Error::ClockMismatch { .. }
        )
    }
}
