use thiserror::Error;

use crate::model::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("panel is empty")]
    EmptyPanel,

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("unit {unit_id} has no observation at t = {t}")]
    MissingObservation { unit_id: i64, t: i64 },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("coefficient {index} has zero variance")]
    ZeroVariance { index: usize },

    #[error("coefficient index {0} out of range 0..8")]
    CoefIndex(usize),

    #[error("AR order must be at least 1")]
    EmptyOrder,

    #[error("AR coefficients are not stationary (spectral radius {radius:.6})")]
    NonStationary { radius: f64 },

    #[error("Yule-Walker iterate is not stationary (spectral radius {radius:.6}, iteration {iteration})")]
    NonStationaryIterate { radius: f64, iteration: usize },

    #[error("Cholesky factorisation failed: {0}")]
    CholeskyFailure(&'static str),

    #[error("Yule-Walker system is singular")]
    SingularSystem,

    #[error("every segment is too short for AR order {k}")]
    AllSegmentsTooShort { k: usize },

    #[error("segment {segment} has {len} observations, need more than {k}")]
    SegmentTooShort { segment: usize, len: usize, k: usize },

    #[error("HAC lag {lag} must be smaller than the shortest segment ({min_len})")]
    BandwidthTooLarge { lag: usize, min_len: usize },

    #[error("Prais-Winsten did not converge in {iterations} iterations")]
    NotConverged { iterations: usize, fit: Box<FitResult> },

    #[error("input is empty or too short")]
    EmptyInput,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{failed} of {replications} replications failed (limit 5%)")]
    TooManyFailures { failed: usize, replications: usize },

    #[error("CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the input data or configuration, as
    /// opposed to numerical trouble during estimation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyPanel
                | Error::InvalidPanel(_)
                | Error::MissingObservation { .. }
                | Error::Config(_)
                | Error::Csv { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::CoefIndex(_)
                | Error::LengthMismatch(..)
        )
    }
}
