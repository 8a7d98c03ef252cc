use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("rollout exceeded the horizon of {0} steps")]
    HorizonExceeded(usize),
    #[error("policy is improper: {0}")]
    ImproperPolicy(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("feature {0} has no thresholds")]
    EmptyThresholds(usize),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("unknown label {0}")]
    UnknownLabel(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("solution is not optimal")]
    NotOptimal,
    #[error("enumeration too large: {0} policies")]
    TooLarge(f64),
    #[error("region {0} has no sampled actions")]
    NoCoverage(usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidState(_) => "InvalidState",
            Error::HorizonExceeded(_) => "HorizonExceeded",
            Error::ImproperPolicy(_) => "ImproperPolicy",
            Error::EmptyBatch => "EmptyBatch",
            Error::EmptyThresholds(_) => "EmptyThresholds",
            Error::SingleClass => "SingleClass",
            Error::UnknownLabel(_) => "UnknownLabel",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::Infeasible => "Infeasible",
            Error::Unbounded => "Unbounded",
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::NotOptimal => "NotOptimal",
            Error::TooLarge(_) => "TooLarge",
            Error::NoCoverage(_) => "NoCoverage",
            Error::InvalidModel(_) => "InvalidModel",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
