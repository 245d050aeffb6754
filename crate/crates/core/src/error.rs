use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-positive propensity at row {row}")]
    NonPositivePropensity { row: usize },

    #[error("propensity above 1 at row {row}")]
    PropensityAboveOne { row: usize },

    #[error("arm label {label} at row {row} outside 1..={n_arms}")]
    ArmOutOfRange {
        row: usize,
        label: i64,
        n_arms: usize,
    },

    #[error("non-finite or unparseable value in column `{column}` at row {row}")]
    BadNumber { row: usize, column: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("k = {k} exceeds the {available} available neighbors")]
    KTooLarge { k: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no arm has positive weight in the neighborhood")]
    NoEligibleArm,

    #[error("value undefined: no subject received the regime's recommended arm")]
    UndefinedValue,

    #[error("arm {arm} has {available} subjects, fewer than k = {k}")]
    ArmTooSmall { arm: usize, available: usize, k: usize },

    #[error("cross-validation failed: every grid cell has an undefined value")]
    TuningFailed,

    #[error("model file: {0}")]
    Model(String),

    #[error("unsupported model format version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
}

impl Error {
    /// Stable machine-readable code for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Csv(_) => "E_CSV",
            Error::MissingColumn(_) => "E_MISSING_COLUMN",
            Error::NonPositivePropensity { .. } | Error::PropensityAboveOne { .. } => {
                "E_PROPENSITY"
            }
            Error::ArmOutOfRange { .. } => "E_ARM_RANGE",
            Error::BadNumber { .. } => "E_BAD_NUMBER",
            Error::InvalidDataset(_) => "E_DATASET",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::KTooLarge { .. } => "E_K_TOO_LARGE",
            Error::InvalidParameter(_) => "E_PARAMETER",
            Error::NoEligibleArm => "E_NO_ELIGIBLE_ARM",
            Error::UndefinedValue => "E_UNDEFINED_VALUE",
            Error::ArmTooSmall { .. } => "E_ARM_TOO_SMALL",
            Error::TuningFailed => "E_TUNING",
            Error::Model(_) => "E_MODEL",
            Error::UnsupportedVersion { .. } => "E_MODEL_VERSION",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
