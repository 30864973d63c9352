use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("subject {subject}: {message}")]
    Validation { subject: String, message: String },

    #[error("empty observation interval: {0}")]
    EmptyInterval(String),

    #[error("subject {subject}: recorded visit ages admit no birthdate")]
    InconsistentRecord { subject: String },

    #[error("empty risk set at age {age}")]
    EmptyRiskSet { age: f64 },

    #[error("no events within the bandwidth around age {age}")]
    EmptyWindow { age: f64 },

    #[error("singular information matrix at age {age}")]
    Singular { age: f64 },

    #[error("census counts are all zero at age {age}")]
    EmptyPopulation { age: f64 },

    #[error("census table: {0}")]
    Census(String),

    #[error("zero baseline denominator at event age {age}")]
    ZeroDenominator { age: f64 },

    #[error("zero baseline jump at event age {age}; log-likelihood is -inf")]
    LogOfZero { age: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown analysis id `{0}`")]
    UnknownAnalysis(String),

    #[error("empty stratum: {0}")]
    EmptyStratum(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
