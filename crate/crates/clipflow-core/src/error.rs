//! Error type shared across the core crate.

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A vector or matrix constructor or operation received data of the wrong size.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Two operands have incompatible shapes.
    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch {
        context: &'static str,
        detail: String,
    },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A scalar argument fell outside its admissible range.
    #[error("{context}: {value} is outside {range}")]
    OutOfRange {
        context: &'static str,
        value: f64,
        range: &'static str,
    },

    /// An operation that needs at least one element received none.
    #[error("empty input in {context}")]
    EmptyInput { context: &'static str },

    /// A classifier returned an invalid probability vector.
    #[error("invalid probability vector from classifier: {detail}")]
    InvalidProbabilities { detail: String },

    /// Label-merge lookup against a dataset the table does not declare.
    #[error("dataset {name:?} is not declared in the merge table")]
    UnknownDataset { name: String },

    /// Reference sampling for an identity the corpus index does not contain.
    #[error("identity {identity:?} not present in corpus index")]
    UnknownIdentity { identity: String },

    /// Parsing a structured input (merge table, manifest, probability file) failed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A binary payload failed structural validation.
    #[error("decode error: {detail}")]
    Decode { detail: String },

    /// Toy training diverged: the EMA loss stayed above 10x its initial value.
    #[error(
        "training diverged at step {step}: ema loss {ema:.6e} exceeded 10x initial \
         {initial:.6e} for {window} consecutive steps"
    )]
    TrainingDiverged {
        step: usize,
        ema: f64,
        initial: f64,
        window: usize,
    },

    /// A denoising step produced a NaN or infinity.
    #[error("non-finite latent during denoising at step {step} (t = {t:.6})")]
    NonFiniteDenoise { step: usize, t: f64 },

    /// Timeline inputs too short or misaligned for the requested stream.
    #[error("timeline mismatch: {detail}")]
    TimelineMismatch { detail: String },

    /// I/O failure while reading or writing an artifact file.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Result alias used throughout the core crate.
pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
