//! Error type shared by every analysis module.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("non-finite value at layer {layer}, row {row}, col {col}")]
    NonFinite { layer: usize, row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing layer file for layer {layer} ({path})")]
    MissingLayerFile { layer: usize, path: PathBuf },

    #[error("unexpected layer file {path}: layer files must form the contiguous range 0..{num_layers}")]
    UnexpectedLayerFile { path: PathBuf, num_layers: usize },

    #[error("bad magic bytes in {path}")]
    BadMagic { path: PathBuf },

    #[error("unsupported matrix format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("header of {path} declares {header_rows}x{header_cols} but manifest expects {expected_rows}x{expected_cols}")]
    HeaderMismatch {
        path: PathBuf,
        header_rows: u64,
        header_cols: u64,
        expected_rows: usize,
        expected_cols: usize,
    },

    #[error("truncated or oversized payload in {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("row count mismatch: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },

    #[error("degenerate input: {0} has zero variance after centering")]
    ZeroVariance(&'static str),

    #[error("degenerate layer {0}: zero variance after centering")]
    DegenerateLayer(usize),

    #[error("{what} = {value} out of range (expected {expected})")]
    OutOfRange {
        what: &'static str,
        value: i64,
        expected: String,
    },

    #[error("need at least 3 aligned points, got {0}")]
    InsufficientOverlap(usize),

    #[error("zero rank variance in series `{0}`")]
    ZeroRankVariance(String),

    #[error("correlation failed for pair ({left}, {right}): {source}")]
    PairFailed {
        left: usize,
        right: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("invalid loss table: {0}")]
    InvalidLossTable(String),

    #[error("invalid toy config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint configs differ")]
    ConfigMismatch,

    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn out_of_range(what: &'static str, value: impl TryInto<i64>, expected: impl Into<String>) -> Self {
        Error::OutOfRange {
            what,
            value: value.try_into().unwrap_or(i64::MAX),
            expected: expected.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Diverged { .. })
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::InvalidManifest(_) => "invalid_manifest",
            Error::NonFinite { .. } => "non_finite",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::MissingLayerFile { .. } => "missing_layer_file",
            Error::UnexpectedLayerFile { .. } => "unexpected_layer_file",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::HeaderMismatch { .. } => "header_mismatch",
            Error::Truncated { .. } => "truncated",
            Error::TooFewSamples(_) => "too_few_samples",
            Error::RowMismatch { .. } => "row_mismatch",
            Error::ZeroVariance(_) => "zero_variance",
            Error::DegenerateLayer(_) => "degenerate_layer",
            Error::OutOfRange { .. } => "out_of_range",
            Error::InsufficientOverlap(_) => "insufficient_overlap",
            Error::ZeroRankVariance(_) => "zero_rank_variance",
            Error::PairFailed { .. } => "pair_failed",
            Error::InvalidSeries(_) => "invalid_series",
            Error::InvalidLossTable(_) => "invalid_loss_table",
            Error::InvalidConfig(_) => "invalid_config",
            Error::ConfigMismatch => "config_mismatch",
            Error::TokenOutOfRange { .. } => "token_out_of_range",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::Diverged { .. } => "diverged",
            Error::Numeric(_) => "numeric",
            Error::Usage(_) => "usage",
        }
    }
}
