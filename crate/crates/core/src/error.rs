use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown subtitle format `{0}` (expected srt or plain)")]
    UnknownFormat(String),

    #[error("no parseable subtitle files under {0}")]
    EmptyCorpus(PathBuf),

    #[error("need {needed} control windows but only {available} are eligible")]
    InsufficientEligibleLines { needed: usize, available: usize },

    #[error("malformed lexicon at line {line}: {reason}")]
    MalformedLexicon { line: usize, reason: String },

    #[error("excerpt {0} has no tokens")]
    ZeroTokens(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid p-value {0}")]
    InvalidPValue(f64),

    #[error("template {template} does not apply to excerpt {excerpt}")]
    TemplateMismatch { template: String, excerpt: String },

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("provider rejected credentials: {0}")]
    AuthFailure(String),

    #[error("cannot parse response `{0}`")]
    ParseFailure(String),

    #[error("no vector for `{0}`")]
    MissingVector(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("group `{0}` has zero total")]
    ZeroTotal(String),

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("stage `{stage}` needs `{artifact}`; run `{upstream}` first")]
    MissingUpstream {
        stage: String,
        upstream: String,
        artifact: String,
    },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn unreadable(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::UnreadableFile {
            path: path.into(),
            source,
        }
    }

    /// True for failures that come from an LLM or embedding provider rather
    /// than from user input.
    pub fn is_provider_error(&self) -> bool {
        matches!(self, Error::ProviderUnavailable(_) | Error::AuthFailure(_))
    }
}
