use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("invalid class configuration: {0}")]
    InvalidClassConfig(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("documents without a gold label: {}", .0.join(", "))]
    MissingLabel(Vec<String>),

    #[error("class `{0}` has no training documents")]
    EmptyClass(String),

    #[error("training loss increased at epoch {epoch}: {previous} -> {current}")]
    TrainingDiverged {
        epoch: usize,
        previous: f64,
        current: f64,
    },

    #[error("transport error: {message} (raw reply: {raw:?})")]
    Transport { message: String, raw: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("document `{0}` has no tokens")]
    EmptyDocument(String),

    #[error("singular surrogate system")]
    Singular,

    #[error("feature `{feature}` does not occur in document `{document}`")]
    FeatureNotPresent { feature: String, document: String },

    #[error("feature `{0}` does not occur in the corpus")]
    FeatureNotInCorpus(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("K = {k} exceeds the {len} ranked instances")]
    KOutOfRange { k: usize, len: usize },

    #[error("no flagged errors to summarize")]
    EmptyFlaggedSet,

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// Short machine-readable name used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DuplicateId(_) => "duplicate_id",
            Error::InvalidClassConfig(_) => "invalid_class_config",
            Error::UnknownClass(_) => "unknown_class",
            Error::MissingLabel(_) => "missing_label",
            Error::EmptyClass(_) => "empty_class",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::Transport { .. } => "transport",
            Error::Protocol(_) => "protocol_violation",
            Error::EmptyDocument(_) => "empty_document",
            Error::Singular => "singular",
            Error::FeatureNotPresent { .. } => "feature_not_present",
            Error::FeatureNotInCorpus(_) => "feature_not_in_corpus",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::KOutOfRange { .. } => "k_out_of_range",
            Error::EmptyFlaggedSet => "empty_flagged_set",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
