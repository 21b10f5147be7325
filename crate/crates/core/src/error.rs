use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no image file found for id `{id}` in {dir}")]
    MissingImage { id: String, dir: PathBuf },

    #[error("failed to decode image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("parse error at row {row}, column `{column}`: {msg}")]
    Parse { row: usize, column: String, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cannot balance classes: {0}")]
    Balance(String),

    #[error("cannot standardize feature `{feature}`: {msg}")]
    Standardize { feature: String, msg: String },

    #[error("cannot partition dataset: {0}")]
    Partition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("shape mismatch in {dim}: expected {expected}, got {actual}")]
    Shape {
        dim: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid model spec: {0}")]
    Build(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    Divergence { epoch: usize, what: String },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(dim: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            dim: dim.into(),
            expected,
            actual,
        }
    }

    /// Process exit code for the command-line front end: 1 for usage and
    /// configuration problems, 2 for data problems, 3 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Fold { source, .. } => source.exit_code(),
            Error::Divergence { .. } => 3,
            Error::Config(_) | Error::Parameter(_) | Error::Build(_) => 1,
            _ => 2,
        }
    }
}
