use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variants group into three exit-code families (see [`Error::exit_code`]):
/// invalid input, insufficient data, and numerical failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluation set is empty")]
    EmptyEvaluationSet,
    #[error("class {0} is absent from the ground truth")]
    ClassAbsent(&'static str),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error("sample {0} has zero degree in the affinity graph")]
    IsolatedSample(usize),
    #[error("surrogate normal equations are singular: {0}")]
    SurrogateDegenerate(String),
    #[error("classifier does not expose activations and gradients")]
    UnsupportedExplainer,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("unknown cluster {0}")]
    UnknownCluster(usize),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
    #[error("checkpoint is truncated: {0}")]
    TruncatedCheckpoint(String),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Attach context (typically an image id) without losing the exit-code class.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 invalid input, 3 insufficient data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::EmptyEvaluationSet
            | Error::ClassAbsent(_)
            | Error::InsufficientSamples { .. }
            | Error::EmptySplit(_) => 3,
            Error::IsolatedSample(_) | Error::SurrogateDegenerate(_) | Error::Divergence { .. } => 4,
            _ => 2,
        }
    }
}
