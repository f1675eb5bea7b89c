use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenRange { token: u32, vocab: usize },

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {context}")]
    Numeric { context: String },

    #[error("latent explosion during {direction} at step {step} (t = {t})")]
    LatentExplosion {
        direction: &'static str,
        step: usize,
        t: f64,
    },

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Training { iteration: usize, loss: f64 },

    #[error("null-embedding optimization produced a non-finite loss at step {step}, inner iteration {inner}")]
    Nti { step: usize, inner: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("unsupported file version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            what,
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by the numerics (explosions, non-finite
    /// values, divergence) rather than by bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self.root(),
            Error::Numeric { .. }
                | Error::LatentExplosion { .. }
                | Error::Training { .. }
                | Error::Nti { .. }
        )
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::TokenRange { .. } => "token_range",
            Error::Shape { .. } => "shape",
            Error::Config(_) => "config",
            Error::Numeric { .. } => "numeric",
            Error::LatentExplosion { .. } => "latent_explosion",
            Error::Training { .. } => "training_diverged",
            Error::Nti { .. } => "nti_non_finite",
            Error::Stage { .. } => unreachable!("root() strips stage wrappers"),
            Error::Metric(_) => "metric",
            Error::Version { .. } => "version",
            Error::Corrupt { .. } => "corrupt_file",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
