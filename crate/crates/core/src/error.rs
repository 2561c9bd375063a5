use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("batch alignment: {0}")]
    Alignment(String),

    #[error("invalid fusion spec: {0}")]
    FusionSpec(String),

    #[error("invalid expansion policy: {0}")]
    Policy(String),

    #[error("missing capability: {0}")]
    Capability(String),

    #[error("training failed: {reason} (final loss {final_loss:.6})")]
    TrainingFailure { reason: String, final_loss: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("artifact format: {0}")]
    Format(String),

    #[error("image codec: {0}")]
    Codec(String),

    #[error("plot: {0}")]
    Plot(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable category used in CLI error lines.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::Shape(_) => "shape",
            Error::Precondition(_) => "precondition",
            Error::Alignment(_) => "alignment",
            Error::FusionSpec(_) => "fusion-spec",
            Error::Policy(_) => "policy",
            Error::Capability(_) => "capability",
            Error::TrainingFailure { .. } => "training-failure",
            Error::NonFinite(_) => "non-finite",
            Error::Format(_) => "format",
            Error::Codec(_) => "codec",
            Error::Plot(_) => "plot",
            Error::Stage { source, .. } => source.tag(),
        }
    }

    /// Wrap with the pipeline stage it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
