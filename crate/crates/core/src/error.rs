use std::io;

/// Errors produced by the simulation, geometry and training pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Scene generation could not satisfy its placement constraints.
    #[error("scene generation failed: {0}")]
    Generation(String),

    /// A numeric routine failed to converge or hit a singular value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The MP and MU domains are indistinguishable under the encoder.
    #[error("degenerate shift: |w| = {norm:e} is below {threshold:e}")]
    DegenerateShift { norm: f64, threshold: f64 },

    /// A metric is undefined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training diverged or otherwise could not continue.
    #[error("training error: {0}")]
    Training(String),

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A binary file did not match its declared layout.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
