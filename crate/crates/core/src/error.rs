use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("schema error in entry {entry}: key `{key}`: {message}")]
    Schema {
        entry: usize,
        key: String,
        message: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("instance cannot be encoded: {0}")]
    Unencodable(String),

    #[error("training diverged at epoch {epoch}, step {step}: {message}")]
    Divergence {
        epoch: usize,
        step: usize,
        message: String,
    },

    #[error("few-shot sampling failed: {0}")]
    Sampling(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, GraspError>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(GraspError::Contract(msg.into()))
}
