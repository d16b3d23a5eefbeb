use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's preconditions (shapes, ranges, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("thread {thread}: {msg}")]
    Thread { thread: String, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage} stage failed: {cause}")]
    Stage { stage: &'static str, cause: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

impl Error {
    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| match e {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                cause: other.to_string(),
            },
        }
    }
}
