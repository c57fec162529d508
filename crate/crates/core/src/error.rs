use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("duplicate domain parameter `{0}`")]
    DuplicateParam(String),

    #[error("unknown domain parameter `{0}`")]
    UnknownParam(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular mass matrix (det = {0:e})")]
    SingularMassMatrix(f64),

    #[error("non-finite gradient at iteration {iteration}: {detail}")]
    NonFiniteGradient { iteration: usize, detail: String },

    #[error("reference solution {k} failed: {source}")]
    Reference {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed policy file: {0}")]
    PolicyFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
