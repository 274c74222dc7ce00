use thiserror::Error;

/// Errors raised by graph construction, parsing, identification and the oracle.
///
/// Identification outcomes such as FAIL or UNDEFINED are results, not errors;
/// see [`crate::identify::QueryResult`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("graph contains a cycle or self-loop involving {0}")]
    CyclicGraph(String),

    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid separation query: {0}")]
    InvalidSeparationQuery(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("counterfactual variable `{0}` has no observed value")]
    MissingValue(String),

    #[error("conditioning event has probability zero")]
    ZeroConditioningEvent,

    #[error("model needs {configurations} latent configurations, limit is {limit}")]
    ExplicitResourceLimit { configurations: u128, limit: u128 },

    #[error("identification recursion exceeded depth {0}")]
    RecursionLimit(usize),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("value `{0}` is symbolic and cannot be evaluated here")]
    SymbolicValue(String),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
