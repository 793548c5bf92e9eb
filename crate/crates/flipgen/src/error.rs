use crate::game::ValidationReport;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game spec: {0}")]
    InvalidSpec(ValidationReport),

    #[error("state at round {round} is terminal (horizon {rounds})")]
    TerminalState { round: usize, rounds: usize },

    #[error("illegal {role} action `{action}` in state {state_index}")]
    IllegalAction {
        role: &'static str,
        action: String,
        state_index: usize,
    },

    #[error("state index {index} out of range (size {size})")]
    StateIndexOutOfRange { index: usize, size: usize },

    #[error("{role} policy does not cover reachable state {state_index}")]
    PolicyGap {
        role: &'static str,
        state_index: usize,
    },

    #[error("policy at state {state_index} is not a distribution: {reason}")]
    BadDistribution { state_index: usize, reason: String },

    #[error("softmax over an empty value vector")]
    EmptyValues,

    #[error("cannot normalize: all node rewards are zero")]
    ZeroRewards,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("trait `{trait_name}` does not apply to family `{family}`")]
    TraitFamilyMismatch {
        trait_name: String,
        family: String,
    },

    #[error("empty support grid")]
    EmptySupport,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("cluster is empty")]
    EmptyCluster,

    #[error("dataset schema error at {location}: {message}")]
    Schema { location: String, message: String },

    #[error("episode {episode_id} fails replay at step {step}: {message}")]
    Replay {
        episode_id: String,
        step: usize,
        message: String,
    },

    #[error("genome out of bounds: {0}")]
    GenomeBounds(String),

    #[error("model set must contain at least two models")]
    ModelSetTooSmall,

    #[error("population size must be at least 2 (got {0})")]
    PopulationTooSmall(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
