use thiserror::Error;

pub type Result<T, E = HerdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HerdError {
    #[error("configuration infeasible: {0}")]
    ConfigInfeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("source cell ({row}, {col}) is blocked or out of bounds")]
    InvalidSource { row: usize, col: usize },

    #[error("destination is unreachable")]
    Unreachable,

    #[error("no free cell in occupancy grid")]
    NoFreeSpace,

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("replay buffer holds {have} transitions, need {need}")]
    NotReady { have: usize, need: usize },

    #[error("sampler diverged: non-finite model output at timestep {0}")]
    SamplingDiverged(usize),

    #[error("no reachable action after {0} retries")]
    NoAction(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HerdError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        HerdError::Shape { op, detail: detail.into() }
    }
}
