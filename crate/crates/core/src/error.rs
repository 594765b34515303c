use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Input or configuration violates a structural requirement.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numerical routine failed (non-SPD matrix, degenerate weights, overflow).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A simulated recurrent-event path exceeded the event cap before the horizon.
    #[error("subject {subject}: more than {cap} simulated events before t = {horizon}")]
    EventCap { subject: usize, cap: usize, horizon: f64 },

    /// One or more replicates of a batch study failed.
    #[error("{failed} of {total} replicates failed")]
    PartialFailure { failed: usize, total: usize },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code: 2 validation, 3 numerical, 4 partial replicate failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Csv(_) | Error::Json(_) | Error::Io(_) => 2,
            Error::Numerical(_) | Error::EventCap { .. } => 3,
            Error::PartialFailure { .. } => 4,
        }
    }
}
