use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    DegenerateVector { norm: f64 },

    #[error("gaze ray is parallel to the screen plane (|g.n| = {dot:e})")]
    RayParallelToScreen { dot: f64 },

    #[error("alignment anchors are degenerate: {0}")]
    DegenerateAnchors(String),

    #[error("every projection in the batch failed ({count} samples)")]
    AllSamplesInvalid { count: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}: {snapshot}")]
    NonFiniteLoss {
        epoch: u32,
        step: u32,
        snapshot: String,
    },

    #[error("trajectory epochs must increase: got epoch {epoch} after {last} for sample {sample_id}")]
    OutOfOrderEpoch { sample_id: u64, epoch: u32, last: u32 },

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("schema error at line {line}: {message}")]
    Schema { line: u64, message: String },

    #[error("{0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Usage and input-shape failures; the CLI maps these to exit code 2.
    pub fn is_schema_error(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::Mismatch(_)
        )
    }
}
