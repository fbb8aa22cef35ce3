use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("layer {layer}: expected input width {expected}, got {got}")]
    Layer {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("frame index {got} is not greater than the newest stored index {newest}")]
    NonMonotoneFrame { newest: u64, got: u64 },

    #[error("frame index {0} is already stored in the bank")]
    DuplicateFrame(u64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("snapshot field `{field}`: {reason}")]
    Snapshot { field: String, reason: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
