use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("seed cell ({row}, {col}) lies outside the {height}x{width} grid")]
    Placement {
        row: i64,
        col: i64,
        height: usize,
        width: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at training step {step} (rng word position {rng_word_pos})")]
    NonFinite { step: u64, rng_word_pos: u128 },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
