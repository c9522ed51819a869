use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("candidate {k} is not admissible in segment [{start}, {end}) with minimum segment length {msl}")]
    CandidateOutOfRange {
        k: usize,
        start: usize,
        end: usize,
        msl: usize,
    },

    /// The robust noise scale is zero, typically because every row is constant.
    #[error("degenerate data: median absolute deviation of the differenced series is zero")]
    DegenerateScale,

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("only {found} change-points could be placed, at least {needed} are required")]
    InsufficientSplits { found: usize, needed: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{stage}: {inner}")]
    Stage {
        stage: &'static str,
        inner: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Self::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    /// Attach the pipeline stage that produced this error.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Self::Stage {
            stage,
            inner: Box::new(self),
        }
    }
}
