use thiserror::Error;

/// Errors surfaced by the estimation pipeline.
///
/// The split between variants matters to callers: `Schema`/`Data` are input
/// problems, `Size`/`Dimension` are shape preconditions, and the remaining
/// variants indicate numerical degeneracy detected at runtime.
#[derive(Debug, Error)]
pub enum TsciError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error at row {row}, column {column}: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("size error: {0}")]
    Size(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),

    #[error("weak IV: {0}")]
    WeakIv(String),

    #[error("perfect first-stage fit: {0}")]
    PerfectFit(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TsciError>;
