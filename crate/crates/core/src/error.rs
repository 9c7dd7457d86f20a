use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("degenerate vector in {0}: norm is zero")]
    DegenerateVector(&'static str),

    #[error("degenerate centroid for factor {factor}: row-sum norm {norm:e} is below 1e-12")]
    DegenerateCentroid { factor: usize, norm: f64 },

    #[error("non-finite function value at coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },

    #[error("equiangular frame of {n} vectors needs dimension >= {}, got {d}", .n - 1)]
    InfeasibleDimension { n: usize, d: usize },

    #[error("train-mode batch normalization needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported checkpoint format version {0}")]
    FormatVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
