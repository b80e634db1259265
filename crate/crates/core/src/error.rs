//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    TensorShape { shape: Vec<usize>, len: usize },
    #[error("expressions belong to different tapes")]
    TapeMismatch,
    #[error("derive requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("leaf node {node} has no value bound")]
    UnboundLeaf { node: usize },
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("empty tensor not allowed in {op}")]
    EmptyTensor { op: &'static str },
    #[error("training diverged at step {step}: weight norm {norm:.3e}")]
    Divergence { step: usize, norm: f64 },
    #[error("non-finite gradient for sample {sample}")]
    NonFiniteGradient { sample: usize },
    #[error("validation set is empty or has no valid pixels")]
    EmptyValidation,
    #[error("prediction and ground-truth masks differ")]
    MaskMismatch,
    #[error("nonpositive depth at valid pixel {pixel}")]
    NonPositiveDepth { pixel: usize },
    #[error("decision vector has {got} entries, layout {layout} expects {expected}")]
    LayoutMismatch {
        layout: String,
        expected: usize,
        got: usize,
    },
    #[error("probe {probe} produced non-finite generator output")]
    NonFiniteProbe { probe: usize },
    #[error("pipeline does not provide an analytic Jacobian")]
    NoAnalyticJacobian,
    #[error("outer step {t}: {source}")]
    OuterStep {
        t: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed run record: {0}")]
    Record(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the outer-step index it occurred in.
    pub fn at_step(self, t: usize) -> Error {
        Error::OuterStep {
            t,
            source: Box::new(self),
        }
    }
}
