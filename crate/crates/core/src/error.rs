use thiserror::Error;

use crate::expr::ExprError;
use crate::jet::JetError;
use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown manifold `{0}`")]
    UnknownManifold(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("point {point:?} lies outside the chart domain")]
    OutOfDomain { point: Vec<f64> },
    #[error("evaluation failed at {point:?}: {source}")]
    Evaluation { point: Vec<f64>, source: ExprError },
    #[error("singular metric at {point:?} (|det g| = {det:e})")]
    SingularMetric { point: Vec<f64>, det: f64 },
    #[error("metric at {point:?} has signature {found:?}, declared {expected:?}")]
    SignatureMismatch {
        point: Vec<f64>,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("at quadrature node {node} ({point:?}): {source}")]
    AtNode {
        node: usize,
        point: Vec<f64>,
        source: Box<Error>,
    },
    #[error("perturbed metric with eps = {eps:e}: {source}")]
    Perturbed { eps: f64, source: Box<Error> },
}

impl Error {
    /// Failures of the numerics (degenerate metrics, evaluation errors) as
    /// opposed to malformed requests.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Jet(_)
            | Error::Evaluation { .. }
            | Error::SingularMetric { .. }
            | Error::SignatureMismatch { .. } => true,
            Error::Tensor(e) => matches!(e, TensorError::DegenerateMetric { .. }),
            Error::AtNode { source, .. } | Error::Perturbed { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
