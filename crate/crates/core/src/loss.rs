use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A convex, differentiable loss of the predictions.
pub trait ConvexLoss: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, predictions: &DMatrix<f64>, labels: &DMatrix<f64>) -> f64;
    fn gradient(&self, predictions: &DMatrix<f64>, labels: &DMatrix<f64>) -> DMatrix<f64>;
    /// Lipschitz constant of the gradient, if known.
    fn smoothness(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Squared,
    UserSupplied,
}

/// Loss attached to a program. Predictions may have `groups * n` rows when
/// the loss averages stacked patch predictions before comparing to labels.
#[derive(Clone)]
pub enum LossSpec {
    /// `0.5 * ||f - y||^2`.
    Squared,
    /// Applies `inner` to the mean over `groups` consecutive row blocks.
    Averaged { groups: usize, inner: Arc<LossSpec> },
    Custom(Arc<dyn ConvexLoss>),
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Squared => write!(f, "Squared"),
            LossSpec::Averaged { groups, inner } => write!(f, "Averaged({groups}, {inner:?})"),
            LossSpec::Custom(c) => write!(f, "Custom({})", c.name()),
        }
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Squared
    }
}

impl LossSpec {
    pub fn kind(&self) -> LossKind {
        match self {
            LossSpec::Squared => LossKind::Squared,
            LossSpec::Averaged { inner, .. } => inner.kind(),
            LossSpec::Custom(_) => LossKind::UserSupplied,
        }
    }

    pub fn averaged(groups: usize, inner: LossSpec) -> Result<Self> {
        if groups == 0 {
            return Err(Error::InvalidArgument("group count must be positive".into()));
        }
        Ok(LossSpec::Averaged { groups, inner: Arc::new(inner) })
    }

    pub fn name(&self) -> String {
        match self {
            LossSpec::Squared => "squared".into(),
            LossSpec::Averaged { groups, inner } => format!("mean{groups}({})", inner.name()),
            LossSpec::Custom(c) => c.name().into(),
        }
    }

    /// Number of prediction rows expected for `n` labels.
    pub fn prediction_rows(&self, n: usize) -> usize {
        match self {
            LossSpec::Averaged { groups, inner } => groups * inner.prediction_rows(n),
            _ => n,
        }
    }

    pub fn evaluate(&self, predictions: &DMatrix<f64>, labels: &DMatrix<f64>) -> f64 {
        match self {
            LossSpec::Squared => 0.5 * (predictions - labels).norm_squared(),
            LossSpec::Averaged { groups, inner } => {
                inner.evaluate(&group_mean(predictions, *groups), labels)
            }
            LossSpec::Custom(c) => c.evaluate(predictions, labels),
        }
    }

    pub fn gradient(&self, predictions: &DMatrix<f64>, labels: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            LossSpec::Squared => predictions - labels,
            LossSpec::Averaged { groups, inner } => {
                let g = inner.gradient(&group_mean(predictions, *groups), labels);
                group_spread(&g, *groups)
            }
            LossSpec::Custom(c) => c.gradient(predictions, labels),
        }
    }

    pub fn smoothness(&self) -> Option<f64> {
        match self {
            LossSpec::Squared => Some(1.0),
            LossSpec::Averaged { groups, inner } => inner.smoothness().map(|l| l / *groups as f64),
            LossSpec::Custom(c) => c.smoothness(),
        }
    }

    /// Row-averaging factor when the loss is `0.5 * ||A f - y||^2` with `A`
    /// the mean over consecutive row blocks; `None` for anything else.
    pub fn least_squares_groups(&self) -> Option<usize> {
        match self {
            LossSpec::Squared => Some(1),
            LossSpec::Averaged { groups, inner } => {
                inner.least_squares_groups().map(|g| g * groups)
            }
            LossSpec::Custom(_) => None,
        }
    }
}

/// Mean over `groups` consecutive blocks of rows.
pub fn group_mean(m: &DMatrix<f64>, groups: usize) -> DMatrix<f64> {
    if groups == 1 {
        return m.clone();
    }
    let n = m.nrows() / groups;
    let mut out = DMatrix::zeros(n, m.ncols());
    for k in 0..groups {
        out += m.rows(k * n, n);
    }
    out / groups as f64
}

/// Adjoint of [`group_mean`].
pub fn group_spread(g: &DMatrix<f64>, groups: usize) -> DMatrix<f64> {
    if groups == 1 {
        return g.clone();
    }
    let n = g.nrows();
    let mut out = DMatrix::zeros(n * groups, g.ncols());
    for k in 0..groups {
        out.rows_mut(k * n, n).copy_from(&(g / groups as f64));
    }
    out
}
