use thiserror::Error;

use crate::imaging::{Mask, Perturbation};
use crate::maskgen::HeatmapResult;
use crate::survivability::SurvivabilityEstimate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Best-so-far state attached to a budget-exceeded error.
#[derive(Debug, Clone)]
pub enum Partial {
    /// An estimate over fewer transforms than requested.
    Estimate(SurvivabilityEstimate),
    /// A heatmap whose tail patches were never evaluated.
    Heatmap(HeatmapResult),
    Mask { mask: Mask, survivability: f64 },
    Perturbation { delta: Perturbation, survivability: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate transform: {0}")]
    TransformDegenerate(String),

    #[error("query budget exceeded: {spent} of {budget} queries spent")]
    BudgetExceeded {
        spent: u64,
        budget: u64,
        partial: Option<Box<Partial>>,
    },

    #[error("oracle i/o: {0}")]
    OracleIo(String),

    #[error("oracle protocol: {0}")]
    Protocol(String),

    #[error("initialization failure: {0}")]
    InitializationFailure(String),

    #[error("config: {0}")]
    Config(String),

    #[error("png: {0}")]
    Png(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Replaces the partial state carried by a budget error; other errors pass through.
    pub fn with_partial(self, state: Partial) -> Self {
        match self {
            Error::BudgetExceeded { spent, budget, .. } => Error::BudgetExceeded {
                spent,
                budget,
                partial: Some(Box::new(state)),
            },
            other => other,
        }
    }

    pub fn is_budget_exceeded(&self) -> bool {
        matches!(self, Error::BudgetExceeded { .. })
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BudgetExceeded { .. } => 2,
            Error::InitializationFailure(_) => 3,
            Error::OracleIo(_) | Error::Protocol(_) => 4,
            _ => 1,
        }
    }
}
