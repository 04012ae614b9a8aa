//! Echo state networks with time-series validation schemes and fast
//! cross-validation.
//!
//! The pieces fit together as follows:
//! - [`reservoir`]: random reservoirs and their state updates
//! - [`regression`]: ridge readouts from normal-equation accumulators
//! - [`validation`]: fold plans plus efficient and naive engines
//! - [`evaluation`]: task data, metrics, free runs and classification
//! - [`search`]: grid search over reservoir and ridge hyper-parameters
//! - [`datasets`]: loading, normalization and experiment presets

pub mod datasets;
pub mod evaluation;
pub mod regression;
pub mod reservoir;
pub mod search;
pub mod validation;

pub use evaluation::{ErrorReport, FeatureMode, SeriesTask, SequenceTask, TaskData, TaskKind};
pub use regression::{ridge_solve, NormalAccumulator, TrainedReadout};
pub use reservoir::{generate_reservoir, ReservoirParams, ReservoirState, ReservoirWeights};
pub use validation::{
    plan_splits, run_efficient_cv, run_naive_cv, CvConfig, CvOutcome, PlanRequest, SchemeKind,
    SpaceVariant, SplitPlan,
};

use thiserror::Error;

/// Broad class of a failure, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad parameters, plans or configuration.
    Config,
    /// Malformed or unsuitable data.
    Data,
    /// A linear system could not be solved reliably.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Reservoir(#[from] reservoir::ReservoirError),
    #[error(transparent)]
    Regression(#[from] regression::RegressionError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Cv(#[from] validation::CvError),
    #[error(transparent)]
    Plan(#[from] validation::PlanError),
    #[error(transparent)]
    Dataset(#[from] datasets::DatasetError),
    #[error(transparent)]
    Search(#[from] search::SearchError),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Reservoir(e) => reservoir_category(e),
            Error::Regression(_) => ErrorCategory::Numerical,
            Error::Eval(_) | Error::Dataset(_) => ErrorCategory::Data,
            Error::Plan(_) => ErrorCategory::Config,
            Error::Search(e) => e.category(),
            Error::Cv(e) => e.category(),
        }
    }
}

pub(crate) fn reservoir_category(e: &reservoir::ReservoirError) -> ErrorCategory {
    match e {
        reservoir::ReservoirError::SpectralRadius(_) => ErrorCategory::Numerical,
        reservoir::ReservoirError::EmptyInput => ErrorCategory::Data,
        _ => ErrorCategory::Config,
    }
}
