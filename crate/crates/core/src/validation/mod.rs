//! Validation schemes and the cross-validation engines.
//!
//! [`plan_splits`] lays out the folds. [`run_efficient_cv`] runs the reservoir
//! over the data a constant number of times, independent of `k`, and derives
//! every split's training statistics by merging and subtracting normal
//! accumulators. [`run_naive_cv`] retrains every split from scratch and
//! serves as the reference and benchmark baseline.

mod engine;
mod naive;
mod plan;
mod source;

use thiserror::Error;

use crate::evaluation::{ErrorReport, EvalError, TaskKind};
use crate::regression::{RegressionError, TrainedReadout};
use crate::reservoir::{ReservoirError, ReservoirState};

pub use engine::{run_efficient_cv, trainval_statistics};
pub use naive::{run_naive_cv, run_naive_cv_subset};
pub use plan::{
    plan_splits, tiling_transient, PlanError, PlanRequest, PlanViolation, SchemeFamily,
    SchemeKind, Split, SplitPlan, StepRange,
};

use crate::regression::NormalAccumulator;
use crate::ErrorCategory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CvError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("plan violates its invariants: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<PlanViolation>),
    #[error("plan covers {plan} steps but the data has {data}")]
    DataTooShort { plan: usize, data: usize },
    #[error("split {split} has no training data")]
    EmptyTraining { split: usize },
    #[error("split {split}: derived training statistics hold {actual} steps, plan expects {expected}")]
    CountMismatch {
        split: usize,
        expected: usize,
        actual: usize,
    },
    #[error("split {split}: every regularization value failed: {source}")]
    AllBetasFailed {
        split: usize,
        source: RegressionError,
    },
    #[error("the regularization grid is empty")]
    NoBetas,
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
}

impl CvError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            CvError::Regression(_) | CvError::AllBetasFailed { .. } => ErrorCategory::Numerical,
            CvError::Eval(_) | CvError::DataTooShort { .. } => ErrorCategory::Data,
            CvError::Reservoir(e) => crate::reservoir_category(e),
            _ => ErrorCategory::Config,
        }
    }
}

/// Where the efficient engine keeps its intermediate statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpaceVariant {
    /// One accumulator per plan segment, filled in a single data pass.
    #[default]
    FoldLocal,
    /// Only a handful of live accumulators; a second data pass subtracts on the fly.
    Streaming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub betas: Vec<f64>,
    /// Leave the bias weight unregularized.
    pub exclude_bias: bool,
    pub variant: SpaceVariant,
    /// Keep validation-range states in memory instead of running those
    /// ranges again. Ignored for generative tasks, which free-run instead.
    pub store_fold_states: bool,
}

impl CvConfig {
    pub fn new(betas: Vec<f64>) -> Self {
        Self {
            betas,
            exclude_bias: true,
            variant: SpaceVariant::FoldLocal,
            store_fold_states: true,
        }
    }

    pub fn with_variant(mut self, variant: SpaceVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_exclude_bias(mut self, exclude: bool) -> Self {
        self.exclude_bias = exclude;
        self
    }

    pub fn with_store_fold_states(mut self, store: bool) -> Self {
        self.store_fold_states = store;
        self
    }
}

/// Reservoir update counts of one engine run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunCounters {
    /// Updates driven by data (teacher forced, or sequence feature runs).
    pub driven_updates: u64,
    /// Closed-loop updates of generative validation.
    pub free_run_updates: u64,
}

impl RunCounters {
    pub fn total(&self) -> u64 {
        self.driven_updates + self.free_run_updates
    }
}

impl std::ops::AddAssign for RunCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.driven_updates += rhs.driven_updates;
        self.free_run_updates += rhs.free_run_updates;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaFit {
    pub readout: TrainedReadout,
    pub report: ErrorReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub valid_range: StepRange,
    pub train_count: usize,
    /// One entry per regularization value, in grid order.
    pub fits: Vec<Result<BetaFit, RegressionError>>,
}

impl SplitOutcome {
    /// Validation NRMSE at grid index `b`; infinite when the solve failed.
    pub fn error(&self, b: usize) -> f64 {
        match &self.fits[b] {
            Ok(f) => f.report.nrmse,
            Err(_) => f64::INFINITY,
        }
    }

    pub fn readout(&self, b: usize) -> Option<&TrainedReadout> {
        self.fits[b].as_ref().ok().map(|f| &f.readout)
    }

    /// Grid index with the lowest validation error; ties go to the first.
    pub fn best_beta_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for b in 0..self.fits.len() {
            let e = self.error(b);
            if e.is_finite() && best.is_none_or(|i| e < self.error(i)) {
                best = Some(b);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub task: TaskKind,
    pub betas: Vec<f64>,
    pub splits: Vec<SplitOutcome>,
    /// Statistics over all training and validation steps, when computed.
    pub global: Option<NormalAccumulator>,
    /// Reservoir state after the last pre-test step, for series tasks.
    pub trainval_end_state: Option<ReservoirState>,
    pub counters: RunCounters,
}

impl CvOutcome {
    /// Mean validation error over splits at grid index `b`.
    pub fn mean_error(&self, b: usize) -> f64 {
        self.splits.iter().map(|s| s.error(b)).sum::<f64>() / self.splits.len() as f64
    }
}
