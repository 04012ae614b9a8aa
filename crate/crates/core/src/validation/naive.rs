//! Reference cross-validation: every split starts from the zero state and
//! collects its own training states, as a straightforward implementation
//! would.

use nalgebra::DMatrix;

use super::engine::{fit_and_score, Context, ValidInput};
use super::source::Source;
use super::{CvConfig, CvError, CvOutcome, RunCounters, SplitPlan, StepRange};
use crate::evaluation::{TaskData, TaskKind};
use crate::regression::NormalAccumulator;
use crate::reservoir::{ReservoirState, ReservoirWeights};

pub fn run_naive_cv(
    weights: &ReservoirWeights,
    data: &TaskData,
    plan: &SplitPlan,
    task: TaskKind,
    cfg: &CvConfig,
) -> Result<CvOutcome, CvError> {
    let all: Vec<usize> = (0..plan.splits.len()).collect();
    run_naive_cv_subset(weights, data, plan, task, cfg, &all)
}

/// Like [`run_naive_cv`] but only for the listed splits, in the given order.
/// Useful to time a sample of splits when the full run would be too slow.
pub fn run_naive_cv_subset(
    weights: &ReservoirWeights,
    data: &TaskData,
    plan: &SplitPlan,
    task: TaskKind,
    cfg: &CvConfig,
    indices: &[usize],
) -> Result<CvOutcome, CvError> {
    let ctx = Context::new(weights, data, plan, task, cfg)?;
    let mut counters = RunCounters::default();
    let mut splits = Vec::with_capacity(indices.len());
    for &i in indices {
        let split = &plan.splits[i];
        let end = split.end();
        let (source, frames) = Source::prepare(weights, data, end)?;
        counters.driven_updates += frames;

        let train_len = split.train_len();
        let mut xs = DMatrix::zeros(ctx.n_r(), train_len);
        let mut ys = DMatrix::zeros(ctx.n_y(), train_len);
        let mut xv = DMatrix::zeros(ctx.n_r(), split.valid_range.len());
        let mut yv = DMatrix::zeros(ctx.n_y(), split.valid_range.len());
        let mut seed = vec![0.0; source.n_x()];
        let v = split.valid_range;
        let mut col = 0;
        let mut st = source.stepper(StepRange::new(0, end), vec![0.0; source.n_x()]);
        while let Some(n) = st.step() {
            if split.train_ranges.iter().any(|r| r.contains(n)) {
                xs.column_mut(col).copy_from_slice(st.v());
                ys.column_mut(col).copy_from_slice(st.y());
                col += 1;
            }
            if v.contains(n) {
                xv.column_mut(n - v.start).copy_from_slice(st.v());
                yv.column_mut(n - v.start).copy_from_slice(st.y());
            }
            if n + 1 == v.start {
                seed = st.x().to_vec();
            }
        }
        counters.driven_updates += st.updates;

        let acc = NormalAccumulator::from_batch(&xs.columns(0, col).into_owned(), &ys.columns(0, col).into_owned())?;
        let valid = if task == TaskKind::Generative {
            ValidInput::Seed(ReservoirState::from_vec(seed))
        } else {
            ValidInput::States { x: xv, y: yv }
        };
        let (outcome, free) = fit_and_score(&ctx, i, &acc, &valid)?;
        counters.free_run_updates += free;
        splits.push(outcome);
    }
    Ok(CvOutcome {
        task,
        betas: cfg.betas.clone(),
        splits,
        global: None,
        trainval_end_state: None,
        counters,
    })
}
