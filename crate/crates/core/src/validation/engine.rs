//! Cross-validation with a data-pass count independent of the number of folds.
//!
//! Training statistics of every split are assembled from normal-equation
//! accumulators: prefix sums for training data that precedes the validation
//! block, and a global accumulator minus the validation block for
//! cross-validation. No split ever re-runs the reservoir over its training
//! data.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::source::Source;
use super::{
    BetaFit, CvConfig, CvError, CvOutcome, RunCounters, SpaceVariant, Split, SplitOutcome,
    SplitPlan, StepRange,
};
use crate::evaluation::{
    argmax, free_run, nrmse_with_scale, pooled_nrmse, row_std, ErrorReport, TaskData, TaskKind,
};
use crate::regression::{ridge_solve, NormalAccumulator, RegressionError, TrainedReadout};
use crate::reservoir::{column, ReservoirState, ReservoirWeights};

/// Relative diagonal below which a derived accumulator is considered
/// corrupted by cancellation.
const CANCELLATION_TOLERANCE: f64 = -1e-9;

/// Runs every split of `plan` and scores each regularization value of `cfg`.
///
/// The reservoir is driven over the train/validation data once (fold-local
/// variant) or twice (streaming variant), plus one run of each validation
/// range where states are not kept in memory.
pub fn run_efficient_cv(
    weights: &ReservoirWeights,
    data: &TaskData,
    plan: &SplitPlan,
    task: TaskKind,
    cfg: &CvConfig,
) -> Result<CvOutcome, CvError> {
    let ctx = Context::new(weights, data, plan, task, cfg)?;
    match cfg.variant {
        SpaceVariant::FoldLocal => fold_local(&ctx),
        SpaceVariant::Streaming => streaming(&ctx),
    }
}

/// Statistics of every step between the transient and the test block, and
/// for series the reservoir state after the last of them. One data pass.
pub fn trainval_statistics(
    weights: &ReservoirWeights,
    data: &TaskData,
    plan: &SplitPlan,
) -> Result<(NormalAccumulator, Option<ReservoirState>, RunCounters), CvError> {
    let usable = plan.usable();
    if data.len() < usable.end {
        return Err(CvError::DataTooShort {
            plan: usable.end,
            data: data.len(),
        });
    }
    let (source, frames) = Source::prepare(weights, data, usable.end)?;
    let mut acc = NormalAccumulator::new(weights.n_r(), data.n_y());
    let mut st = source.stepper(StepRange::new(0, usable.end), vec![0.0; source.n_x()]);
    while let Some(n) = st.step() {
        if n >= usable.start {
            acc.accumulate(st.v(), st.y())?;
        }
    }
    let counters = RunCounters {
        driven_updates: frames + st.updates,
        free_run_updates: 0,
    };
    let state = source.is_series().then(|| ReservoirState::from_vec(st.into_state()));
    Ok((acc, state, counters))
}

pub(super) struct Context<'a> {
    pub weights: &'a ReservoirWeights,
    pub data: &'a TaskData,
    pub plan: &'a SplitPlan,
    pub task: TaskKind,
    pub cfg: &'a CvConfig,
    /// Per-output target spread over the whole train/validation region.
    pub fallback_std: Option<Vec<f64>>,
}

impl<'a> Context<'a> {
    pub(super) fn new(
        weights: &'a ReservoirWeights,
        data: &'a TaskData,
        plan: &'a SplitPlan,
        task: TaskKind,
        cfg: &'a CvConfig,
    ) -> Result<Self, CvError> {
        if cfg.betas.is_empty() {
            return Err(CvError::NoBetas);
        }
        data.check_kind(task)?;
        if let Some(i) = plan.splits.iter().position(|s| s.train_len() == 0) {
            return Err(CvError::EmptyTraining { split: i });
        }
        let violations = plan.check();
        if !violations.is_empty() {
            return Err(CvError::InvalidPlan(violations));
        }
        if data.len() < plan.total_steps {
            return Err(CvError::DataTooShort {
                plan: plan.total_steps,
                data: data.len(),
            });
        }
        let fallback_std = match data {
            TaskData::Series(s) => {
                let u = plan.usable();
                Some(row_std(&s.target_block(u.start, u.end)))
            }
            TaskData::Sequences(_) => None,
        };
        Ok(Self {
            weights,
            data,
            plan,
            task,
            cfg,
            fallback_std,
        })
    }

    pub(super) fn n_r(&self) -> usize {
        self.weights.n_r()
    }

    pub(super) fn n_y(&self) -> usize {
        self.data.n_y()
    }
}

/// What a split's validation needs besides the trained readouts.
pub(super) enum ValidInput {
    States { x: DMatrix<f64>, y: DMatrix<f64> },
    Seed(ReservoirState),
}

/// Solves for every regularization value and scores it on the validation
/// range. Returns the outcome and the number of free-run updates spent.
pub(super) fn fit_and_score(
    ctx: &Context<'_>,
    index: usize,
    acc: &NormalAccumulator,
    valid: &ValidInput,
) -> Result<(SplitOutcome, u64), CvError> {
    let split = &ctx.plan.splits[index];
    if acc.count() != split.train_len() {
        return Err(CvError::CountMismatch {
            split: index,
            expected: split.train_len(),
            actual: acc.count(),
        });
    }
    let mut free = 0;
    let mut fits = Vec::with_capacity(ctx.cfg.betas.len());
    let mut last_err: Option<RegressionError> = None;
    for &beta in &ctx.cfg.betas {
        match ridge_solve(acc, beta, ctx.cfg.exclude_bias) {
            Ok(readout) => {
                let report = score(ctx, split.valid_range, &readout, valid, &mut free)?;
                fits.push(Ok(BetaFit { readout, report }));
            }
            Err(e) => {
                last_err = Some(e.clone());
                fits.push(Err(e));
            }
        }
    }
    if let (Some(source), false) = (last_err, fits.iter().any(Result::is_ok)) {
        return Err(CvError::AllBetasFailed {
            split: index,
            source,
        });
    }
    Ok((
        SplitOutcome {
            valid_range: split.valid_range,
            train_count: acc.count(),
            fits,
        },
        free,
    ))
}

fn score(
    ctx: &Context<'_>,
    range: StepRange,
    readout: &TrainedReadout,
    valid: &ValidInput,
    free: &mut u64,
) -> Result<ErrorReport, CvError> {
    let fallback = ctx.fallback_std.as_deref();
    match (valid, ctx.data) {
        (ValidInput::Seed(seed), TaskData::Series(task)) => {
            let exogenous = task.input_block(range.start + 1, range.end);
            let pred = free_run(
                ctx.weights,
                readout,
                seed,
                task.input(range.start),
                range.len(),
                task.feedback(),
                Some(&exogenous),
            )?;
            *free += range.len() as u64;
            let target = task.target_block(range.start, range.end);
            Ok(ErrorReport {
                nrmse: nrmse_with_scale(&pred, &target, fallback)?,
                misclassifications: None,
                predictions: None,
            })
        }
        (ValidInput::States { x, y }, _) if ctx.task == TaskKind::Classification => {
            let pred = readout.predict_batch(x);
            let wrong = (0..pred.ncols())
                .filter(|&j| argmax(column(&pred, j)) != argmax(column(y, j)))
                .count();
            Ok(ErrorReport {
                nrmse: pooled_nrmse(&pred, y)?,
                misclassifications: Some(wrong),
                predictions: None,
            })
        }
        (ValidInput::States { x, y }, _) => {
            let pred = readout.predict_batch(x);
            Ok(ErrorReport {
                nrmse: nrmse_with_scale(&pred, y, fallback)?,
                misclassifications: None,
                predictions: None,
            })
        }
        (ValidInput::Seed(_), TaskData::Sequences(_)) => {
            unreachable!("sequence tasks are never free-run")
        }
    }
}

/// How a split's training statistics follow from prefix sums.
#[derive(Debug, Clone, PartialEq)]
enum Recipe {
    /// Training data is everything before `end`.
    PrefixAt(usize),
    /// A single window `[start, end)`.
    PrefixDiff(usize, usize),
    /// Everything except the validation block.
    GlobalMinusValid(StepRange),
    /// Anything else: a sum of windows.
    Ranges(Vec<StepRange>),
}

impl Recipe {
    fn of(split: &Split, usable: StepRange) -> Self {
        let ranges = merged(&split.train_ranges);
        if let [r] = ranges.as_slice() {
            if r.start <= usable.start {
                return Recipe::PrefixAt(r.end);
            }
        }
        let v = split.valid_range;
        let complement: Vec<StepRange> = [
            StepRange::new(usable.start, v.start),
            StepRange::new(v.end, usable.end),
        ]
        .into_iter()
        .filter(|r| !r.is_empty())
        .collect();
        if ranges == complement {
            return Recipe::GlobalMinusValid(v);
        }
        if let [r] = ranges.as_slice() {
            return Recipe::PrefixDiff(r.start, r.end);
        }
        Recipe::Ranges(ranges)
    }

    /// Prefix points the recipe reads.
    fn points(&self) -> Vec<usize> {
        match self {
            Recipe::PrefixAt(a) => vec![*a],
            Recipe::PrefixDiff(a, b) => vec![*a, *b],
            Recipe::GlobalMinusValid(v) => vec![v.start, v.end],
            Recipe::Ranges(rs) => rs.iter().flat_map(|r| [r.start, r.end]).collect(),
        }
    }

    fn subtracts(&self) -> bool {
        !matches!(self, Recipe::PrefixAt(_))
    }

    /// Evaluates the recipe given prefix sums `prefix(p)` = statistics of
    /// `[usable.start, p)` and the global accumulator.
    fn derive<'p>(
        &self,
        global: &NormalAccumulator,
        prefix: impl Fn(usize) -> &'p NormalAccumulator,
    ) -> Result<NormalAccumulator, RegressionError> {
        match self {
            Recipe::PrefixAt(a) => Ok(prefix(*a).clone()),
            Recipe::PrefixDiff(a, b) => prefix(*b).subtract(prefix(*a)),
            Recipe::GlobalMinusValid(v) => {
                let fold = prefix(v.end).subtract(prefix(v.start))?;
                global.subtract(&fold)
            }
            Recipe::Ranges(rs) => {
                let mut acc = NormalAccumulator::new(global.n_r(), global.n_y());
                for r in rs {
                    acc.merge_from(&prefix(r.end).subtract(prefix(r.start))?)?;
                }
                Ok(acc)
            }
        }
    }
}

/// Sorted, coalesced copy of `ranges`.
fn merged(ranges: &[StepRange]) -> Vec<StepRange> {
    let mut rs: Vec<StepRange> = ranges.iter().copied().filter(|r| !r.is_empty()).collect();
    rs.sort_by_key(|r| r.start);
    let mut out: Vec<StepRange> = Vec::with_capacity(rs.len());
    for r in rs {
        match out.last_mut() {
            Some(last) if last.end >= r.start => last.end = last.end.max(r.end),
            _ => out.push(r),
        }
    }
    out
}

fn is_cancelled(acc: &NormalAccumulator) -> bool {
    acc.count() > 0 && acc.min_relative_diagonal() < CANCELLATION_TOLERANCE
}

fn fold_local(ctx: &Context<'_>) -> Result<CvOutcome, CvError> {
    let plan = ctx.plan;
    let usable = plan.usable();
    let (source, mut driven) = Source::prepare(ctx.weights, ctx.data, usable.end)?;
    let (n_r, n_y) = (ctx.n_r(), ctx.n_y());

    let mut cuts = BTreeSet::from([usable.start, usable.end]);
    for s in &plan.splits {
        cuts.extend(s.train_ranges.iter().flat_map(|r| [r.start, r.end]));
        cuts.extend([s.valid_range.start, s.valid_range.end]);
    }
    let cuts: Vec<usize> = cuts.into_iter().collect();
    let generative = ctx.task == TaskKind::Generative;
    let buffered = !generative && source.is_series() && ctx.cfg.store_fold_states;
    let seed_points: BTreeSet<usize> = if source.is_series() && !buffered {
        plan.splits.iter().map(|s| s.valid_range.start).collect()
    } else {
        BTreeSet::new()
    };
    let mut buffers: Vec<(Vec<f64>, Vec<f64>)> = if buffered {
        vec![Default::default(); plan.splits.len()]
    } else {
        Vec::new()
    };

    let mut segments = vec![NormalAccumulator::new(n_r, n_y); cuts.len() - 1];
    let mut seeds: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    if seed_points.contains(&0) {
        seeds.insert(0, vec![0.0; source.n_x()]);
    }
    let mut st = source.stepper(StepRange::new(0, usable.end), vec![0.0; source.n_x()]);
    let mut seg = 0;
    while let Some(n) = st.step() {
        if n >= usable.start {
            while cuts[seg + 1] <= n {
                seg += 1;
            }
            segments[seg].accumulate(st.v(), st.y())?;
        }
        if seed_points.contains(&(n + 1)) {
            seeds.insert(n + 1, st.x().to_vec());
        }
        for (split, (xs, ys)) in plan.splits.iter().zip(buffers.iter_mut()) {
            if split.valid_range.contains(n) {
                xs.extend_from_slice(st.v());
                ys.extend_from_slice(st.y());
            }
        }
    }
    driven += st.updates;
    let end_state = source.is_series().then(|| ReservoirState::from_vec(st.into_state()));
    // Either every split has a buffer or none has.
    let mut buffers = buffers.into_iter();
    let valid_inputs: Vec<Option<ValidInput>> = plan
        .splits
        .iter()
        .map(|split| {
            let v = split.valid_range;
            if let Some((xs, ys)) = buffers.next() {
                Some(ValidInput::States {
                    x: DMatrix::from_vec(n_r, v.len(), xs),
                    y: DMatrix::from_vec(n_y, v.len(), ys),
                })
            } else if generative {
                Some(ValidInput::Seed(ReservoirState::from_vec(seeds[&v.start].clone())))
            } else {
                None
            }
        })
        .collect();

    let mut prefixes = Vec::with_capacity(cuts.len());
    prefixes.push(NormalAccumulator::new(n_r, n_y));
    for s in &segments {
        let next = prefixes[prefixes.len() - 1].merge(s)?;
        prefixes.push(next);
    }
    let global = prefixes[prefixes.len() - 1].clone();
    let cut_index = |p: usize| cuts.binary_search(&p.max(usable.start)).expect("plan cut");
    let sum_segments = |ranges: &[StepRange]| -> Result<NormalAccumulator, RegressionError> {
        let mut acc = NormalAccumulator::new(n_r, n_y);
        for r in ranges {
            for s in &segments[cut_index(r.start)..cut_index(r.end)] {
                acc.merge_from(s)?;
            }
        }
        Ok(acc)
    };

    let results = plan
        .splits
        .par_iter()
        .zip(valid_inputs.into_par_iter())
        .enumerate()
        .map(|(i, (split, stored))| -> Result<(SplitOutcome, u64, u64), CvError> {
            let recipe = Recipe::of(split, usable);
            let mut acc = match &recipe {
                Recipe::Ranges(rs) => sum_segments(rs)?,
                Recipe::GlobalMinusValid(v) => global.subtract(&sum_segments(&[*v])?)?,
                r => r.derive(&global, |p| &prefixes[cut_index(p)])?,
            };
            if recipe.subtracts() && is_cancelled(&acc) {
                log::warn!(
                    "split {i}: cancellation in derived training statistics, rebuilding from segments"
                );
                acc = sum_segments(&split.train_ranges)?;
            }
            let v = split.valid_range;
            let (valid, updates) = match stored {
                Some(valid) => (valid, 0),
                None => {
                    let x0 = seeds.get(&v.start).cloned().unwrap_or_default();
                    let (x, y, updates) = source.collect(v, x0);
                    (ValidInput::States { x, y }, updates)
                }
            };
            let (outcome, free) = fit_and_score(ctx, i, &acc, &valid)?;
            Ok((outcome, updates, free))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut counters = RunCounters {
        driven_updates: driven,
        free_run_updates: 0,
    };
    let mut splits = Vec::with_capacity(results.len());
    for (outcome, updates, free) in results {
        counters.driven_updates += updates;
        counters.free_run_updates += free;
        splits.push(outcome);
    }
    Ok(CvOutcome {
        task: ctx.task,
        betas: ctx.cfg.betas.clone(),
        splits,
        global: Some(global),
        trainval_end_state: end_state,
        counters,
    })
}

/// Per-split bookkeeping of the streaming pass.
struct Pending {
    recipe: Recipe,
    ready_at: usize,
    buffer: Option<(Vec<f64>, Vec<f64>)>,
}

fn streaming(ctx: &Context<'_>) -> Result<CvOutcome, CvError> {
    let plan = ctx.plan;
    let usable = plan.usable();
    let (source, mut driven) = Source::prepare(ctx.weights, ctx.data, usable.end)?;
    let (n_r, n_y) = (ctx.n_r(), ctx.n_y());
    let zero = NormalAccumulator::new(n_r, n_y);

    // First pass: global statistics and the final state.
    let mut global = zero.clone();
    let mut st = source.stepper(StepRange::new(0, usable.end), vec![0.0; source.n_x()]);
    while let Some(n) = st.step() {
        if n >= usable.start {
            global.accumulate(st.v(), st.y())?;
        }
    }
    driven += st.updates;
    let end_state = source.is_series().then(|| ReservoirState::from_vec(st.into_state()));

    let generative = ctx.task == TaskKind::Generative;
    let buffered = !generative && (ctx.cfg.store_fold_states || !source.is_series());
    let mut pending: Vec<Option<Pending>> = Vec::with_capacity(plan.splits.len());
    let mut uses: BTreeMap<usize, usize> = BTreeMap::new();
    for split in &plan.splits {
        let recipe = Recipe::of(split, usable);
        let points: BTreeSet<usize> = recipe
            .points()
            .into_iter()
            .filter(|&p| p > usable.start)
            .collect();
        for &p in &points {
            *uses.entry(p).or_default() += 1;
        }
        let ready_at = points
            .iter()
            .copied()
            .chain([split.valid_range.end])
            .max()
            .unwrap_or(0);
        pending.push(Some(Pending {
            recipe,
            ready_at,
            buffer: buffered.then(Default::default),
        }));
    }
    let seed_points: BTreeSet<usize> = if source.is_series() && !buffered {
        plan.splits.iter().map(|s| s.valid_range.start).collect()
    } else {
        BTreeSet::new()
    };
    let horizon = pending.iter().flatten().map(|p| p.ready_at).max().unwrap_or(0);

    // Second pass: running prefix, snapshots where recipes need them, and
    // evaluation of each split as soon as its data has streamed past.
    let mut prefix = zero.clone();
    let mut snapshots: BTreeMap<usize, NormalAccumulator> = BTreeMap::new();
    let mut seeds: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    if seed_points.contains(&0) {
        seeds.insert(0, vec![0.0; source.n_x()]);
    }
    let mut outcomes: Vec<Option<SplitOutcome>> = vec![None; plan.splits.len()];
    let mut deferred: Vec<(usize, NormalAccumulator)> = Vec::new();
    let mut free_total = 0;
    let mut st = source.stepper(StepRange::new(0, horizon), vec![0.0; source.n_x()]);
    while let Some(n) = st.step() {
        if usable.contains(n) {
            prefix.accumulate(st.v(), st.y())?;
        }
        let next = n + 1;
        if uses.contains_key(&next) {
            snapshots.insert(next, prefix.clone());
        }
        if seed_points.contains(&next) {
            seeds.insert(next, st.x().to_vec());
        }
        for (i, slot) in pending.iter_mut().enumerate() {
            let Some(p) = slot else { continue };
            if let Some((xs, ys)) = &mut p.buffer {
                if plan.splits[i].valid_range.contains(n) {
                    xs.extend_from_slice(st.v());
                    ys.extend_from_slice(st.y());
                }
            }
            if p.ready_at != next {
                continue;
            }
            let p = slot.take().expect("pending split");
            let acc = p.recipe.derive(&global, |q| {
                if q <= usable.start {
                    &zero
                } else {
                    &snapshots[&q]
                }
            })?;
            if p.recipe.subtracts() && is_cancelled(&acc) {
                log::warn!("split {i}: cancellation in derived training statistics");
            }
            for q in p.recipe.points() {
                if let Some(c) = uses.get_mut(&q) {
                    *c -= 1;
                    if *c == 0 {
                        uses.remove(&q);
                        snapshots.remove(&q);
                    }
                }
            }
            let v = plan.splits[i].valid_range;
            let valid = match p.buffer {
                Some((xs, ys)) => ValidInput::States {
                    x: DMatrix::from_vec(n_r, v.len(), xs),
                    y: DMatrix::from_vec(n_y, v.len(), ys),
                },
                None if generative => {
                    ValidInput::Seed(ReservoirState::from_vec(seeds[&v.start].clone()))
                }
                None => {
                    deferred.push((i, acc));
                    continue;
                }
            };
            let (outcome, free) = fit_and_score(ctx, i, &acc, &valid)?;
            free_total += free;
            outcomes[i] = Some(outcome);
        }
    }
    driven += st.updates;

    // Third pass, only when validation states were not kept: each
    // validation range once more from its stored seed state.
    let results = deferred
        .into_par_iter()
        .map(|(i, acc)| -> Result<(usize, SplitOutcome, u64, u64), CvError> {
            let v = plan.splits[i].valid_range;
            let (x, y, updates) = source.collect(v, seeds[&v.start].clone());
            let (outcome, free) = fit_and_score(ctx, i, &acc, &ValidInput::States { x, y })?;
            Ok((i, outcome, updates, free))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (i, outcome, updates, free) in results {
        driven += updates;
        free_total += free;
        outcomes[i] = Some(outcome);
    }

    Ok(CvOutcome {
        task: ctx.task,
        betas: ctx.cfg.betas.clone(),
        splits: outcomes
            .into_iter()
            .map(|o| o.expect("every split is evaluated"))
            .collect(),
        global: Some(global),
        trainval_end_state: end_state,
        counters: RunCounters {
            driven_updates: driven,
            free_run_updates: free_total,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(a: usize, b: usize) -> StepRange {
        StepRange::new(a, b)
    }

    fn split(train: &[(usize, usize)], valid: (usize, usize)) -> Split {
        Split {
            train_ranges: train.iter().map(|&(a, b)| r(a, b)).collect(),
            valid_range: r(valid.0, valid.1),
        }
    }

    #[test]
    fn recipes_follow_split_geometry() {
        let u = r(10, 100);
        assert_eq!(
            Recipe::of(&split(&[(10, 40), (60, 100)], (40, 60)), u),
            Recipe::GlobalMinusValid(r(40, 60))
        );
        assert_eq!(
            Recipe::of(&split(&[(60, 100)], (10, 60)), u),
            Recipe::GlobalMinusValid(r(10, 60))
        );
        assert_eq!(Recipe::of(&split(&[(10, 80)], (80, 90)), u), Recipe::PrefixAt(80));
        assert_eq!(
            Recipe::of(&split(&[(30, 80)], (80, 90)), u),
            Recipe::PrefixDiff(30, 80)
        );
        assert_eq!(
            Recipe::of(&split(&[(20, 30), (50, 60)], (70, 80)), u),
            Recipe::Ranges(vec![r(20, 30), r(50, 60)])
        );
    }

    #[test]
    fn merged_coalesces_touching_ranges() {
        assert_eq!(
            merged(&[r(5, 8), r(0, 3), r(3, 5), r(9, 9)]),
            vec![r(0, 8)]
        );
    }
}
