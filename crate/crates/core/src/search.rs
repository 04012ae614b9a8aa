//! Grid search over reservoir hyper-parameters with the ridge parameter
//! searched innermost, and the final model strategies.
//!
//! Each `(seed, leaking rate, spectral radius)` candidate builds one
//! reservoir and runs the cross-validation engine once; every ridge value is
//! then only a linear solve on the per-split statistics.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::evaluation::{
    classify_sequences, free_run, nrmse_with_scale, pooled_nrmse, row_std, ErrorReport, EvalError,
    TaskData, TaskKind,
};
use crate::regression::{ridge_solve, RegressionError, TrainedReadout};
use crate::reservoir::{generate_reservoir, ReservoirError, ReservoirParams, ReservoirState, ReservoirWeights};
use crate::validation::{
    run_efficient_cv, trainval_statistics, CvConfig, CvError, CvOutcome, RunCounters,
    SchemeFamily, SchemeKind, SpaceVariant, SplitPlan, StepRange,
};
use crate::ErrorCategory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("every candidate failed:\n{}", .0.join("\n"))]
    AllCandidatesFailed(Vec<String>),
    #[error("{0} finalization needs a static split plan")]
    NotStatic(FinalizeMode),
    #[error("the test range is empty")]
    EmptyTest,
    #[error("no usable readout for split {split}")]
    MissingReadout { split: usize },
    #[error(transparent)]
    Cv(#[from] CvError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
}

impl SearchError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            SearchError::InvalidSpace(_) | SearchError::NotStatic(_) | SearchError::EmptyTest => {
                ErrorCategory::Config
            }
            SearchError::AllCandidatesFailed(_)
            | SearchError::MissingReadout { .. }
            | SearchError::Regression(_) => ErrorCategory::Numerical,
            SearchError::Eval(_) => ErrorCategory::Data,
            SearchError::Cv(e) => e.category(),
            SearchError::Reservoir(e) => crate::reservoir_category(e),
        }
    }
}

/// Hyper-parameter grid. The reservoir size is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub n_x: usize,
    pub leaking_rates: Vec<f64>,
    pub spectral_radii: Vec<f64>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub input_scaling: f64,
    /// Recurrent connection density; `None` uses the reservoir default.
    pub density: Option<f64>,
}

impl SearchSpace {
    pub fn new(n_x: usize, leaking_rates: Vec<f64>, spectral_radii: Vec<f64>, betas: Vec<f64>) -> Self {
        Self {
            n_x,
            leaking_rates,
            spectral_radii,
            betas,
            seeds: vec![0],
            input_scaling: 1.0,
            density: None,
        }
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidSpace(m));
        for (name, len) in [
            ("leaking rates", self.leaking_rates.len()),
            ("spectral radii", self.spectral_radii.len()),
            ("betas", self.betas.len()),
            ("seeds", self.seeds.len()),
        ] {
            if len == 0 {
                return bad(format!("no {name}"));
            }
        }
        if let Some(b) = self.betas.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return bad(format!("beta {b} must be finite and non-negative"));
        }
        for c in self.candidates() {
            self.params(&c, 1, 1)
                .validate()
                .map_err(|e| SearchError::InvalidSpace(e.to_string()))?;
        }
        Ok(())
    }

    /// Candidates in search order: seeds, then leaking rates, then spectral
    /// radii, each ascending.
    pub fn candidates(&self) -> Vec<Candidate> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        let alphas = sorted(&self.leaking_rates);
        let rhos = sorted(&self.spectral_radii);
        let mut out = Vec::new();
        for &seed in &seeds {
            for &leaking_rate in &alphas {
                for &spectral_radius in &rhos {
                    out.push(Candidate {
                        seed,
                        leaking_rate,
                        spectral_radius,
                    });
                }
            }
        }
        out
    }

    pub fn params(&self, c: &Candidate, n_u: usize, n_y: usize) -> ReservoirParams {
        let p = ReservoirParams::new(self.n_x, n_u, n_y)
            .with_leaking_rate(c.leaking_rate)
            .with_spectral_radius(c.spectral_radius)
            .with_input_scaling(self.input_scaling)
            .with_seed(c.seed);
        match self.density {
            Some(d) => p.with_density(d),
            None => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub seed: u64,
    pub leaking_rate: f64,
    pub spectral_radius: f64,
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed={} alpha={} rho={}",
            self.seed, self.leaking_rate, self.spectral_radius
        )
    }
}

/// How errors of the splits combine into one candidate score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub variant: SpaceVariant,
    pub store_fold_states: bool,
    pub exclude_bias: bool,
    /// Pick the ridge value per split instead of one for all splits.
    pub ireg: bool,
    pub aggregate: Aggregate,
    /// Worker cap for the candidate map; `None` uses all cores.
    pub threads: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            variant: SpaceVariant::FoldLocal,
            store_fold_states: true,
            exclude_bias: true,
            ireg: false,
            aggregate: Aggregate::Mean,
            threads: None,
        }
    }
}

/// Validation results of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    /// `split_errors[i][b]`: split `i`, ridge value `b`.
    pub split_errors: Vec<Vec<f64>>,
    /// Aggregated error per ridge value.
    pub beta_errors: Vec<f64>,
    /// Ridge value with the lowest aggregated error.
    pub best_beta: usize,
    /// Each split's own best ridge value.
    pub split_best_betas: Vec<Option<usize>>,
    /// The candidate's score: aggregated error at `best_beta`, or of the
    /// per-split minima under per-split ridge selection.
    pub score: f64,
    pub counters: RunCounters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub candidate: Candidate,
    pub scores: Result<CandidateScores, String>,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub candidates: Vec<CandidateResult>,
    pub best: usize,
    pub weights: ReservoirWeights,
    pub outcome: CvOutcome,
    /// Reservoir updates summed over all candidates.
    pub counters: RunCounters,
}

impl SearchResult {
    pub fn best_candidate(&self) -> &Candidate {
        &self.candidates[self.best].candidate
    }

    pub fn best_scores(&self) -> &CandidateScores {
        self.candidates[self.best]
            .scores
            .as_ref()
            .expect("the best candidate succeeded")
    }

    /// Validation error of the selected candidate.
    pub fn valid_error(&self) -> f64 {
        self.best_scores().score
    }
}

fn aggregate(values: &[f64], how: Aggregate) -> f64 {
    match how {
        Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregate::Median => {
            let mut v = values.to_vec();
            v.sort_by(f64::total_cmp);
            let m = v.len() / 2;
            if v.len() % 2 == 1 {
                v[m]
            } else {
                (v[m - 1] + v[m]) / 2.0
            }
        }
    }
}

/// Index of the smallest finite value; ties go to the first.
fn first_min(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn score_outcome(outcome: &CvOutcome, opts: &SearchOptions) -> Result<CandidateScores, String> {
    let n_b = outcome.betas.len();
    let split_errors: Vec<Vec<f64>> = outcome
        .splits
        .iter()
        .map(|s| (0..n_b).map(|b| s.error(b)).collect())
        .collect();
    let beta_errors: Vec<f64> = (0..n_b)
        .map(|b| {
            let col: Vec<f64> = split_errors.iter().map(|e| e[b]).collect();
            aggregate(&col, opts.aggregate)
        })
        .collect();
    let split_best_betas: Vec<Option<usize>> = split_errors.iter().map(|e| first_min(e)).collect();
    let best_beta = first_min(&beta_errors)
        .ok_or_else(|| "no ridge value is solvable on every split".to_string())?;
    let score = if opts.ireg {
        let minima: Vec<f64> = split_errors
            .iter()
            .zip(&split_best_betas)
            .map(|(e, b)| b.map_or(f64::INFINITY, |b| e[b]))
            .collect();
        aggregate(&minima, opts.aggregate)
    } else {
        beta_errors[best_beta]
    };
    if !score.is_finite() {
        return Err("validation error is not finite".into());
    }
    Ok(CandidateScores {
        split_errors,
        beta_errors,
        best_beta,
        split_best_betas,
        score,
        counters: outcome.counters,
    })
}

type Evaluated = (CandidateResult, Option<(ReservoirWeights, CvOutcome)>);

fn evaluate_candidate(
    space: &SearchSpace,
    c: Candidate,
    data: &TaskData,
    plan: &SplitPlan,
    task: TaskKind,
    opts: &SearchOptions,
) -> Evaluated {
    let cfg = CvConfig {
        betas: space.betas.clone(),
        exclude_bias: opts.exclude_bias,
        variant: opts.variant,
        store_fold_states: opts.store_fold_states,
    };
    let run = || -> Result<(ReservoirWeights, CvOutcome), String> {
        let weights = generate_reservoir(&space.params(&c, data.n_u(), data.n_y()))
            .map_err(|e| e.to_string())?;
        let outcome = run_efficient_cv(&weights, data, plan, task, &cfg).map_err(|e| e.to_string())?;
        Ok((weights, outcome))
    };
    match run().and_then(|(w, o)| score_outcome(&o, opts).map(|s| (w, o, s))) {
        Ok((w, o, s)) => (
            CandidateResult {
                candidate: c,
                scores: Ok(s),
            },
            Some((w, o)),
        ),
        Err(e) => {
            log::warn!("candidate {c} failed: {e}");
            (
                CandidateResult {
                    candidate: c,
                    scores: Err(e),
                },
                None,
            )
        }
    }
}

/// Errors that make every candidate fail the same way are reported directly
/// rather than as a list of candidate failures.
fn precheck(space: &SearchSpace, data: &TaskData, plan: &SplitPlan, task: TaskKind) -> Result<(), SearchError> {
    space.validate()?;
    data.check_kind(task)?;
    if let Some(i) = plan.splits.iter().position(|s| s.train_len() == 0) {
        return Err(CvError::EmptyTraining { split: i }.into());
    }
    let violations = plan.check();
    if !violations.is_empty() {
        return Err(CvError::InvalidPlan(violations).into());
    }
    if data.len() < plan.total_steps {
        return Err(CvError::DataTooShort {
            plan: plan.total_steps,
            data: data.len(),
        }
        .into());
    }
    Ok(())
}

/// Scores every candidate of `space` and keeps the best one, together with
/// its reservoir and cross-validation outcome for finalization.
pub fn grid_search(
    space: &SearchSpace,
    data: &TaskData,
    plan: &SplitPlan,
    task: TaskKind,
    opts: &SearchOptions,
) -> Result<SearchResult, SearchError> {
    precheck(space, data, plan, task)?;
    let candidates = space.candidates();
    let work = || {
        candidates
            .par_iter()
            .map(|&c| {
                let (result, kept) = evaluate_candidate(space, c, data, plan, task, opts);
                let score = result.scores.as_ref().map_or(f64::INFINITY, |s| s.score);
                (vec![result], kept.map(|k| (score, k)))
            })
            .reduce(
                || (Vec::new(), None),
                |(mut left, lbest), (right, rbest)| {
                    left.extend(right);
                    // The left side comes first in search order and wins ties.
                    let best = match (lbest, rbest) {
                        (Some(l), Some(r)) => Some(if r.0 < l.0 { r } else { l }),
                        (l, r) => l.or(r),
                    };
                    (left, best)
                },
            )
    };
    let (results, best) = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| SearchError::InvalidSpace(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut counters = RunCounters::default();
    for r in &results {
        if let Ok(s) = &r.scores {
            counters += s.counters;
        }
    }
    let Some((score, (weights, outcome))) = best else {
        return Err(SearchError::AllCandidatesFailed(
            results
                .iter()
                .map(|r| format!("{}: {}", r.candidate, r.scores.as_ref().err().cloned().unwrap_or_default()))
                .collect(),
        ));
    };
    let best_index = results
        .iter()
        .position(|r| r.scores.as_ref().is_ok_and(|s| s.score == score))
        .expect("best candidate is among the results");
    Ok(SearchResult {
        candidates: results,
        best: best_index,
        weights,
        outcome,
        counters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalizeMode {
    /// Use the single validated model unchanged; static split only.
    AsIs,
    /// Retrain on all training and validation data.
    Retrain,
    /// Average the readouts of all splits.
    Average,
    /// Take the readout of the split that validated best.
    Best,
}

impl FinalizeMode {
    pub const ALL: [FinalizeMode; 4] = [
        FinalizeMode::AsIs,
        FinalizeMode::Retrain,
        FinalizeMode::Average,
        FinalizeMode::Best,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FinalizeMode::AsIs => "as-is",
            FinalizeMode::Retrain => "retrain",
            FinalizeMode::Average => "average",
            FinalizeMode::Best => "best",
        }
    }
}

impl fmt::Display for FinalizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FinalizeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "asis" => Ok(FinalizeMode::AsIs),
            "retrain" | "retrained" => Ok(FinalizeMode::Retrain),
            "average" | "averaged" => Ok(FinalizeMode::Average),
            "best" => Ok(FinalizeMode::Best),
            _ => Err(format!("unknown finalize mode {s:?}")),
        }
    }
}

/// Builds the final readout from a cross-validation outcome.
///
/// With `ireg`, each split uses its own best ridge value, and retraining
/// uses the mean of those values.
pub fn finalize(
    mode: FinalizeMode,
    ireg: bool,
    outcome: &CvOutcome,
    weights: &ReservoirWeights,
    data: &TaskData,
    plan: &SplitPlan,
) -> Result<TrainedReadout, SearchError> {
    let opts = SearchOptions {
        ireg,
        ..Default::default()
    };
    let scores = score_outcome(outcome, &opts).map_err(|e| SearchError::AllCandidatesFailed(vec![e]))?;
    let beta_of = |i: usize| {
        if ireg {
            scores.split_best_betas[i]
        } else {
            Some(scores.best_beta)
        }
    };
    let readout_of = |i: usize| -> Result<&TrainedReadout, SearchError> {
        beta_of(i)
            .and_then(|b| outcome.splits[i].readout(b))
            .ok_or(SearchError::MissingReadout { split: i })
    };
    match mode {
        FinalizeMode::AsIs => {
            if plan.scheme != SchemeKind::Sv || outcome.splits.len() != 1 {
                return Err(SearchError::NotStatic(mode));
            }
            Ok(readout_of(0)?.clone())
        }
        FinalizeMode::Retrain => {
            let beta = if ireg {
                let chosen: Vec<f64> = scores
                    .split_best_betas
                    .iter()
                    .flatten()
                    .map(|&b| outcome.betas[b])
                    .collect();
                chosen.iter().sum::<f64>() / chosen.len() as f64
            } else {
                outcome.betas[scores.best_beta]
            };
            let global = match &outcome.global {
                Some(g) => g.clone(),
                None => trainval_statistics(weights, data, plan)?.0,
            };
            Ok(ridge_solve(&global, beta, true)?)
        }
        FinalizeMode::Average => {
            if plan.scheme.family() == SchemeFamily::Accumulative {
                log::warn!("averaging readouts trained on different amounts of data");
            }
            let readouts = (0..outcome.splits.len())
                .map(readout_of)
                .collect::<Result<Vec<_>, _>>()?;
            TrainedReadout::average(&readouts).ok_or(SearchError::MissingReadout { split: 0 })
        }
        FinalizeMode::Best => {
            let errors: Vec<f64> = (0..outcome.splits.len())
                .map(|i| beta_of(i).map_or(f64::INFINITY, |b| outcome.splits[i].error(b)))
                .collect();
            let i = first_min(&errors).ok_or(SearchError::MissingReadout { split: 0 })?;
            Ok(readout_of(i)?.clone())
        }
    }
}

/// Scores `readout` on the test block, the only place test data is read.
///
/// Series tasks continue from `end_state`, the reservoir state after the
/// last pre-test step; it is recomputed when not given. Generative tasks run
/// freely over the whole test block.
pub fn evaluate_test(
    weights: &ReservoirWeights,
    readout: &TrainedReadout,
    data: &TaskData,
    plan: &SplitPlan,
    task: TaskKind,
    end_state: Option<&ReservoirState>,
) -> Result<ErrorReport, SearchError> {
    let test: StepRange = plan.test_range();
    if test.is_empty() {
        return Err(SearchError::EmptyTest);
    }
    data.check_kind(task)?;
    if data.len() < test.end {
        return Err(CvError::DataTooShort {
            plan: test.end,
            data: data.len(),
        }
        .into());
    }
    match data {
        TaskData::Series(series) => {
            let computed;
            let seed = match end_state {
                Some(s) => s,
                None => {
                    computed = trainval_statistics(weights, data, plan)?
                        .1
                        .expect("series tasks have a state");
                    &computed
                }
            };
            let usable = plan.usable();
            let fallback = row_std(&series.target_block(usable.start, usable.end));
            let pred = if task == TaskKind::Generative {
                let exogenous = series.input_block(test.start + 1, test.end);
                free_run(
                    weights,
                    readout,
                    seed,
                    series.input(test.start),
                    test.len(),
                    series.feedback(),
                    Some(&exogenous),
                )?
            } else {
                let mut collector = crate::reservoir::MatrixCollector::new();
                crate::reservoir::run_sequence(
                    weights,
                    seed,
                    (test.start..test.end).map(|n| series.input(n)),
                    &mut collector,
                )?;
                readout.predict_batch(&collector.into_matrix())
            };
            let target = series.target_block(test.start, test.end);
            Ok(ErrorReport {
                nrmse: nrmse_with_scale(&pred, &target, Some(&fallback))?,
                misclassifications: None,
                predictions: Some(pred),
            })
        }
        TaskData::Sequences(seqs) => {
            let sequences: Vec<_> = (test.start..test.end).map(|i| seqs.sequence(i).clone()).collect();
            let truth: Vec<usize> = (test.start..test.end).map(|i| seqs.label(i)).collect();
            let mode = seqs.feature_mode();
            let class = classify_sequences(weights, readout, &sequences, Some(&truth), mode)?;
            let mut pred = nalgebra::DMatrix::zeros(seqs.n_classes(), sequences.len());
            let mut target = nalgebra::DMatrix::zeros(seqs.n_classes(), sequences.len());
            for (j, seq) in sequences.iter().enumerate() {
                let v = crate::evaluation::sequence_features(weights, seq, mode)?;
                pred.column_mut(j).copy_from_slice(readout.predict(v.as_slice()).as_slice());
                target[(truth[j], j)] = 1.0;
            }
            Ok(ErrorReport {
                nrmse: pooled_nrmse(&pred, &target)?,
                misclassifications: class.misclassifications,
                predictions: Some(pred),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_order_is_seed_alpha_rho() {
        let space = SearchSpace::new(10, vec![0.5, 0.1], vec![1.1, 0.9], vec![1e-6]).with_seeds(vec![2, 1]);
        let c = space.candidates();
        assert_eq!(c.len(), 8);
        assert_eq!((c[0].seed, c[0].leaking_rate, c[0].spectral_radius), (1, 0.1, 0.9));
        assert_eq!((c[1].seed, c[1].leaking_rate, c[1].spectral_radius), (1, 0.1, 1.1));
        assert_eq!(c[4].seed, 2);
    }

    #[test]
    fn empty_lists_rejected() {
        let space = SearchSpace::new(10, vec![], vec![0.9], vec![0.0]);
        assert!(matches!(space.validate(), Err(SearchError::InvalidSpace(_))));
        let space = SearchSpace::new(10, vec![0.3], vec![0.9], vec![-1.0]);
        assert!(space.validate().is_err());
    }

    #[test]
    fn median_and_first_min() {
        assert_eq!(aggregate(&[3.0, 1.0, 2.0], Aggregate::Median), 2.0);
        assert_eq!(aggregate(&[4.0, 1.0, 2.0, 3.0], Aggregate::Median), 2.5);
        assert_eq!(first_min(&[2.0, 1.0, 1.0, f64::NAN]), Some(1));
        assert_eq!(first_min(&[f64::INFINITY]), None);
    }

    #[test]
    fn finalize_modes_parse() {
        assert_eq!("IReg-Retrained".parse::<FinalizeMode>().ok(), None);
        assert_eq!("as-is".parse::<FinalizeMode>(), Ok(FinalizeMode::AsIs));
        assert_eq!("Averaged".parse::<FinalizeMode>(), Ok(FinalizeMode::Average));
    }
}
