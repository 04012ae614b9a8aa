//! Task kinds, task data and error metrics.
//!
//! Three kinds of temporal tasks are supported: generative (outputs are fed
//! back as inputs when running freely), output (a signal is inferred from
//! contemporary inputs) and classification of separate finite sequences.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::regression::TrainedReadout;
use crate::reservoir::{column, ExpandedState, ReservoirError, ReservoirState, ReservoirWeights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("target has zero variance in output dimension {dim}; NRMSE is undefined")]
    ZeroVariance { dim: usize },
    #[error("prediction shape {pred:?} does not match target shape {target:?}")]
    Shape {
        pred: (usize, usize),
        target: (usize, usize),
    },
    #[error("cannot evaluate an empty range")]
    Empty,
    #[error("invalid task data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Generative,
    Output,
    Classification,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Generative => "generative",
            TaskKind::Output => "output",
            TaskKind::Classification => "classification",
        })
    }
}

/// Which expanded states summarize a classified sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    #[default]
    LastState,
    MeanState,
}

/// Records the highest time index read from a dataset.
///
/// Used to prove that model selection never touches the test range.
#[derive(Debug, Default)]
pub struct AccessLog {
    max_plus_one: AtomicUsize,
}

impl AccessLog {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn record(&self, index: usize) {
        self.max_plus_one.fetch_max(index + 1, Ordering::Relaxed);
    }

    /// One past the largest index read so far, 0 if nothing was read.
    pub fn high_water(&self) -> usize {
        self.max_plus_one.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.max_plus_one.store(0, Ordering::Relaxed);
    }
}

/// A single aligned time series: inputs `u(n)` and targets `yᵗ(n)`.
#[derive(Debug, Clone)]
pub struct SeriesTask {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    /// `feedback[d]` is the input index that receives output `d` in free run.
    feedback: Vec<usize>,
    log: Option<Arc<AccessLog>>,
}

impl SeriesTask {
    /// Inputs are `n_u × T`, targets `n_y × T`, one column per time step.
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self, EvalError> {
        if inputs.ncols() != targets.ncols() {
            return Err(EvalError::InvalidData(format!(
                "inputs have {} steps but targets have {}",
                inputs.ncols(),
                targets.ncols()
            )));
        }
        if inputs.nrows() == 0 || targets.nrows() == 0 || inputs.ncols() == 0 {
            return Err(EvalError::InvalidData("empty inputs or targets".into()));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(EvalError::InvalidData("non-finite value in series".into()));
        }
        Ok(Self {
            inputs,
            targets,
            feedback: Vec::new(),
            log: None,
        })
    }

    /// Declares which input component receives each output in free run.
    pub fn with_feedback(mut self, feedback: Vec<usize>) -> Result<Self, EvalError> {
        check_feedback(&feedback, self.n_u(), self.n_y())?;
        self.feedback = feedback;
        Ok(self)
    }

    /// One-step-ahead task on a series `s` (`dim × L`): `u(n) = s(n)`,
    /// `yᵗ(n) = s(n+1)`, with every output fed back to its own input.
    pub fn one_step_ahead(series: &DMatrix<f64>) -> Result<Self, EvalError> {
        let len = series.ncols();
        if len < 2 {
            return Err(EvalError::InvalidData(
                "one-step-ahead task needs at least two samples".into(),
            ));
        }
        let inputs = series.columns(0, len - 1).into_owned();
        let targets = series.columns(1, len - 1).into_owned();
        let dims = series.nrows();
        Self::new(inputs, targets)?.with_feedback((0..dims).collect())
    }

    pub fn with_access_log(mut self, log: Arc<AccessLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_u(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.targets.nrows()
    }

    pub fn feedback(&self) -> &[usize] {
        &self.feedback
    }

    pub fn input(&self, n: usize) -> &[f64] {
        if let Some(log) = &self.log {
            log.record(n);
        }
        column(&self.inputs, n)
    }

    pub fn target(&self, n: usize) -> &[f64] {
        if let Some(log) = &self.log {
            log.record(n);
        }
        column(&self.targets, n)
    }

    /// Targets of steps `start..end` as an `n_y × (end-start)` matrix.
    pub fn target_block(&self, start: usize, end: usize) -> DMatrix<f64> {
        if let (Some(log), true) = (&self.log, end > start) {
            log.record(end - 1);
        }
        self.targets.columns(start, end - start).into_owned()
    }

    /// Inputs of steps `start..end`.
    pub fn input_block(&self, start: usize, end: usize) -> DMatrix<f64> {
        if let (Some(log), true) = (&self.log, end > start) {
            log.record(end - 1);
        }
        self.inputs.columns(start, end - start).into_owned()
    }
}

fn check_feedback(feedback: &[usize], n_u: usize, n_y: usize) -> Result<(), EvalError> {
    if feedback.len() != n_y {
        return Err(EvalError::InvalidData(format!(
            "feedback map has {} entries but there are {n_y} outputs",
            feedback.len()
        )));
    }
    let mut seen = vec![false; n_u];
    for &i in feedback {
        if i >= n_u || seen[i] {
            return Err(EvalError::InvalidData(format!(
                "feedback index {i} out of range or repeated (n_u = {n_u})"
            )));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Separate labelled sequences, each `n_u × T_i`.
#[derive(Debug, Clone)]
pub struct SequenceTask {
    sequences: Vec<DMatrix<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    feature_mode: FeatureMode,
    log: Option<Arc<AccessLog>>,
}

impl SequenceTask {
    pub fn new(
        sequences: Vec<DMatrix<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
        feature_mode: FeatureMode,
    ) -> Result<Self, EvalError> {
        if sequences.is_empty() {
            return Err(EvalError::InvalidData("no sequences".into()));
        }
        if sequences.len() != labels.len() {
            return Err(EvalError::InvalidData(format!(
                "{} sequences but {} labels",
                sequences.len(),
                labels.len()
            )));
        }
        let n_u = sequences[0].nrows();
        for (i, s) in sequences.iter().enumerate() {
            if s.ncols() == 0 || s.nrows() != n_u {
                return Err(EvalError::InvalidData(format!(
                    "sequence {i} is empty or has {} features instead of {n_u}",
                    s.nrows()
                )));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(EvalError::InvalidData(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        Ok(Self {
            sequences,
            labels,
            n_classes,
            feature_mode,
            log: None,
        })
    }

    pub fn with_access_log(mut self, log: Arc<AccessLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn n_u(&self) -> usize {
        self.sequences[0].nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.feature_mode
    }

    pub fn sequence(&self, i: usize) -> &DMatrix<f64> {
        if let Some(log) = &self.log {
            log.record(i);
        }
        &self.sequences[i]
    }

    pub fn label(&self, i: usize) -> usize {
        if let Some(log) = &self.log {
            log.record(i);
        }
        self.labels[i]
    }

    /// One-hot encoding of the label of sequence `i`.
    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.n_classes];
        y[self.label(i)] = 1.0;
        y
    }
}

/// Data for any of the three task kinds.
#[derive(Debug, Clone)]
pub enum TaskData {
    Series(SeriesTask),
    Sequences(SequenceTask),
}

impl TaskData {
    /// Number of time steps, or of sequences for classification.
    pub fn len(&self) -> usize {
        match self {
            TaskData::Series(s) => s.len(),
            TaskData::Sequences(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_u(&self) -> usize {
        match self {
            TaskData::Series(s) => s.n_u(),
            TaskData::Sequences(s) => s.n_u(),
        }
    }

    pub fn n_y(&self) -> usize {
        match self {
            TaskData::Series(s) => s.n_y(),
            TaskData::Sequences(s) => s.n_classes(),
        }
    }

    /// Checks that the data can serve the given task kind.
    pub fn check_kind(&self, kind: TaskKind) -> Result<(), EvalError> {
        match (self, kind) {
            (TaskData::Series(s), TaskKind::Generative) if s.feedback().is_empty() => Err(
                EvalError::InvalidData("generative task needs a feedback map".into()),
            ),
            (TaskData::Series(_), TaskKind::Generative | TaskKind::Output) => Ok(()),
            (TaskData::Sequences(_), TaskKind::Classification) => Ok(()),
            (_, kind) => Err(EvalError::InvalidData(format!(
                "data layout does not fit a {kind} task"
            ))),
        }
    }
}

/// Error summary of one evaluated range.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub nrmse: f64,
    pub misclassifications: Option<usize>,
    pub predictions: Option<DMatrix<f64>>,
}

/// Root-mean-square error divided by the target's standard deviation,
/// computed per output row and averaged over rows. Columns are time steps.
pub fn nrmse(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<f64, EvalError> {
    nrmse_with_scale(pred, target, None)
}

/// Like [`nrmse`], but rows whose target variance is zero are normalized by
/// the matching entry of `fallback_std` when one is given.
pub fn nrmse_with_scale(
    pred: &DMatrix<f64>,
    target: &DMatrix<f64>,
    fallback_std: Option<&[f64]>,
) -> Result<f64, EvalError> {
    if pred.shape() != target.shape() {
        return Err(EvalError::Shape {
            pred: pred.shape(),
            target: target.shape(),
        });
    }
    let (dims, len) = target.shape();
    if dims == 0 || len == 0 {
        return Err(EvalError::Empty);
    }
    let n = len as f64;
    let mut total = 0.0;
    for d in 0..dims {
        let row = target.row(d);
        let mean = row.sum() / n;
        let var = row.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let mse = pred
            .row(d)
            .iter()
            .zip(row.iter())
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / n;
        let std = if var > 0.0 {
            var.sqrt()
        } else {
            match fallback_std.map(|s| s[d]) {
                Some(s) if s > 0.0 => s,
                _ => return Err(EvalError::ZeroVariance { dim: d }),
            }
        };
        total += mse.sqrt() / std;
    }
    Ok(total / dims as f64)
}

/// NRMSE with all output dimensions pooled into one normalization; used for
/// one-hot class targets where a short range may miss some classes entirely.
pub fn pooled_nrmse(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<f64, EvalError> {
    if pred.shape() != target.shape() {
        return Err(EvalError::Shape {
            pred: pred.shape(),
            target: target.shape(),
        });
    }
    if target.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = target.len() as f64;
    let mean = target.sum() / n;
    let var = target.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(EvalError::ZeroVariance { dim: 0 });
    }
    let mse = pred.iter().zip(target.iter()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    Ok((mse / var).sqrt())
}

/// Population standard deviation of each row.
pub fn row_std(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.ncols() as f64;
    m.row_iter()
        .map(|row| {
            let mean = row.sum() / n;
            (row.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Runs the network in closed loop for `horizon` steps.
///
/// Step 0 consumes `first_input`; every later step takes its input from
/// `exogenous` (column `i - 1`) when given, or else from the previous input,
/// and overwrites the components listed in `feedback_map` with the previous
/// output. Returns the `n_y × horizon` predictions.
pub fn free_run(
    weights: &ReservoirWeights,
    readout: &TrainedReadout,
    seed_state: &ReservoirState,
    first_input: &[f64],
    horizon: usize,
    feedback_map: &[usize],
    exogenous: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>, EvalError> {
    let n_u = weights.n_u();
    if first_input.len() != n_u {
        return Err(ReservoirError::Dimension {
            what: "input vector",
            expected: n_u,
            actual: first_input.len(),
        }
        .into());
    }
    if seed_state.len() != weights.n_x() {
        return Err(ReservoirError::Dimension {
            what: "reservoir state",
            expected: weights.n_x(),
            actual: seed_state.len(),
        }
        .into());
    }
    check_feedback(feedback_map, n_u, readout.n_y())?;
    if let Some(ex) = exogenous {
        if ex.nrows() != n_u || ex.ncols() + 1 < horizon {
            return Err(EvalError::InvalidData(format!(
                "exogenous inputs are {}x{}, need {n_u}x{}",
                ex.nrows(),
                ex.ncols(),
                horizon.saturating_sub(1)
            )));
        }
    }
    let n_y = readout.n_y();
    let mut out = DMatrix::zeros(n_y, horizon);
    let mut x = seed_state.x.clone();
    let mut scratch = vec![0.0; x.len()];
    let mut u = first_input.to_vec();
    let mut v = ExpandedState::zeros(weights.n_r());
    let mut y = vec![0.0; n_y];
    for i in 0..horizon {
        if i > 0 {
            if let Some(ex) = exogenous {
                u.copy_from_slice(column(ex, i - 1));
            }
            for (d, &idx) in feedback_map.iter().enumerate() {
                u[idx] = y[d];
            }
        }
        weights.step(&mut x, &u, &mut scratch);
        v.fill(&u, &x);
        readout.predict_into(v.as_slice(), &mut y);
        out.column_mut(i).copy_from_slice(&y);
    }
    Ok(out)
}

/// Readout features of one sequence: the last expanded state, or the mean of
/// all of them, after running from the zero state.
pub fn sequence_features(
    weights: &ReservoirWeights,
    seq: &DMatrix<f64>,
    mode: FeatureMode,
) -> Result<ExpandedState, EvalError> {
    if seq.nrows() != weights.n_u() {
        return Err(ReservoirError::Dimension {
            what: "sequence feature count",
            expected: weights.n_u(),
            actual: seq.nrows(),
        }
        .into());
    }
    if seq.ncols() == 0 {
        return Err(EvalError::Empty);
    }
    let mut x = vec![0.0; weights.n_x()];
    let mut scratch = vec![0.0; x.len()];
    let mut v = ExpandedState::zeros(weights.n_r());
    let mut sum = vec![0.0; weights.n_r()];
    for j in 0..seq.ncols() {
        let u = column(seq, j);
        weights.step(&mut x, u, &mut scratch);
        if mode == FeatureMode::MeanState {
            v.fill(u, &x);
            sum.iter_mut().zip(v.as_slice()).for_each(|(s, a)| *s += a);
        }
    }
    Ok(match mode {
        FeatureMode::LastState => ExpandedState::new(column(seq, seq.ncols() - 1), &x),
        FeatureMode::MeanState => {
            let k = seq.ncols() as f64;
            ExpandedState::from_vec(sum.into_iter().map(|s| s / k).collect())
        }
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted labels and, when ground truth is supplied, the error count.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<usize>,
    pub misclassifications: Option<usize>,
}

pub fn classify_sequences(
    weights: &ReservoirWeights,
    readout: &TrainedReadout,
    sequences: &[DMatrix<f64>],
    truth: Option<&[usize]>,
    mode: FeatureMode,
) -> Result<Classification, EvalError> {
    let mut labels = Vec::with_capacity(sequences.len());
    let mut y = vec![0.0; readout.n_y()];
    for seq in sequences {
        let v = sequence_features(weights, seq, mode)?;
        readout.predict_into(v.as_slice(), &mut y);
        labels.push(argmax(&y));
    }
    let misclassifications = match truth {
        Some(t) if t.len() != labels.len() => {
            return Err(EvalError::InvalidData(format!(
                "{} labels for {} sequences",
                t.len(),
                labels.len()
            )))
        }
        Some(t) => Some(t.iter().zip(&labels).filter(|(a, b)| a != b).count()),
        None => None,
    };
    Ok(Classification {
        labels,
        misclassifications,
    })
}
