//! Step-by-step access to expanded states and targets of a task.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{CvError, StepRange};
use crate::evaluation::{sequence_features, SeriesTask, TaskData};
use crate::reservoir::{column, ExpandedState, ReservoirError, ReservoirWeights};

/// A series is driven through the reservoir; sequences are reduced to one
/// feature column each, computed once up front.
pub(super) enum Source<'a> {
    Series {
        weights: &'a ReservoirWeights,
        task: &'a SeriesTask,
    },
    Sequences {
        features: DMatrix<f64>,
        targets: DMatrix<f64>,
    },
}

impl<'a> Source<'a> {
    /// Returns the source and the number of reservoir updates spent on it.
    pub(super) fn prepare(
        weights: &'a ReservoirWeights,
        data: &'a TaskData,
        end: usize,
    ) -> Result<(Self, u64), CvError> {
        if data.n_u() != weights.n_u() {
            return Err(ReservoirError::Dimension {
                what: "input vector",
                expected: weights.n_u(),
                actual: data.n_u(),
            }
            .into());
        }
        match data {
            TaskData::Series(task) => Ok((Source::Series { weights, task }, 0)),
            TaskData::Sequences(task) => {
                let mode = task.feature_mode();
                let feats = (0..end)
                    .into_par_iter()
                    .map(|i| sequence_features(weights, task.sequence(i), mode))
                    .collect::<Result<Vec<_>, _>>()?;
                let frames: usize = (0..end).map(|i| task.sequence(i).ncols()).sum();
                let mut features = DMatrix::zeros(weights.n_r(), end);
                let mut targets = DMatrix::zeros(task.n_classes(), end);
                for (i, f) in feats.iter().enumerate() {
                    features.column_mut(i).copy_from_slice(f.as_slice());
                    targets[(task.label(i), i)] = 1.0;
                }
                Ok((Source::Sequences { features, targets }, frames as u64))
            }
        }
    }

    pub(super) fn n_x(&self) -> usize {
        match self {
            Source::Series { weights, .. } => weights.n_x(),
            Source::Sequences { .. } => 0,
        }
    }

    pub(super) fn is_series(&self) -> bool {
        matches!(self, Source::Series { .. })
    }

    pub(super) fn stepper(&self, range: StepRange, x0: Vec<f64>) -> Stepper<'_, 'a> {
        let (n_r, n_y) = match self {
            Source::Series { weights, task } => (weights.n_r(), task.n_y()),
            Source::Sequences { features, targets } => (features.nrows(), targets.nrows()),
        };
        Stepper {
            source: self,
            next: range.start,
            end: range.end,
            scratch: vec![0.0; x0.len()],
            x: x0,
            v: ExpandedState::zeros(n_r),
            y: vec![0.0; n_y],
            updates: 0,
        }
    }

    /// Expanded states and targets of `range`, starting from state `x0`.
    pub(super) fn collect(
        &self,
        range: StepRange,
        x0: Vec<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, u64) {
        if let Source::Sequences { features, targets } = self {
            let x = features.columns(range.start, range.len()).into_owned();
            let y = targets.columns(range.start, range.len()).into_owned();
            return (x, y, 0);
        }
        let mut st = self.stepper(range, x0);
        let mut xs = DMatrix::zeros(st.v.len(), range.len());
        let mut ys = DMatrix::zeros(st.y.len(), range.len());
        while let Some(n) = st.step() {
            let j = n - range.start;
            xs.column_mut(j).copy_from_slice(st.v());
            ys.column_mut(j).copy_from_slice(st.y());
        }
        (xs, ys, st.updates)
    }
}

/// Walks a step range, exposing the state after each step.
pub(super) struct Stepper<'s, 'a> {
    source: &'s Source<'a>,
    next: usize,
    end: usize,
    x: Vec<f64>,
    scratch: Vec<f64>,
    v: ExpandedState,
    y: Vec<f64>,
    pub(super) updates: u64,
}

impl Stepper<'_, '_> {
    /// Processes the next step and returns its index.
    pub(super) fn step(&mut self) -> Option<usize> {
        if self.next >= self.end {
            return None;
        }
        let n = self.next;
        match self.source {
            Source::Series { weights, task } => {
                let u = task.input(n);
                weights.step(&mut self.x, u, &mut self.scratch);
                self.v.fill(u, &self.x);
                self.y.copy_from_slice(task.target(n));
                self.updates += 1;
            }
            Source::Sequences { features, targets } => {
                self.v = ExpandedState::from_vec(column(features, n).to_vec());
                self.y.copy_from_slice(column(targets, n));
            }
        }
        self.next += 1;
        Some(n)
    }

    pub(super) fn v(&self) -> &[f64] {
        self.v.as_slice()
    }

    pub(super) fn y(&self) -> &[f64] {
        &self.y
    }

    /// Reservoir state after the last step; empty for sequences.
    pub(super) fn x(&self) -> &[f64] {
        &self.x
    }

    pub(super) fn into_state(self) -> Vec<f64> {
        self.x
    }
}
