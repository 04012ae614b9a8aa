//! Fold geometry of the validation schemes.
//!
//! All ranges are half-open step ranges over the series (or over the list of
//! sequences for classification). The test block is always the tail
//! `[trainval_end, total_steps)` and is never part of a plan's splits.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid plan geometry: {0}")]
    Geometry(String),
    #[error("unknown validation scheme `{0}`")]
    UnknownScheme(String),
}

fn geometry<T>(msg: impl Into<String>) -> Result<T, PlanError> {
    Err(PlanError::Geometry(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKind {
    /// Single static split: train, then validate on the block before testing.
    Sv,
    KFoldCv,
    KStepCv,
    KFoldAv,
    KStepAv,
    KFoldFv,
    KStepFv,
}

/// How a scheme chooses training data relative to its validation block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeFamily {
    Static,
    /// Everything except the validation block.
    Cross,
    /// Everything before the validation block.
    Accumulative,
    /// A fixed-length window right before the validation block.
    WalkForward,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 7] = [
        SchemeKind::Sv,
        SchemeKind::KFoldCv,
        SchemeKind::KStepCv,
        SchemeKind::KFoldAv,
        SchemeKind::KStepAv,
        SchemeKind::KFoldFv,
        SchemeKind::KStepFv,
    ];

    pub fn family(self) -> SchemeFamily {
        match self {
            SchemeKind::Sv => SchemeFamily::Static,
            SchemeKind::KFoldCv | SchemeKind::KStepCv => SchemeFamily::Cross,
            SchemeKind::KFoldAv | SchemeKind::KStepAv => SchemeFamily::Accumulative,
            SchemeKind::KFoldFv | SchemeKind::KStepFv => SchemeFamily::WalkForward,
        }
    }

    pub fn is_k_fold(self) -> bool {
        matches!(
            self,
            SchemeKind::KFoldCv | SchemeKind::KFoldAv | SchemeKind::KFoldFv
        )
    }

    pub fn is_k_step(self) -> bool {
        matches!(
            self,
            SchemeKind::KStepCv | SchemeKind::KStepAv | SchemeKind::KStepFv
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Sv => "SV",
            SchemeKind::KFoldCv => "KFoldCV",
            SchemeKind::KStepCv => "KStepCV",
            SchemeKind::KFoldAv => "KFoldAV",
            SchemeKind::KStepAv => "KStepAV",
            SchemeKind::KFoldFv => "KFoldFV",
            SchemeKind::KStepFv => "KStepFV",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == key)
            .ok_or_else(|| PlanError::UnknownScheme(s.to_string()))
    }
}

/// Half-open range of step indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StepRange {
    pub start: usize,
    pub end: usize,
}

impl StepRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, n: usize) -> bool {
        self.start <= n && n < self.end
    }

    pub fn intersects(&self, other: &StepRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for StepRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_ranges: Vec<StepRange>,
    pub valid_range: StepRange,
}

impl Split {
    pub fn train_len(&self) -> usize {
        self.train_ranges.iter().map(StepRange::len).sum()
    }

    /// One past the last step this split reads.
    pub fn end(&self) -> usize {
        self.train_ranges
            .iter()
            .map(|r| r.end)
            .chain(std::iter::once(self.valid_range.end))
            .max()
            .unwrap_or(0)
    }
}

/// Inputs of [`plan_splits`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub scheme: SchemeKind,
    /// All steps, including the test tail.
    pub total_steps: usize,
    pub test_len: usize,
    /// Washout steps at the start; run but never trained or validated on.
    pub transient_len: usize,
    pub k: usize,
    /// Fraction of the pre-test data reserved as minimum training length
    /// (accumulative and walk-forward schemes).
    pub min_ratio: f64,
    /// Validation block length for SV and k-step schemes; defaults to `test_len`.
    pub valid_len: Option<usize>,
    /// Distance between consecutive k-step blocks. Defaults to spreading the
    /// blocks evenly so the first starts at the fold region and the last
    /// ends at the test block.
    pub stride: Option<usize>,
}

impl PlanRequest {
    pub fn new(scheme: SchemeKind, total_steps: usize, test_len: usize, k: usize) -> Self {
        Self {
            scheme,
            total_steps,
            test_len,
            transient_len: 0,
            k,
            min_ratio: 0.5,
            valid_len: None,
            stride: None,
        }
    }

    pub fn with_transient(mut self, transient_len: usize) -> Self {
        self.transient_len = transient_len;
        self
    }

    pub fn with_min_ratio(mut self, min_ratio: f64) -> Self {
        self.min_ratio = min_ratio;
        self
    }

    pub fn with_valid_len(mut self, valid_len: usize) -> Self {
        self.valid_len = Some(valid_len);
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = Some(stride);
        self
    }
}

/// The transient that makes `k` folds of `fold_len` tile the pre-test data.
pub fn tiling_transient(
    total_steps: usize,
    test_len: usize,
    k: usize,
    fold_len: usize,
) -> Result<usize, PlanError> {
    let pre_test = total_steps.checked_sub(test_len).ok_or_else(|| {
        PlanError::Geometry(format!("test length {test_len} exceeds {total_steps} steps"))
    })?;
    pre_test.checked_sub(k * fold_len).ok_or_else(|| {
        PlanError::Geometry(format!(
            "{k} folds of {fold_len} steps exceed the {pre_test} pre-test steps"
        ))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub scheme: SchemeKind,
    pub total_steps: usize,
    /// Start of the test block.
    pub trainval_end: usize,
    pub transient: StepRange,
    pub splits: Vec<Split>,
    /// Fold length (k-fold), block stride (k-step) or validation length (SV).
    pub fold_len: usize,
    pub k: usize,
}

/// A broken plan invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanViolation {
    EmptyValidation { split: usize },
    EmptyTrainRange { split: usize },
    OutOfBounds { split: usize, range: StepRange },
    TrainValidOverlap { split: usize },
    TrainRangesOverlap { split: usize },
    ValidationOrder { split: usize },
    NotConsecutive { split: usize },
    NoSplits,
}

impl PlanViolation {
    /// Stable kebab-case name of the broken invariant.
    pub fn code(&self) -> &'static str {
        match self {
            PlanViolation::EmptyValidation { .. } => "empty-validation",
            PlanViolation::EmptyTrainRange { .. } => "empty-train-range",
            PlanViolation::OutOfBounds { .. } => "out-of-bounds",
            PlanViolation::TrainValidOverlap { .. } => "train-valid-overlap",
            PlanViolation::TrainRangesOverlap { .. } => "train-ranges-overlap",
            PlanViolation::ValidationOrder { .. } => "validation-order",
            PlanViolation::NotConsecutive { .. } => "not-consecutive",
            PlanViolation::NoSplits => "no-splits",
        }
    }
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::EmptyValidation { split } => {
                write!(f, "split {split}: empty validation range")
            }
            PlanViolation::EmptyTrainRange { split } => {
                write!(f, "split {split}: empty training range")
            }
            PlanViolation::OutOfBounds { split, range } => write!(
                f,
                "split {split}: range {range} outside the train/validation region"
            ),
            PlanViolation::TrainValidOverlap { split } => {
                write!(f, "split {split}: validation range overlaps its training ranges")
            }
            PlanViolation::TrainRangesOverlap { split } => {
                write!(f, "split {split}: training ranges overlap or are unsorted")
            }
            PlanViolation::ValidationOrder { split } => write!(
                f,
                "split {split}: validation range does not start after the previous one"
            ),
            PlanViolation::NotConsecutive { split } => write!(
                f,
                "split {split}: k-fold validation range is not adjacent to the previous one"
            ),
            PlanViolation::NoSplits => write!(f, "plan has no splits"),
        }
    }
}

impl SplitPlan {
    /// A hand-written plan. Nothing is checked here; call [`SplitPlan::check`].
    pub fn custom(
        scheme: SchemeKind,
        total_steps: usize,
        trainval_end: usize,
        transient_len: usize,
        splits: Vec<Split>,
    ) -> Self {
        let k = splits.len();
        let fold_len = splits.first().map(|s| s.valid_range.len()).unwrap_or(0);
        Self {
            scheme,
            total_steps,
            trainval_end,
            transient: StepRange::new(0, transient_len),
            splits,
            fold_len,
            k,
        }
    }

    pub fn test_range(&self) -> StepRange {
        StepRange::new(self.trainval_end, self.total_steps)
    }

    /// The region that splits may use: between transient and test.
    pub fn usable(&self) -> StepRange {
        StepRange::new(self.transient.end, self.trainval_end)
    }

    /// Every invariant violation; empty when the plan is sound.
    pub fn check(&self) -> Vec<PlanViolation> {
        let mut out = Vec::new();
        if self.splits.is_empty() {
            out.push(PlanViolation::NoSplits);
        }
        let usable = self.usable();
        let inside = |r: &StepRange| r.start >= usable.start && r.end <= usable.end;
        for (j, split) in self.splits.iter().enumerate() {
            let v = split.valid_range;
            if v.is_empty() {
                out.push(PlanViolation::EmptyValidation { split: j });
            }
            if !inside(&v) {
                out.push(PlanViolation::OutOfBounds { split: j, range: v });
            }
            for r in &split.train_ranges {
                if r.is_empty() {
                    out.push(PlanViolation::EmptyTrainRange { split: j });
                }
                if !inside(r) {
                    out.push(PlanViolation::OutOfBounds { split: j, range: *r });
                }
                if r.intersects(&v) {
                    out.push(PlanViolation::TrainValidOverlap { split: j });
                }
            }
            if split
                .train_ranges
                .windows(2)
                .any(|w| w[0].end > w[1].start)
            {
                out.push(PlanViolation::TrainRangesOverlap { split: j });
            }
            if j > 0 {
                let prev = self.splits[j - 1].valid_range;
                if v.start <= prev.start {
                    out.push(PlanViolation::ValidationOrder { split: j });
                }
                if self.scheme.is_k_fold() && v.start != prev.end {
                    out.push(PlanViolation::NotConsecutive { split: j });
                }
            }
        }
        out
    }
}

fn complement(region: StepRange, hole: StepRange) -> Vec<StepRange> {
    [
        StepRange::new(region.start, hole.start),
        StepRange::new(hole.end, region.end),
    ]
    .into_iter()
    .filter(|r| !r.is_empty())
    .collect()
}

/// Lays out the splits of one validation scheme.
///
/// K-fold folds split their region evenly; the last fold absorbs the
/// remainder of the integer division.
pub fn plan_splits(req: &PlanRequest) -> Result<SplitPlan, PlanError> {
    let total = req.total_steps;
    let pre_test = match total.checked_sub(req.test_len) {
        Some(p) => p,
        None => return geometry(format!("test length {} exceeds {total} steps", req.test_len)),
    };
    let t = req.transient_len;
    if t >= pre_test {
        return geometry(format!(
            "transient of {t} steps leaves nothing before the test block at {pre_test}"
        ));
    }
    if req.scheme != SchemeKind::Sv && req.k == 0 {
        return geometry("k must be at least 1");
    }
    let usable = StepRange::new(t, pre_test);

    let fold_region_start = || -> Result<usize, PlanError> {
        if !(req.min_ratio > 0.0 && req.min_ratio < 1.0) {
            return geometry(format!("min ratio {} not in (0, 1)", req.min_ratio));
        }
        let start = (req.min_ratio * pre_test as f64).round() as usize;
        if start <= t {
            return geometry(format!(
                "min ratio {} gives a minimum training prefix ending at {start}, inside the {t}-step transient",
                req.min_ratio
            ));
        }
        if start >= pre_test {
            return geometry(format!(
                "min ratio {} leaves no steps for validation folds",
                req.min_ratio
            ));
        }
        Ok(start)
    };

    let (splits, fold_len, k) = match req.scheme {
        SchemeKind::Sv => {
            let vl = req.valid_len.unwrap_or(req.test_len);
            if vl == 0 {
                return geometry("validation length must be positive");
            }
            if vl >= usable.len() {
                return geometry(format!(
                    "validation length {vl} leaves no training data in {usable}"
                ));
            }
            let valid = StepRange::new(pre_test - vl, pre_test);
            let split = Split {
                train_ranges: vec![StepRange::new(t, valid.start)],
                valid_range: valid,
            };
            (vec![split], vl, 1)
        }
        SchemeKind::KFoldCv | SchemeKind::KFoldAv | SchemeKind::KFoldFv => {
            let region_start = if req.scheme == SchemeKind::KFoldCv {
                t
            } else {
                fold_region_start()?
            };
            let region_len = pre_test - region_start;
            let fold_len = region_len / req.k;
            if fold_len == 0 {
                return geometry(format!(
                    "{} folds do not fit into the {region_len} steps of [{region_start}, {pre_test})",
                    req.k
                ));
            }
            let window = region_start - t;
            let splits = (0..req.k)
                .map(|j| {
                    let start = region_start + j * fold_len;
                    let end = if j + 1 == req.k { pre_test } else { start + fold_len };
                    let valid = StepRange::new(start, end);
                    let train_ranges = match req.scheme.family() {
                        SchemeFamily::Cross => complement(usable, valid),
                        SchemeFamily::Accumulative => vec![StepRange::new(t, start)],
                        _ => vec![StepRange::new(start - window, start)],
                    };
                    Split {
                        train_ranges,
                        valid_range: valid,
                    }
                })
                .collect();
            (splits, fold_len, req.k)
        }
        SchemeKind::KStepCv | SchemeKind::KStepAv | SchemeKind::KStepFv => {
            let region_start = if req.scheme == SchemeKind::KStepCv {
                t
            } else {
                fold_region_start()?
            };
            let region_len = pre_test - region_start;
            let vl = req.valid_len.unwrap_or(req.test_len);
            if vl == 0 {
                return geometry("validation length must be positive");
            }
            if vl > region_len {
                return geometry(format!(
                    "validation length {vl} exceeds the {region_len} available steps"
                ));
            }
            let k = req.k;
            let stride = match (req.stride, k) {
                (_, 1) => 0,
                (Some(s), _) => s,
                (None, _) => (region_len - vl) / (k - 1),
            };
            if k > 1 && stride == 0 {
                return geometry(format!(
                    "{k} validation blocks of {vl} steps cannot advance inside {region_len} steps"
                ));
            }
            let span = vl + (k - 1) * stride;
            if span > region_len {
                return geometry(format!(
                    "{k} blocks of {vl} steps with stride {stride} need {span} steps, only {region_len} available"
                ));
            }
            let window = region_start - t;
            let splits = (0..k)
                .map(|j| {
                    let start = pre_test - vl - (k - 1 - j) * stride;
                    let valid = StepRange::new(start, start + vl);
                    let train_ranges = match req.scheme.family() {
                        SchemeFamily::Cross => complement(usable, valid),
                        SchemeFamily::Accumulative => vec![StepRange::new(t, start)],
                        _ => vec![StepRange::new(start - window, start)],
                    };
                    Split {
                        train_ranges,
                        valid_range: valid,
                    }
                })
                .collect();
            (splits, if k > 1 { stride } else { vl }, k)
        }
    };

    Ok(SplitPlan {
        scheme: req.scheme,
        total_steps: total,
        trainval_end: pre_test,
        transient: StepRange::new(0, t),
        splits,
        fold_len,
        k,
    })
}
