//! Loading series and labelled sequences from text files, normalization,
//! and the experiment layouts of the four benchmark series.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::evaluation::{FeatureMode, SequenceTask};
use crate::validation::{tiling_transient, PlanError, PlanRequest, SchemeKind, StepRange};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: block {block}: {message}")]
    Block {
        path: PathBuf,
        block: usize,
        message: String,
    },
    #[error("{path}: no sequences")]
    NoSequences { path: PathBuf },
    #[error("{0}")]
    Invalid(String),
    #[error("unknown dataset preset {0:?}")]
    UnknownPreset(String),
}

/// How a delimited series file is laid out.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFormat {
    pub delimiter: u8,
    pub header: bool,
    /// Zero-based columns to keep; empty keeps all of them.
    pub columns: Vec<usize>,
}

impl Default for SeriesFormat {
    fn default() -> Self {
        Self {
            delimiter: b',',
            header: false,
            columns: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    None,
    #[default]
    ZScore,
    MinMax,
}

impl std::str::FromStr for Normalization {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Normalization::None),
            "zscore" | "z-score" => Ok(Normalization::ZScore),
            "minmax" | "min-max" => Ok(Normalization::MinMax),
            _ => Err(DatasetError::Invalid(format!("unknown normalization {s:?}"))),
        }
    }
}

/// Per-row affine map `(v - offset) / scale` fitted on a step range.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub kind: Normalization,
    pub fitted_on: StepRange,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormParams {
    pub fn fit(values: &DMatrix<f64>, kind: Normalization, range: StepRange) -> Result<Self, DatasetError> {
        if range.is_empty() || range.end > values.ncols() {
            return Err(DatasetError::Invalid(format!(
                "normalization range {range} outside the {} steps of the series",
                values.ncols()
            )));
        }
        let block = values.columns(range.start, range.len());
        let n = range.len() as f64;
        let mut offset = Vec::with_capacity(values.nrows());
        let mut scale = Vec::with_capacity(values.nrows());
        for row in block.row_iter() {
            let (o, s) = match kind {
                Normalization::None => (0.0, 1.0),
                Normalization::ZScore => {
                    let mean = row.sum() / n;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
                Normalization::MinMax => {
                    let lo = row.min();
                    (lo, row.max() - lo)
                }
            };
            offset.push(o);
            // A constant row is only shifted.
            scale.push(if s > 0.0 { s } else { 1.0 });
        }
        Ok(Self {
            kind,
            fitted_on: range,
            offset,
            scale,
        })
    }

    pub fn apply(&self, values: &mut DMatrix<f64>) {
        for (i, mut row) in values.row_iter_mut().enumerate() {
            row.iter_mut()
                .for_each(|v| *v = (*v - self.offset[i]) / self.scale[i]);
        }
    }

    pub fn invert(&self, values: &mut DMatrix<f64>) {
        for (i, mut row) in values.row_iter_mut().enumerate() {
            row.iter_mut()
                .for_each(|v| *v = *v * self.scale[i] + self.offset[i]);
        }
    }
}

/// A multivariate series, one column per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub values: DMatrix<f64>,
    pub normalization: Option<NormParams>,
}

impl SeriesDataset {
    pub fn new(name: impl Into<String>, values: DMatrix<f64>) -> Result<Self, DatasetError> {
        if values.is_empty() {
            return Err(DatasetError::Invalid("empty series".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::Invalid("series contains non-finite values".into()));
        }
        Ok(Self {
            name: name.into(),
            values,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Normalizes in place with parameters fitted on `fit_range` only.
    pub fn normalize(&mut self, kind: Normalization, fit_range: StepRange) -> Result<(), DatasetError> {
        if self.normalization.is_some() {
            return Err(DatasetError::Invalid(format!("{} is already normalized", self.name)));
        }
        let params = NormParams::fit(&self.values, kind, fit_range)?;
        params.apply(&mut self.values);
        self.normalization = Some(params);
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a delimited series with one time step per row.
pub fn load_series(path: &Path, format: &SeriesFormat) -> Result<SeriesDataset, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(format.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut data = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let picked: Vec<&str> = if format.columns.is_empty() {
            record.iter().collect()
        } else {
            format
                .columns
                .iter()
                .map(|&c| {
                    record
                        .get(c)
                        .ok_or_else(|| parse_err(line, format!("no column {c}")))
                })
                .collect::<Result<_, _>>()?
        };
        if *width.get_or_insert(picked.len()) != picked.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", width.unwrap_or(0), picked.len()),
            ));
        }
        for field in picked {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value {field:?}")));
            }
            data.push(v);
        }
    }
    let width = width.ok_or_else(|| parse_err(0, "no data rows".into()))?;
    let steps = data.len() / width;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SeriesDataset::new(name, DMatrix::from_vec(width, steps, data))
}

/// Formats a float with 17 significant digits, enough to read back exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one time step per row.
pub fn write_series(path: &Path, values: &DMatrix<f64>, delimiter: char) -> Result<(), DatasetError> {
    let mut out = String::new();
    for col in values.column_iter() {
        let fields: Vec<String> = col.iter().map(|&v| format_f64(v)).collect();
        let _ = writeln!(out, "{}", fields.join(&delimiter.to_string()));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Labelled sequences, each `n_u × T_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<DMatrix<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Appends `other` after `self`, e.g. a test set after a training set.
    pub fn concat(&self, other: &SequenceDataset) -> SequenceDataset {
        SequenceDataset {
            sequences: self.sequences.iter().chain(&other.sequences).cloned().collect(),
            labels: self.labels.iter().chain(&other.labels).copied().collect(),
            n_classes: self.n_classes.max(other.n_classes),
        }
    }

    pub fn into_task(self, mode: FeatureMode) -> Result<SequenceTask, crate::evaluation::EvalError> {
        SequenceTask::new(self.sequences, self.labels, self.n_classes, mode)
    }
}

/// Splits text into blank-line separated blocks of `(line number, line)`.
fn blocks(text: &str) -> Vec<Vec<(u64, &str)>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push((i as u64 + 1, line));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn parse_frames(
    path: &Path,
    rows: &[(u64, &str)],
    block: usize,
    width: &mut Option<usize>,
) -> Result<DMatrix<f64>, DatasetError> {
    let block_err = |message: String| DatasetError::Block {
        path: path.to_path_buf(),
        block,
        message,
    };
    if rows.is_empty() {
        return Err(block_err("sequence has no frames".into()));
    }
    let mut data = Vec::new();
    for &(line, row) in rows {
        let start = data.len();
        for field in row.split_whitespace() {
            let v: f64 = field.parse().map_err(|_| DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("non-finite value {field:?}"),
                });
            }
            data.push(v);
        }
        let n = data.len() - start;
        let expected = *width.get_or_insert(n);
        if n != expected {
            return Err(block_err(format!(
                "line {line} has {n} features, expected {expected}"
            )));
        }
    }
    let w = width.unwrap_or(0);
    Ok(DMatrix::from_vec(w, data.len() / w, data))
}

/// Reads sequences written as blank-line separated blocks, each a
/// `label <int>` line followed by one row of features per frame. Blocks are
/// numbered from 1 in error messages.
pub fn load_sequences(path: &Path) -> Result<SequenceDataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut sequences = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (b, rows) in blocks(&text).iter().enumerate() {
        let block = b + 1;
        let (line, head) = rows[0];
        let label = head
            .strip_prefix("label")
            .and_then(|rest| rest.trim().parse::<usize>().ok())
            .ok_or_else(|| DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected `label <int>`, found {head:?}"),
            })?;
        sequences.push(parse_frames(path, &rows[1..], block, &mut width)?);
        labels.push(label);
    }
    if sequences.is_empty() {
        return Err(DatasetError::NoSequences {
            path: path.to_path_buf(),
        });
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(SequenceDataset {
        sequences,
        labels,
        n_classes,
    })
}

pub fn write_sequences(path: &Path, data: &SequenceDataset) -> Result<(), DatasetError> {
    let mut out = String::new();
    for (seq, label) in data.sequences.iter().zip(&data.labels) {
        let _ = writeln!(out, "label {label}");
        for col in seq.column_iter() {
            let fields: Vec<String> = col.iter().map(|&v| format_f64(v)).collect();
            let _ = writeln!(out, "{}", fields.join(" "));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads the UCI Japanese Vowels files from `dir`: `ae.train`, `ae.test`,
/// `size_ae.train` and `size_ae.test`. Returns the training and test sets;
/// labels are speaker indices.
pub fn load_japanese_vowels(dir: &Path) -> Result<(SequenceDataset, SequenceDataset), DatasetError> {
    let part = |name: &str| -> Result<SequenceDataset, DatasetError> {
        let data_path = dir.join(format!("ae.{name}"));
        let size_path = dir.join(format!("size_ae.{name}"));
        let sizes_text = fs::read_to_string(&size_path).map_err(io_err(&size_path))?;
        let sizes = sizes_text
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DatasetError::Parse {
                path: size_path.clone(),
                line: 1,
                message: e.to_string(),
            })?;
        let text = fs::read_to_string(&data_path).map_err(io_err(&data_path))?;
        let mut width = None;
        let sequences = blocks(&text)
            .iter()
            .enumerate()
            .map(|(b, rows)| parse_frames(&data_path, rows, b + 1, &mut width))
            .collect::<Result<Vec<_>, _>>()?;
        if sequences.len() != sizes.iter().sum::<usize>() {
            return Err(DatasetError::Invalid(format!(
                "{} holds {} sequences but {} lists {}",
                data_path.display(),
                sequences.len(),
                size_path.display(),
                sizes.iter().sum::<usize>()
            )));
        }
        let labels = sizes
            .iter()
            .enumerate()
            .flat_map(|(speaker, &n)| std::iter::repeat_n(speaker, n))
            .collect();
        Ok(SequenceDataset {
            sequences,
            labels,
            n_classes: sizes.len(),
        })
    };
    Ok((part("train")?, part("test")?))
}

/// Split geometry of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLayout {
    pub test_len: usize,
    pub valid_len: usize,
    pub k: usize,
    pub min_ratio: f64,
    pub transient_len: usize,
}

impl ExperimentLayout {
    pub fn plan_request(&self, scheme: SchemeKind, total_steps: usize) -> PlanRequest {
        PlanRequest::new(scheme, total_steps, self.test_len, self.k)
            .with_transient(self.transient_len)
            .with_min_ratio(self.min_ratio)
            .with_valid_len(self.valid_len)
    }
}

/// One row of the benchmark table: series length, validation and test
/// length, number of folds or steps, and minimum training ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table1Row {
    pub name: &'static str,
    pub samples: usize,
    pub valid_test_len: usize,
    pub k: usize,
    pub min_ratio: f64,
}

pub const TABLE1: [Table1Row; 4] = [
    Table1Row {
        name: "labour",
        samples: 360,
        valid_test_len: 10,
        k: 34,
        min_ratio: 0.5,
    },
    Table1Row {
        name: "gasoline",
        samples: 1355,
        valid_test_len: 67,
        k: 18,
        min_ratio: 0.5,
    },
    Table1Row {
        name: "sunspots",
        samples: 3177,
        valid_test_len: 200,
        k: 10,
        min_ratio: 0.5,
    },
    Table1Row {
        name: "electricity",
        samples: 4033,
        valid_test_len: 200,
        k: 18,
        min_ratio: 0.5,
    },
];

pub fn table1_row(name: &str) -> Result<&'static Table1Row, DatasetError> {
    let key = name.trim().to_ascii_lowercase();
    TABLE1
        .iter()
        .find(|r| r.name == key)
        .ok_or_else(|| DatasetError::UnknownPreset(name.to_string()))
}

/// Layout of a benchmark series. The transient is whatever remains after
/// `k` validation-length folds and the test block, so that k-fold
/// cross-validation folds tile the pre-test data exactly.
pub fn table1_layout(name: &str) -> Result<ExperimentLayout, DatasetError> {
    let row = table1_row(name)?;
    let transient_len = tiling_transient(row.samples, row.valid_test_len, row.k, row.valid_test_len)
        .map_err(|e: PlanError| DatasetError::Invalid(e.to_string()))?;
    Ok(ExperimentLayout {
        test_len: row.valid_test_len,
        valid_len: row.valid_test_len,
        k: row.k,
        min_ratio: row.min_ratio,
        transient_len,
    })
}

/// Japanese Vowels: 270 training sequences in 18 folds of 15, followed by
/// 370 test sequences.
pub fn japanese_vowels_layout() -> ExperimentLayout {
    ExperimentLayout {
        test_len: 370,
        valid_len: 15,
        k: 18,
        min_ratio: 0.5,
        transient_len: 0,
    }
}
