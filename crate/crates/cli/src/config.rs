//! Experiment configuration files.
//!
//! A config is TOML with the sections `[data]`, `[task]`, `[layout]`,
//! `[search]` and `[run]`. Unknown keys are errors, so a misspelled
//! hyper-parameter name never silently falls back to a default. The
//! repository README lists every key; `configs/` holds examples.

use std::path::{Path, PathBuf};

use esncv::datasets::{
    japanese_vowels_layout, load_japanese_vowels, load_sequences, load_series, table1_row,
    Normalization, SeriesFormat,
};
use esncv::evaluation::{FeatureMode, SeriesTask, TaskData, TaskKind};
use esncv::search::{Aggregate, FinalizeMode, SearchOptions, SearchSpace};
use esncv::validation::{
    plan_splits, tiling_transient, PlanRequest, SchemeKind, SpaceVariant, Split, SplitPlan, StepRange,
};
use esncv::ErrorCategory;
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::Failure;

/// The series shipped inside the binary, selected with `builtin = "toy"`.
const TOY_SERIES: &str = include_str!("../data/toy_series.csv");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataConfig>,
    pub task: TaskConfig,
    pub layout: LayoutConfig,
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// A bundled dataset instead of a file; only `toy` exists.
    pub builtin: Option<String>,
    /// Relative paths are resolved against the config file's directory.
    pub path: Option<PathBuf>,
    /// `series`, `sequences` or `japanese-vowels` (a directory).
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default)]
    pub header: bool,
    #[serde(default)]
    pub columns: Vec<usize>,
    /// Series only: `zscore`, `minmax` or `none`, fitted before the test block.
    #[serde(default = "default_normalization")]
    pub normalization: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// `generative`, `output` or `classification`.
    pub kind: String,
    /// Output tasks: rows of the loaded series used as inputs and targets.
    pub inputs: Option<Vec<usize>>,
    pub targets: Option<Vec<usize>>,
    /// Classification: `last` or `mean` state features.
    #[serde(default = "default_features")]
    pub features: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    /// `table1:<dataset>` or `japanese-vowels`; explicit keys override it.
    pub preset: Option<String>,
    pub test_len: Option<usize>,
    pub valid_len: Option<usize>,
    pub k: Option<usize>,
    pub min_ratio: Option<f64>,
    pub transient: Option<usize>,
    pub stride: Option<usize>,
    /// Length of the data, for checking plans without loading it.
    pub total_steps: Option<usize>,
    /// Hand-written splits; replaces the generated geometry.
    pub splits: Option<Vec<CustomSplit>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSplit {
    pub train: Vec<[usize; 2]>,
    pub valid: [usize; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub reservoir_size: usize,
    pub leaking_rates: Vec<f64>,
    pub spectral_radii: Vec<f64>,
    pub betas: Vec<f64>,
    #[serde(default = "default_input_scaling")]
    pub input_scaling: f64,
    pub density: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_schemes")]
    pub schemes: Vec<String>,
    #[serde(default = "default_finalize")]
    pub finalize: Vec<String>,
    #[serde(default)]
    pub ireg: bool,
    /// `fold-local` or `streaming`.
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_true")]
    pub store_fold_states: bool,
    #[serde(default = "default_true")]
    pub exclude_bias: bool,
    /// `mean` or `median` over splits.
    #[serde(default = "default_aggregate")]
    pub aggregate: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            schemes: default_schemes(),
            finalize: default_finalize(),
            ireg: false,
            variant: default_variant(),
            store_fold_states: true,
            exclude_bias: true,
            aggregate: default_aggregate(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            threads: None,
        }
    }
}

fn default_format() -> String {
    "series".into()
}
fn default_delimiter() -> String {
    ",".into()
}
fn default_normalization() -> String {
    "zscore".into()
}
fn default_features() -> String {
    "last".into()
}
fn default_input_scaling() -> f64 {
    1.0
}
fn default_schemes() -> Vec<String> {
    vec!["sv".into()]
}
fn default_finalize() -> Vec<String> {
    FinalizeMode::ALL.iter().map(|m| m.name().to_string()).collect()
}
fn default_variant() -> String {
    "fold-local".into()
}
fn default_true() -> bool {
    true
}
fn default_aggregate() -> String {
    "mean".into()
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("esncv-out")
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// A fully validated experiment, ready to run.
pub struct Experiment {
    pub data: TaskData,
    pub task: TaskKind,
    /// One plan per configured scheme, in config order.
    pub plans: Vec<SplitPlan>,
    pub space: SearchSpace,
    pub seeds: Vec<u64>,
    pub finalize: Vec<FinalizeMode>,
    pub opts: SearchOptions,
    pub output_dir: PathBuf,
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::new(ErrorCategory::Config, msg)
}

fn data_err(msg: impl Into<String>) -> Failure {
    Failure::new(ErrorCategory::Data, msg)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|msg| config_err(format!("{}: {msg}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    /// Parses config text; errors are one line with the offending line number.
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            let msg = e.message().replace('\n', " ");
            match line {
                Some(l) => format!("line {l}: {msg}"),
                None => msg,
            }
        })
    }

    pub fn task_kind(&self) -> Result<TaskKind, Failure> {
        match self.task.kind.to_ascii_lowercase().as_str() {
            "generative" => Ok(TaskKind::Generative),
            "output" => Ok(TaskKind::Output),
            "classification" => Ok(TaskKind::Classification),
            other => Err(config_err(format!(
                "task.kind: unknown task `{other}` (expected generative, output or classification)"
            ))),
        }
    }

    pub fn schemes(&self) -> Result<Vec<SchemeKind>, Failure> {
        if self.run.schemes.is_empty() {
            return Err(config_err("run.schemes: at least one scheme is required"));
        }
        self.run
            .schemes
            .iter()
            .map(|s| s.parse().map_err(|e| config_err(format!("run.schemes: {e}"))))
            .collect()
    }

    fn finalize_modes(&self) -> Result<Vec<FinalizeMode>, Failure> {
        if self.run.finalize.is_empty() {
            return Err(config_err("run.finalize: at least one mode is required"));
        }
        self.run
            .finalize
            .iter()
            .map(|s| s.parse().map_err(|e: String| config_err(format!("run.finalize: {e}"))))
            .collect()
    }

    fn search_options(&self, threads: Option<usize>) -> Result<SearchOptions, Failure> {
        let variant = match self.run.variant.to_ascii_lowercase().as_str() {
            "fold-local" | "foldlocal" => SpaceVariant::FoldLocal,
            "streaming" => SpaceVariant::Streaming,
            other => return Err(config_err(format!("run.variant: unknown variant `{other}`"))),
        };
        let aggregate = match self.run.aggregate.to_ascii_lowercase().as_str() {
            "mean" => Aggregate::Mean,
            "median" => Aggregate::Median,
            other => return Err(config_err(format!("run.aggregate: unknown aggregate `{other}`"))),
        };
        if threads == Some(0) {
            return Err(config_err("threads must be at least 1"));
        }
        Ok(SearchOptions {
            variant,
            store_fold_states: self.run.store_fold_states,
            exclude_bias: self.run.exclude_bias,
            ireg: self.run.ireg,
            aggregate,
            threads,
        })
    }

    fn search_space(&self) -> Result<SearchSpace, Failure> {
        let s = self
            .search
            .as_ref()
            .ok_or_else(|| config_err("missing [search] section"))?;
        let mut space = SearchSpace::new(
            s.reservoir_size,
            s.leaking_rates.clone(),
            s.spectral_radii.clone(),
            s.betas.clone(),
        );
        space.input_scaling = s.input_scaling;
        space.density = s.density;
        space.validate().map_err(|e| config_err(format!("search: {e}")))?;
        Ok(space)
    }

    /// Checks everything, loads the data and builds the plans.
    pub fn resolve(&self, base: &Path, ov: &Overrides) -> Result<Experiment, Failure> {
        let task = self.task_kind()?;
        let schemes = self.schemes()?;
        let finalize = self.finalize_modes()?;
        for &scheme in &schemes {
            if !finalize.iter().any(|&m| applies(m, scheme)) {
                return Err(config_err(format!(
                    "run.finalize: none of the modes apply to {scheme} (as-is needs SV; average and best need k splits)"
                )));
            }
        }
        let opts = self.search_options(ov.threads.or(self.run.threads))?;
        let space = self.search_space()?;
        let seeds = match ov.seed {
            Some(s) => vec![s],
            None => self.run.seeds.clone(),
        };
        if seeds.is_empty() {
            return Err(config_err("run.seeds: at least one seed is required"));
        }
        let data_cfg = self
            .data
            .as_ref()
            .ok_or_else(|| config_err("missing [data] section"))?;
        let raw = load_raw(data_cfg, base)?;
        let data_len = raw.len(task);
        let geometry = self.layout.geometry(data_len, task)?;
        let trainval_end = data_len
            .checked_sub(geometry.test_len)
            .ok_or_else(|| config_err(format!("layout: test length {} exceeds {data_len} steps", geometry.test_len)))?;
        let data = raw.into_task(self, task, trainval_end)?;
        let plans = schemes
            .iter()
            .map(|&s| self.layout.plan(s, data.len(), &geometry))
            .collect::<Result<Vec<_>, _>>()?;
        for plan in &plans {
            check_plan(plan)?;
        }
        let output_dir = match &ov.output_dir {
            Some(d) => d.clone(),
            None if self.run.output_dir.is_absolute() => self.run.output_dir.clone(),
            None => base.join(&self.run.output_dir),
        };
        Ok(Experiment {
            data,
            task,
            plans,
            space,
            seeds,
            finalize,
            opts,
            output_dir,
        })
    }

    /// Plans for `validate-plan`: the data is loaded only when the layout
    /// cannot tell its length otherwise.
    pub fn plans_for_check(&self, base: &Path) -> Result<Vec<SplitPlan>, Failure> {
        let task = self.task_kind()?;
        let schemes = self.schemes()?;
        let total = match (self.layout.total_steps, &self.data) {
            (Some(t), _) => t,
            (None, Some(d)) => load_raw(d, base)?.len(task),
            (None, None) => match self.layout.preset_row() {
                Some(row) => row?.samples,
                None => {
                    return Err(config_err(
                        "layout.total_steps is required when there is no [data] section or table1 preset",
                    ))
                }
            },
        };
        let geometry = self.layout.geometry(total, task)?;
        schemes.iter().map(|&s| self.layout.plan(s, total, &geometry)).collect()
    }
}

/// Whether a finalization mode is meaningful for a scheme. With a single
/// split, averaging and picking the best both equal the validated model.
pub fn applies(mode: FinalizeMode, scheme: SchemeKind) -> bool {
    match mode {
        FinalizeMode::AsIs => scheme == SchemeKind::Sv,
        FinalizeMode::Retrain => true,
        FinalizeMode::Average | FinalizeMode::Best => scheme != SchemeKind::Sv,
    }
}

pub fn check_plan(plan: &SplitPlan) -> Result<(), Failure> {
    let violations = plan.check();
    match violations.first() {
        None => Ok(()),
        Some(v) => Err(config_err(format!(
            "{} plan violates {}: {v}{}",
            plan.scheme,
            v.code(),
            if violations.len() > 1 {
                format!(" (and {} more)", violations.len() - 1)
            } else {
                String::new()
            }
        ))),
    }
}

/// Resolved split geometry shared by all schemes of a config.
pub struct Geometry {
    pub test_len: usize,
    pub valid_len: usize,
    pub k: usize,
    pub min_ratio: f64,
    pub transient: usize,
    pub stride: Option<usize>,
}

impl LayoutConfig {
    fn preset_row(&self) -> Option<Result<&'static esncv::datasets::Table1Row, Failure>> {
        let preset = self.preset.as_deref()?;
        let name = preset.strip_prefix("table1:")?;
        Some(table1_row(name).map_err(|e| config_err(format!("layout.preset: {e}"))))
    }

    fn geometry(&self, total: usize, task: TaskKind) -> Result<Geometry, Failure> {
        let (mut g, tile) = match self.preset.as_deref() {
            Some(p) if p.starts_with("table1:") => {
                let row = self.preset_row().expect("table1 prefix")?;
                let g = Geometry {
                    test_len: row.valid_test_len,
                    valid_len: row.valid_test_len,
                    k: row.k,
                    min_ratio: row.min_ratio,
                    transient: 0,
                    stride: None,
                };
                (g, true)
            }
            Some("japanese-vowels") => {
                if task != TaskKind::Classification {
                    return Err(config_err("layout.preset: japanese-vowels needs a classification task"));
                }
                let l = japanese_vowels_layout();
                let g = Geometry {
                    test_len: l.test_len,
                    valid_len: l.valid_len,
                    k: l.k,
                    min_ratio: l.min_ratio,
                    transient: l.transient_len,
                    stride: None,
                };
                (g, false)
            }
            Some(other) => {
                return Err(config_err(format!(
                    "layout.preset: unknown preset `{other}` (expected table1:<dataset> or japanese-vowels)"
                )))
            }
            None => {
                let test_len = self.test_len.ok_or_else(|| config_err("layout.test_len is required without a preset"))?;
                let k = match (&self.splits, self.k) {
                    (Some(s), _) => s.len(),
                    (None, Some(k)) => k,
                    (None, None) => return Err(config_err("layout.k is required without a preset")),
                };
                let g = Geometry {
                    test_len,
                    valid_len: test_len,
                    k,
                    min_ratio: 0.5,
                    transient: 0,
                    stride: None,
                };
                (g, false)
            }
        };
        if let Some(v) = self.test_len {
            g.test_len = v;
        }
        if let Some(v) = self.valid_len {
            g.valid_len = v;
        }
        if let Some(v) = self.k {
            g.k = v;
        }
        if let Some(v) = self.min_ratio {
            g.min_ratio = v;
        }
        g.stride = self.stride;
        g.transient = match self.transient {
            Some(t) => t,
            // Presets size the washout so the k folds tile the actual data.
            None if tile => tiling_transient(total, g.test_len, g.k, g.valid_len)
                .map_err(|e| config_err(format!("layout: {e}")))?,
            None => g.transient,
        };
        Ok(g)
    }

    fn plan(&self, scheme: SchemeKind, total: usize, g: &Geometry) -> Result<SplitPlan, Failure> {
        if let Some(splits) = &self.splits {
            let splits = splits
                .iter()
                .map(|s| Split {
                    train_ranges: s.train.iter().map(|r| StepRange::new(r[0], r[1])).collect(),
                    valid_range: StepRange::new(s.valid[0], s.valid[1]),
                })
                .collect();
            let trainval_end = total.saturating_sub(g.test_len);
            return Ok(SplitPlan::custom(scheme, total, trainval_end, g.transient, splits));
        }
        let mut req = PlanRequest::new(scheme, total, g.test_len, g.k)
            .with_transient(g.transient)
            .with_min_ratio(g.min_ratio)
            .with_valid_len(g.valid_len);
        if let Some(s) = g.stride {
            req = req.with_stride(s);
        }
        plan_splits(&req).map_err(|e| config_err(format!("layout ({scheme}): {e}")))
    }
}

/// Loaded but not yet normalized data.
enum Raw {
    Series(DMatrix<f64>),
    Sequences(esncv::datasets::SequenceDataset),
}

impl Raw {
    /// Number of task steps the data will provide.
    fn len(&self, task: TaskKind) -> usize {
        match self {
            Raw::Series(m) if task == TaskKind::Generative => m.ncols().saturating_sub(1),
            Raw::Series(m) => m.ncols(),
            Raw::Sequences(s) => s.len(),
        }
    }

    fn into_task(self, cfg: &RunConfig, task: TaskKind, trainval_end: usize) -> Result<TaskData, Failure> {
        match (self, task) {
            (Raw::Sequences(seqs), TaskKind::Classification) => {
                let mode = match cfg.task.features.to_ascii_lowercase().as_str() {
                    "last" => FeatureMode::LastState,
                    "mean" => FeatureMode::MeanState,
                    other => return Err(config_err(format!("task.features: unknown mode `{other}`"))),
                };
                Ok(TaskData::Sequences(seqs.into_task(mode).map_err(|e| data_err(e.to_string()))?))
            }
            (Raw::Sequences(_), _) => Err(config_err(format!("sequence data needs a classification task, not {task}"))),
            (Raw::Series(_), TaskKind::Classification) => {
                Err(config_err("classification needs sequence data (data.format = \"sequences\")"))
            }
            (Raw::Series(mut m), _) => {
                let kind: Normalization = cfg
                    .data
                    .as_ref()
                    .map(|d| d.normalization.as_str())
                    .unwrap_or("zscore")
                    .parse()
                    .map_err(|e| config_err(format!("data.normalization: {e}")))?;
                // A generative step n predicts sample n + 1, so the fit may
                // include the target of the last pre-test step.
                let fit_end = if task == TaskKind::Generative { trainval_end + 1 } else { trainval_end };
                let mut ds = esncv::datasets::SeriesDataset::new("data", std::mem::take(&mut m))
                    .map_err(|e| data_err(e.to_string()))?;
                ds.normalize(kind, StepRange::new(0, fit_end))
                    .map_err(|e| data_err(e.to_string()))?;
                let m = ds.values;
                let series = if task == TaskKind::Generative {
                    SeriesTask::one_step_ahead(&m)
                } else {
                    let pick = |rows: &Option<Vec<usize>>, what: &str| -> Result<DMatrix<f64>, Failure> {
                        let rows = rows
                            .as_ref()
                            .ok_or_else(|| config_err(format!("task.{what} is required for output tasks")))?;
                        if rows.is_empty() || rows.iter().any(|&r| r >= m.nrows()) {
                            return Err(config_err(format!(
                                "task.{what}: rows must be nonempty and below {}",
                                m.nrows()
                            )));
                        }
                        Ok(m.select_rows(rows.iter()))
                    };
                    SeriesTask::new(pick(&cfg.task.inputs, "inputs")?, pick(&cfg.task.targets, "targets")?)
                };
                Ok(TaskData::Series(series.map_err(|e| data_err(e.to_string()))?))
            }
        }
    }
}

fn load_raw(d: &DataConfig, base: &Path) -> Result<Raw, Failure> {
    let delimiter = match d.delimiter.as_str() {
        "tab" | "\t" => b'\t',
        s if s.len() == 1 => s.as_bytes()[0],
        s => return Err(config_err(format!("data.delimiter: expected one character or \"tab\", got {s:?}"))),
    };
    let format = SeriesFormat {
        delimiter,
        header: d.header,
        columns: d.columns.clone(),
    };
    match (&d.builtin, &d.path) {
        (Some(_), Some(_)) => Err(config_err("data: give either builtin or path, not both")),
        (None, None) => Err(config_err("data: either builtin or path is required")),
        (Some(name), None) => {
            if name != "toy" {
                return Err(config_err(format!("data.builtin: unknown dataset `{name}` (only `toy` is bundled)")));
            }
            let values: Vec<f64> = TOY_SERIES.lines().map(|l| l.trim().parse().expect("bundled toy series")).collect();
            Ok(Raw::Series(DMatrix::from_row_slice(1, values.len(), &values)))
        }
        (None, Some(p)) => {
            let path = if p.is_absolute() { p.clone() } else { base.join(p) };
            match d.format.to_ascii_lowercase().as_str() {
                "series" => Ok(Raw::Series(load_series(&path, &format).map_err(|e| data_err(e.to_string()))?.values)),
                "sequences" => Ok(Raw::Sequences(load_sequences(&path).map_err(|e| data_err(e.to_string()))?)),
                "japanese-vowels" => {
                    let (train, test) = load_japanese_vowels(&path).map_err(|e| data_err(e.to_string()))?;
                    Ok(Raw::Sequences(train.concat(&test)))
                }
                other => Err(config_err(format!(
                    "data.format: unknown format `{other}` (expected series, sequences or japanese-vowels)"
                ))),
            }
        }
    }
}
