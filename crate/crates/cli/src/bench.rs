//! The `bench` command: wall time and reservoir update counts of efficient
//! and naive cross-validation as the number of folds grows.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use esncv::validation::{
    plan_splits, run_efficient_cv, run_naive_cv, CvConfig, CvOutcome, PlanRequest, SchemeKind,
};
use esncv::{generate_reservoir, ReservoirParams, SeriesTask, TaskData, TaskKind};
use esncv::ErrorCategory;
use nalgebra::DMatrix;

use crate::{Failure, OUTPUT_DIR_ENV};

#[derive(Args)]
pub struct BenchArgs {
    /// Length of the synthetic series.
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    /// Reservoir size.
    #[arg(long, default_value_t = 50)]
    size: usize,
    /// Comma-separated fold counts.
    #[arg(long, value_delimiter = ',', default_values_t = [2, 5, 10, 20])]
    folds: Vec<usize>,
    /// Repetitions per measurement; the median time is reported.
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value = "kfold-cv")]
    scheme: String,
    /// Ridge value of the fitted readouts.
    #[arg(long, default_value_t = 1e-6)]
    beta: f64,
    /// Output directory for bench.csv; defaults to the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::new(ErrorCategory::Config, msg)
}

/// A deterministic output task: a chaotic logistic-map input and a target
/// needing a few steps of memory.
fn synthetic_task(steps: usize) -> Result<TaskData, Failure> {
    let mut u = Vec::with_capacity(steps);
    let mut x = 0.3_f64;
    for _ in 0..steps {
        x = 3.9 * x * (1.0 - x);
        u.push(x - 0.5);
    }
    let y: Vec<f64> = (0..steps)
        .map(|n| {
            let back = |d: usize| if n >= d { u[n - d] } else { 0.0 };
            0.6 * back(1) * back(2) + 0.3 * back(3) + 0.1 * u[n]
        })
        .collect();
    let task = SeriesTask::new(
        DMatrix::from_row_slice(1, steps, &u),
        DMatrix::from_row_slice(1, steps, &y),
    )?;
    Ok(TaskData::Series(task))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Largest relative Frobenius difference between matching split readouts.
fn max_readout_diff(a: &CvOutcome, b: &CvOutcome) -> f64 {
    let mut worst = 0.0_f64;
    for (sa, sb) in a.splits.iter().zip(&b.splits) {
        for i in 0..sa.fits.len() {
            match (sa.readout(i), sb.readout(i)) {
                (Some(ra), Some(rb)) => {
                    let scale = rb.w_out.norm().max(f64::MIN_POSITIVE);
                    worst = worst.max((&ra.w_out - &rb.w_out).norm() / scale);
                }
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}

pub fn cmd_bench(args: &BenchArgs, threads: Option<usize>, seed: Option<u64>) -> Result<(), Failure> {
    if args.folds.is_empty() || args.folds.contains(&0) {
        return Err(config_err("--folds: give one or more positive fold counts"));
    }
    if args.reps == 0 {
        return Err(config_err("--reps must be at least 1"));
    }
    if let Some(n) = threads {
        if n == 0 {
            return Err(config_err("--threads must be at least 1"));
        }
        // The engines parallelize over splits in the global pool.
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_err(e.to_string()))?;
    }
    let scheme: SchemeKind = args.scheme.parse().map_err(|e| config_err(format!("--scheme: {e}")))?;
    let data = synthetic_task(args.steps)?;
    let mut params = ReservoirParams::new(args.size, 1, 1);
    params.leaking_rate = 0.5;
    params.spectral_radius = 0.9;
    params.seed = seed.unwrap_or(1);
    let weights = generate_reservoir(&params)?;
    let transient = (args.steps / 20).min(100);
    let cfg = CvConfig::new(vec![args.beta]);

    let mut csv = String::from("k,engine,splits,median_seconds,driven_updates,free_run_updates,max_w_out_rel_diff\n");
    println!(
        "{:>5} {:>10} {:>7} {:>12} {:>14} {:>14} {:>12}",
        "k", "engine", "splits", "median s", "driven", "free-run", "W_out diff"
    );
    for &k in &args.folds {
        let valid_len = ((args.steps - transient.min(args.steps)) / (2 * k)).max(1);
        let plan = plan_splits(
            &PlanRequest::new(scheme, args.steps, 0, k)
                .with_transient(transient)
                .with_valid_len(valid_len),
        )?;
        let mut times = [Vec::new(), Vec::new()];
        let mut outcomes = [None, None];
        for _ in 0..args.reps {
            let t = Instant::now();
            let eff = run_efficient_cv(&weights, &data, &plan, TaskKind::Output, &cfg)?;
            times[0].push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            let naive = run_naive_cv(&weights, &data, &plan, TaskKind::Output, &cfg)?;
            times[1].push(t.elapsed().as_secs_f64());
            outcomes = [Some(eff), Some(naive)];
        }
        let [Some(eff), Some(naive)] = outcomes else {
            unreachable!("at least one repetition ran")
        };
        let diff = max_readout_diff(&eff, &naive);
        for (engine, outcome, t) in [("efficient", &eff, &times[0]), ("naive", &naive, &times[1])] {
            let secs = median(t.clone());
            let c = outcome.counters;
            let _ = writeln!(
                csv,
                "{k},{engine},{},{secs:.6},{},{},{diff:.3e}",
                plan.splits.len(),
                c.driven_updates,
                c.free_run_updates
            );
            println!(
                "{k:>5} {engine:>10} {:>7} {secs:>12.4} {:>14} {:>14} {diff:>12.3e}",
                plan.splits.len(),
                c.driven_updates,
                c.free_run_updates
            );
        }
    }
    let dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| config_err(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join("bench.csv");
    std::fs::write(&path, csv).map_err(|e| config_err(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}
