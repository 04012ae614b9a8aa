//! The `run` and `validate-plan` commands and their reports.
//!
//! `report.csv` and `report.md` depend only on the config and data, so a
//! rerun reproduces them byte for byte. Wall-clock times go to the separate
//! `timing.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use esncv::datasets::format_f64;
use esncv::search::{evaluate_test, finalize, grid_search, FinalizeMode};
use esncv::validation::{RunCounters, SplitPlan};
use esncv::ErrorCategory;

use crate::config::{applies, Overrides, RunConfig};
use crate::{Failure, OUTPUT_DIR_ENV};

/// Result of one seed under one finalization mode.
struct SeedOutcome {
    valid_error: f64,
    test_nrmse: f64,
    misclassifications: Option<usize>,
    leaking_rate: f64,
    spectral_radius: f64,
    beta: f64,
    counters: RunCounters,
}

/// One report row: a scheme and finalization mode over all seeds.
struct Row {
    scheme: String,
    mode: FinalizeMode,
    outcomes: Vec<SeedOutcome>,
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(ErrorCategory::Config, format!("cannot write {}: {e}", path.display()))
}

pub fn cmd_run(path: &Path, threads: Option<usize>, seed: Option<u64>) -> Result<(), Failure> {
    let (cfg, base) = RunConfig::load(path)?;
    let overrides = Overrides {
        seed,
        threads,
        output_dir: std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from),
    };
    let exp = cfg.resolve(&base, &overrides)?;
    let mut rows = Vec::new();
    let mut timing = String::from("scheme,seed,seconds\n");
    for plan in &exp.plans {
        let modes: Vec<FinalizeMode> = exp.finalize.iter().copied().filter(|&m| applies(m, plan.scheme)).collect();
        let mut per_mode: Vec<Vec<SeedOutcome>> = modes.iter().map(|_| Vec::new()).collect();
        for &s in &exp.seeds {
            let started = Instant::now();
            let space = exp.space.clone().with_seeds(vec![s]);
            let result = grid_search(&space, &exp.data, plan, exp.task, &exp.opts)?;
            let best = *result.best_candidate();
            log::info!("{} seed {s}: {best} valid {:.6}", plan.scheme, result.valid_error());
            for (i, &mode) in modes.iter().enumerate() {
                let readout = finalize(mode, exp.opts.ireg, &result.outcome, &result.weights, &exp.data, plan)?;
                let report = evaluate_test(
                    &result.weights,
                    &readout,
                    &exp.data,
                    plan,
                    exp.task,
                    result.outcome.trainval_end_state.as_ref(),
                )?;
                per_mode[i].push(SeedOutcome {
                    valid_error: result.valid_error(),
                    test_nrmse: report.nrmse,
                    misclassifications: report.misclassifications,
                    leaking_rate: best.leaking_rate,
                    spectral_radius: best.spectral_radius,
                    beta: readout.beta,
                    counters: result.counters,
                });
            }
            let _ = writeln!(timing, "{},{s},{:.6}", plan.scheme, started.elapsed().as_secs_f64());
        }
        for (mode, outcomes) in modes.into_iter().zip(per_mode) {
            rows.push(Row {
                scheme: plan.scheme.to_string(),
                mode,
                outcomes,
            });
        }
    }

    let dir = &exp.output_dir;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let files = [
        ("report.csv", report_csv(&rows)),
        ("report.md", report_md(&rows, &exp.plans, exp.task)),
        ("timing.csv", timing),
    ];
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| io_err(&p, e))?;
    }
    print!("{}", report_md(&rows, &exp.plans, exp.task));
    println!("\nreports written to {}", dir.display());
    Ok(())
}

/// Mean and sample standard deviation; the deviation of one value is zero.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn joined(outcomes: &[SeedOutcome], f: impl Fn(&SeedOutcome) -> f64) -> String {
    outcomes.iter().map(|o| format_f64(f(o))).collect::<Vec<_>>().join(";")
}

fn totals(outcomes: &[SeedOutcome]) -> RunCounters {
    let mut c = RunCounters::default();
    for o in outcomes {
        c += o.counters;
    }
    c
}

fn report_csv(rows: &[Row]) -> String {
    let mut out = String::from(
        "scheme,finalize,seeds,valid_error,test_nrmse,test_nrmse_std,test_misclassifications,\
         leaking_rates,spectral_radii,betas,driven_updates,free_run_updates\n",
    );
    for r in rows {
        let valid: Vec<f64> = r.outcomes.iter().map(|o| o.valid_error).collect();
        let test: Vec<f64> = r.outcomes.iter().map(|o| o.test_nrmse).collect();
        let (test_mean, test_std) = mean_std(&test);
        let miss: Vec<f64> = r
            .outcomes
            .iter()
            .filter_map(|o| o.misclassifications.map(|m| m as f64))
            .collect();
        let miss = if miss.is_empty() { String::new() } else { format_f64(mean_std(&miss).0) };
        let c = totals(&r.outcomes);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme,
            r.mode,
            r.outcomes.len(),
            format_f64(mean_std(&valid).0),
            format_f64(test_mean),
            format_f64(test_std),
            miss,
            joined(&r.outcomes, |o| o.leaking_rate),
            joined(&r.outcomes, |o| o.spectral_radius),
            joined(&r.outcomes, |o| o.beta),
            c.driven_updates,
            c.free_run_updates,
        );
    }
    out
}

fn report_md(rows: &[Row], plans: &[SplitPlan], task: esncv::TaskKind) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# esncv report\n\nTask: {task}\n");
    let _ = writeln!(out, "| scheme | splits | finalize | valid error | test NRMSE | misclassified | driven updates |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|");
    for r in rows {
        let splits = plans
            .iter()
            .find(|p| p.scheme.to_string() == r.scheme)
            .map_or(0, |p| p.splits.len());
        let valid: Vec<f64> = r.outcomes.iter().map(|o| o.valid_error).collect();
        let test: Vec<f64> = r.outcomes.iter().map(|o| o.test_nrmse).collect();
        let (m, s) = mean_std(&test);
        let miss: Vec<f64> = r
            .outcomes
            .iter()
            .filter_map(|o| o.misclassifications.map(|m| m as f64))
            .collect();
        let miss = if miss.is_empty() {
            "-".to_string()
        } else {
            format!("{:.1}", mean_std(&miss).0)
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.4} | {:.4} ± {:.4} | {} | {} |",
            r.scheme,
            splits,
            r.mode,
            mean_std(&valid).0,
            m,
            s,
            miss,
            totals(&r.outcomes).driven_updates
        );
    }
    out
}

pub fn cmd_validate_plan(path: &Path) -> Result<(), Failure> {
    let (cfg, base) = RunConfig::load(path)?;
    let plans = cfg.plans_for_check(&base)?;
    let mut first_violation = None;
    for plan in &plans {
        println!(
            "{}: {} splits, {} steps, transient {}, test {}",
            plan.scheme,
            plan.splits.len(),
            plan.total_steps,
            plan.transient,
            plan.test_range()
        );
        for (i, s) in plan.splits.iter().enumerate() {
            let train: Vec<String> = s.train_ranges.iter().map(ToString::to_string).collect();
            println!("  split {i}: train {} valid {}", train.join(" "), s.valid_range);
        }
        let violations = plan.check();
        if violations.is_empty() {
            println!("  invariants: ok");
        }
        for v in &violations {
            println!("  violation {}: {v}", v.code());
        }
        if first_violation.is_none() {
            if let Some(v) = violations.first() {
                first_violation = Some(format!("{} plan violates {}: {v}", plan.scheme, v.code()));
            }
        }
    }
    match first_violation {
        Some(msg) => Err(Failure::new(ErrorCategory::Config, msg)),
        None => Ok(()),
    }
}
