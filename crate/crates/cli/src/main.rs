//! `esncv`: run echo state network experiments from config files, check
//! split plans, and benchmark efficient against naive cross-validation.

mod bench;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use esncv::ErrorCategory;

/// Overrides `run.output_dir` and the bench output directory.
pub const OUTPUT_DIR_ENV: &str = "ESNCV_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "esncv", version, about = "Echo state networks with efficient time-series cross-validation")]
struct Cli {
    /// Worker threads for the candidate search.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reservoir seed, replacing the seeds of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment of a config file and write its reports.
    Run { config: PathBuf },
    /// Print the split plans of a config and check their invariants.
    ValidatePlan { config: PathBuf },
    /// Time efficient against naive cross-validation on synthetic data.
    Bench(bench::BenchArgs),
}

/// A failure reported as one `error[category]: message` line.
#[derive(Debug)]
pub struct Failure {
    pub category: ErrorCategory,
    pub message: String,
}

impl Failure {
    pub fn new(category: ErrorCategory, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.category {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numerical => 4,
        }
    }
}

impl<E: Into<esncv::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e: esncv::Error = e.into();
        Failure::new(e.category(), e.to_string())
    }
}

fn category_name(c: ErrorCategory) -> &'static str {
    match c {
        ErrorCategory::Config => "config",
        ErrorCategory::Data => "data",
        ErrorCategory::Numerical => "numerical",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run { config } => run::cmd_run(&config, cli.threads, cli.seed),
        Command::ValidatePlan { config } => run::cmd_validate_plan(&config),
        Command::Bench(args) => bench::cmd_bench(&args, cli.threads, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = f.message.lines().map(str::trim).collect::<Vec<_>>().join("; ");
            eprintln!("error[{}]: {msg}", category_name(f.category));
            ExitCode::from(f.exit_code())
        }
    }
}
