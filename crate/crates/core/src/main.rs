use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spinhall::harness::{self, Options, Outcome};

/// Spin Chern numbers and spin edge currents for quantum spin Hall models.
///
/// Exit codes: 0 success, 2 invalid config or budget exceeded, 3 numerical
/// guard (the guard name is printed), 1 I/O failure.
#[derive(Parser)]
#[command(name = "spinhall", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, env = "SPINHALL_THREADS")]
    threads: Option<usize>,

    /// Run even if the estimated cost exceeds the budget.
    #[arg(long, global = true)]
    force_budget: bool,
}

#[derive(Subcommand)]
enum Verb {
    /// Execute the configured task once.
    Run,
    /// Execute the task on every point of the config's sweep grid.
    Sweep,
    /// Check the config (schema, ranges, budget) without computing.
    Validate,
    /// Re-render plot data from the CSV files of an output directory.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let opts = Options { out: cli.out.clone(), force_budget: cli.force_budget };
    let outcome = match (&cli.verb, &cli.config) {
        (Verb::Report, _) => match report_dir(&cli) {
            Some(dir) => harness::report(&dir),
            None => usage("report needs --out <dir> or --config <path>"),
        },
        (_, None) => usage("--config <path> is required"),
        (Verb::Run, Some(c)) => harness::run(c, &opts),
        (Verb::Sweep, Some(c)) => harness::sweep(c, &opts),
        (Verb::Validate, Some(c)) => harness::validate(c, &opts),
    };
    if outcome.code == 0 {
        println!("{}", outcome.message);
    } else {
        eprintln!("error: {}", outcome.message);
    }
    ExitCode::from(outcome.code as u8)
}

fn report_dir(cli: &Cli) -> Option<PathBuf> {
    if let Some(out) = &cli.out {
        return Some(out.clone());
    }
    let text = std::fs::read_to_string(cli.config.as_ref()?).ok()?;
    harness::ExperimentConfig::from_json(&text).ok()?.output_dir
}

fn usage(msg: &str) -> Outcome {
    Outcome { code: 2, message: msg.into(), guard: None }
}
