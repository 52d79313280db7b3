//! `nlpot`: batch runs of Wolff potentials, measure-data `p`-Laplace solves,
//! monotone iterations and inequality checks.
//!
//! ```text
//! nlpot --config run.cfg --out runs/a --threads 4 --seed 7
//! ```
//!
//! Exit status: 0 success, 2 config error, 3 numerical failure, 4 invariant
//! violation.

mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;

use config::RunConfig;
use error::CliError;
use run::Artifacts;

#[derive(Parser, Debug)]
#[command(name = "nlpot", version, about = "Nonlinear potential toolkit: batch runs from a key = value config")]
struct Args {
    /// Run configuration (`key = value` lines, `#` comments).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for randomized suites; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(args: &Args) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("nlpot-out"));
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("flag `--threads`: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(format!("flag `--threads`: {e}")))?;
    }
    let art = Artifacts::create(&out, cfg.write_fields)?;
    let start = Instant::now();
    let result = run::run(&cfg, &art);
    let timing = json!({
        "elapsed_seconds": start.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
    });
    art.write_json("timing.json", &timing)?;
    match result {
        Ok(r) => {
            art.write_json("summary.json", &r.summary)?;
            match r.failure {
                Some(msg) => Err(CliError::Invariant(msg)),
                None => Ok(()),
            }
        }
        Err(e) => {
            let summary = json!({ "command": cfg.command, "status": "error", "exit_code": e.exit_code(), "error": e.to_string() });
            art.write_json("summary.json", &summary)?;
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nlpot: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
