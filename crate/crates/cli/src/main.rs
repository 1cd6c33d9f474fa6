use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use evcs::config::PolicySelection;
use evcs::{load_config, run, Error, RunConfig, RunOptions, Stage};

/// Day-ahead congestion pricing for EV charging stations.
#[derive(Debug, Parser)]
#[command(name = "evcs", version)]
struct Cli {
    #[arg(value_enum)]
    stage: Stage,
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding earlier stages' artifacts (default: the output directory).
    #[arg(long, global = true)]
    stage_input: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    policy: Option<PolicySelection>,
    #[arg(long, value_enum, global = true)]
    oracle: Option<Switch>,
    /// Keep the per-iteration dual trace in solve/duals.json.
    #[arg(long, global = true)]
    verbose_trace: bool,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn execute(cli: &Cli) -> Result<Vec<String>, Error> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(policy) = cli.policy {
        config.simulation.policies = policy;
    }
    if let Some(oracle) = cli.oracle {
        config.simulation.oracle = matches!(oracle, Switch::On);
    }
    let options = RunOptions {
        stage_input: cli.stage_input.clone(),
        verbose_trace: cli.verbose_trace,
        threads: cli.threads,
    };
    run(&config, cli.stage, &options)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = serde_json::json!({ "error": e.report() });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
