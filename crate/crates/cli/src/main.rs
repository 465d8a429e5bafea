use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdsim::{cmd_compare, cmd_run, serialize_config, SEED_ENV_VAR};
use sdsim_core::simnet::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "sdsim",
    about = "Service discovery simulator for ad-hoc networks",
    long_about = "Runs seeded discrete-event experiments over the push/pull \
service discovery protocol and reports request-acquisition-latency histograms.\n\
Precedence for parameters: --set overrides, then the SDSIM_SEED environment \
variable (seed only), then the scenario file, then built-in defaults."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; writes histogram.csv and summary.csv.
    Run {
        /// Scenario file (`key = value` lines, `#` comments).
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write trace.log with one line per executed event.
        #[arg(long)]
        trace: bool,
        /// Override a scenario key, e.g. --set num_nodes=100.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Paired with/without-broadcast experiment over derived seeds;
    /// writes compare.csv and compare_summary.csv.
    Compare {
        /// Scenario file.
        config: PathBuf,
        /// Number of derived seeds (base seed + index).
        #[arg(long, default_value_t = 1)]
        seeds: u32,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Emit the all-defaults scenario file.
    PrintConfig,
}

fn split_overrides(pairs: &[String]) -> Result<Vec<(String, String)>, String> {
    pairs
        .iter()
        .map(|pair| {
            pair.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("--set expects KEY=VALUE, got `{pair}`"))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            trace,
            set,
        } => {
            let overrides = match split_overrides(&set) {
                Ok(overrides) => overrides,
                Err(message) => {
                    eprintln!("sdsim: {message}");
                    return ExitCode::FAILURE;
                }
            };
            match cmd_run(&config, &out, trace, &overrides) {
                Ok(report) => {
                    println!("{}", report.summary_line());
                    ExitCode::SUCCESS
                }
                Err(error) => {
                    eprintln!("sdsim: {error}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Compare { config, seeds, out } => {
            if seeds == 0 {
                eprintln!("sdsim: --seeds must be at least 1");
                return ExitCode::FAILURE;
            }
            match cmd_compare(&config, &out, seeds) {
                Ok(comparisons) => {
                    for comparison in &comparisons {
                        let (with, without) = comparison.fractions();
                        println!(
                            "seed={} first_bucket broadcast={:.3} no_broadcast={:.3} diff={:+.3}",
                            comparison.seed,
                            with,
                            without,
                            comparison.difference()
                        );
                    }
                    let n = comparisons.len() as f64;
                    let mean: f64 = comparisons.iter().map(|c| c.difference()).sum::<f64>() / n;
                    println!("mean paired difference: {mean:+.4}");
                    ExitCode::SUCCESS
                }
                Err(error) => {
                    eprintln!("sdsim: {error}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::PrintConfig => {
            print!("{}", serialize_config(&ScenarioConfig::default()));
            println!("# Seed can also be overridden via {SEED_ENV_VAR}.");
            ExitCode::SUCCESS
        }
    }
}
