//! Scenario files, run/compare command implementations, and the CSV
//! outputs they write.
//!
//! A scenario file is `key = value` lines with `#` comments. Unknown
//! keys are rejected; omitted keys take their defaults. Precedence for
//! the effective config: `--set key=value` overrides beat the
//! `SDSIM_SEED` environment variable, which beats the file, which
//! beats the defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sdsim_core::metrics::MetricsReport;
use sdsim_core::simnet::{self, ScenarioConfig, SimOptions, Simulation};

/// Name of the environment variable that overrides the file seed.
pub const SEED_ENV_VAR: &str = "SDSIM_SEED";

#[derive(Debug, PartialEq, Eq)]
pub enum KeySource {
    Line(usize),
    Override,
    Environment,
}

impl std::fmt::Display for KeySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KeySource::Line(line) => write!(f, "line {line}"),
            KeySource::Override => write!(f, "--set override"),
            KeySource::Environment => write!(f, "{SEED_ENV_VAR} environment variable"),
        }
    }
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioFileError {
    #[error("unknown key `{key}` ({at})")]
    UnknownKey { key: String, at: KeySource },
    #[error("value for `{key}` has the wrong type ({at})")]
    TypeError { key: String, at: KeySource },
    #[error("value for `{key}` is out of range: {reason}")]
    RangeError { key: String, reason: String },
    #[error("line {line} is not a `key = value` assignment")]
    MalformedLine { line: usize },
}

/// Parse a scenario file into a validated config, defaults filled in.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ScenarioFileError> {
    let mut cfg = ScenarioConfig::default();
    for (index, raw_line) in text.lines().enumerate() {
        let line_number = index + 1;
        let line = match raw_line.find('#') {
            Some(at) => &raw_line[..at],
            None => raw_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ScenarioFileError::MalformedLine { line: line_number })?;
        apply_key(
            &mut cfg,
            key.trim(),
            value.trim(),
            KeySource::Line(line_number),
        )?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ScenarioConfig) -> Result<(), ScenarioFileError> {
    cfg.validate().map_err(|e| ScenarioFileError::RangeError {
        key: e.key.to_string(),
        reason: e.reason,
    })
}

/// Apply one `key = value` assignment from any source.
pub fn apply_key(
    cfg: &mut ScenarioConfig,
    key: &str,
    value: &str,
    at: KeySource,
) -> Result<(), ScenarioFileError> {
    fn parse<T: std::str::FromStr>(
        key: &str,
        value: &str,
        at: KeySource,
    ) -> Result<T, ScenarioFileError> {
        value.parse().map_err(|_| ScenarioFileError::TypeError {
            key: key.to_string(),
            at,
        })
    }
    match key {
        "seed" => cfg.seed = parse(key, value, at)?,
        "num_nodes" => cfg.num_nodes = parse(key, value, at)?,
        "num_services" => cfg.num_services = parse(key, value, at)?,
        "sim_duration_s" => cfg.sim_duration_s = parse(key, value, at)?,
        "broadcast_enabled" => cfg.broadcast_enabled = parse(key, value, at)?,
        "store_probability" => cfg.store_probability = parse(key, value, at)?,
        "link_probability" => cfg.link_probability = parse(key, value, at)?,
        "link_repair" => cfg.link_repair = parse(key, value, at)?,
        "churn_interval_s" => cfg.churn_interval_s = parse(key, value, at)?,
        "churn_probability" => cfg.churn_probability = parse(key, value, at)?,
        "max_requests_per_tick" => cfg.max_requests_per_tick = parse(key, value, at)?,
        "per_hop_delay_s" => cfg.per_hop_delay_s = parse(key, value, at)?,
        "broadcast_period_s" => cfg.broadcast_period_s = parse(key, value, at)?,
        "sreq_ttl" => cfg.sreq_ttl = parse(key, value, at)?,
        "service_lifetime_s" => cfg.service_lifetime_s = parse(key, value, at)?,
        "max_ust_entries" => cfg.max_ust_entries = parse(key, value, at)?,
        "bucket_width_s" => cfg.bucket_width_s = parse(key, value, at)?,
        other => {
            return Err(ScenarioFileError::UnknownKey {
                key: other.to_string(),
                at,
            })
        }
    }
    Ok(())
}

/// Serialize a config as a complete scenario file; parsing it back
/// yields the same config.
pub fn serialize_config(cfg: &ScenarioConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# Scenario parameters; omitted keys take these defaults."
    );
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "num_nodes = {}", cfg.num_nodes);
    let _ = writeln!(out, "num_services = {}", cfg.num_services);
    let _ = writeln!(out, "sim_duration_s = {}", cfg.sim_duration_s);
    let _ = writeln!(out, "broadcast_enabled = {}", cfg.broadcast_enabled);
    let _ = writeln!(out, "store_probability = {}", cfg.store_probability);
    let _ = writeln!(out, "link_probability = {}", cfg.link_probability);
    let _ = writeln!(out, "link_repair = {}", cfg.link_repair);
    let _ = writeln!(out, "churn_interval_s = {}", cfg.churn_interval_s);
    let _ = writeln!(out, "churn_probability = {}", cfg.churn_probability);
    let _ = writeln!(out, "max_requests_per_tick = {}", cfg.max_requests_per_tick);
    let _ = writeln!(out, "per_hop_delay_s = {}", cfg.per_hop_delay_s);
    let _ = writeln!(out, "broadcast_period_s = {}", cfg.broadcast_period_s);
    let _ = writeln!(out, "sreq_ttl = {}", cfg.sreq_ttl);
    let _ = writeln!(out, "service_lifetime_s = {}", cfg.service_lifetime_s);
    let _ = writeln!(out, "max_ust_entries = {}", cfg.max_ust_entries);
    let _ = writeln!(out, "bucket_width_s = {}", cfg.bucket_width_s);
    out
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read config `{path}`: {source}")]
    ReadConfig {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write `{path}`: {source}")]
    WriteOutput {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioFileError),
    #[error(transparent)]
    Config(#[from] simnet::ConfigError),
}

/// Load a config file and apply the environment seed override plus
/// `--set` overrides, in increasing precedence.
pub fn load_config(
    path: &Path,
    overrides: &[(String, String)],
) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    if let Ok(seed_text) = std::env::var(SEED_ENV_VAR) {
        apply_key(&mut cfg, "seed", &seed_text, KeySource::Environment)?;
    }
    for (key, value) in overrides {
        apply_key(&mut cfg, key, value, KeySource::Override)?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::WriteOutput {
        path: path.display().to_string(),
        source,
    })
}

/// `run` command: execute one scenario and write `histogram.csv`,
/// `summary.csv`, and (with `trace`) `trace.log` into `out_dir`.
/// Returns the report; the caller prints nothing else on failure.
pub fn cmd_run(
    config_path: &Path,
    out_dir: &Path,
    trace: bool,
    overrides: &[(String, String)],
) -> Result<MetricsReport, CliError> {
    let cfg = load_config(config_path, overrides)?;
    fs::create_dir_all(out_dir).map_err(|source| CliError::WriteOutput {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut sim = Simulation::with_options(
        &cfg,
        SimOptions {
            record_trace: trace,
            ..SimOptions::default()
        },
    )?;
    sim.run_to_end();
    let report = sim.report();
    write_file(&out_dir.join("histogram.csv"), &report.histogram_csv())?;
    write_file(&out_dir.join("summary.csv"), &report.summary_csv())?;
    if trace {
        let mut log = sim.trace_lines().join("\n");
        if !log.is_empty() {
            log.push('\n');
        }
        write_file(&out_dir.join("trace.log"), &log)?;
    }
    Ok(report)
}

/// Both arms of one seed of the paired experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedComparison {
    pub seed: u64,
    pub broadcast: MetricsReport,
    pub no_broadcast: MetricsReport,
}

impl SeedComparison {
    /// Fraction of generated requests answered within the first
    /// histogram bucket, per arm.
    pub fn fractions(&self) -> (f64, f64) {
        (
            first_bucket_fraction(&self.broadcast),
            first_bucket_fraction(&self.no_broadcast),
        )
    }

    pub fn difference(&self) -> f64 {
        let (with, without) = self.fractions();
        with - without
    }
}

pub fn first_bucket_fraction(report: &MetricsReport) -> f64 {
    if report.total_requests == 0 {
        0.0
    } else {
        report.first_bucket_count() as f64 / report.total_requests as f64
    }
}

/// Run the paired with/without-broadcast experiment over
/// `seed_count` derived seeds (base seed + index). The broadcast flag
/// is the only difference between the arms: topology, churn, service
/// placement, and workload draws come from named streams keyed by the
/// seed alone, so both arms share them exactly.
pub fn run_compare(cfg: &ScenarioConfig, seed_count: u32) -> Result<Vec<SeedComparison>, CliError> {
    let mut comparisons = Vec::with_capacity(seed_count as usize);
    for index in 0..seed_count {
        let seed = cfg.seed.wrapping_add(u64::from(index));
        let arm = |broadcast_enabled: bool| -> Result<MetricsReport, CliError> {
            let arm_cfg = ScenarioConfig {
                seed,
                broadcast_enabled,
                ..cfg.clone()
            };
            Ok(simnet::run(&arm_cfg)?)
        };
        comparisons.push(SeedComparison {
            seed,
            broadcast: arm(true)?,
            no_broadcast: arm(false)?,
        });
    }
    Ok(comparisons)
}

/// `seed,arm,bucket_start_s,bucket_end_s,count` over every seed, arm,
/// and bucket.
pub fn compare_csv(comparisons: &[SeedComparison]) -> String {
    let mut out = String::from("seed,arm,bucket_start_s,bucket_end_s,count\n");
    for comparison in comparisons {
        for (arm, report) in [
            ("broadcast", &comparison.broadcast),
            ("no_broadcast", &comparison.no_broadcast),
        ] {
            for bucket in &report.histogram {
                let _ = writeln!(
                    out,
                    "{},{arm},{:.3},{:.3},{}",
                    comparison.seed, bucket.start, bucket.end, bucket.count
                );
            }
        }
    }
    out
}

/// Per-seed first-bucket fractions plus a final `mean` row carrying
/// the paired mean difference.
pub fn compare_summary_csv(comparisons: &[SeedComparison]) -> String {
    let mut out = String::from("seed,broadcast_fraction,no_broadcast_fraction,difference\n");
    let mut sum_with = 0.0;
    let mut sum_without = 0.0;
    for comparison in comparisons {
        let (with, without) = comparison.fractions();
        sum_with += with;
        sum_without += without;
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            comparison.seed,
            with,
            without,
            with - without
        );
    }
    let n = comparisons.len().max(1) as f64;
    let _ = writeln!(
        out,
        "mean,{:.6},{:.6},{:.6}",
        sum_with / n,
        sum_without / n,
        (sum_with - sum_without) / n
    );
    out
}

/// `compare` command: paired experiment, `compare.csv` plus
/// `compare_summary.csv` in `out_dir`.
pub fn cmd_compare(
    config_path: &Path,
    out_dir: &Path,
    seed_count: u32,
) -> Result<Vec<SeedComparison>, CliError> {
    let cfg = load_config(config_path, &[])?;
    fs::create_dir_all(out_dir).map_err(|source| CliError::WriteOutput {
        path: out_dir.display().to_string(),
        source,
    })?;
    let comparisons = run_compare(&cfg, seed_count)?;
    write_file(&out_dir.join("compare.csv"), &compare_csv(&comparisons))?;
    write_file(
        &out_dir.join("compare_summary.csv"),
        &compare_summary_csv(&comparisons),
    )?;
    Ok(comparisons)
}
