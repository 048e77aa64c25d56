use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use orca_core::agent::Policy;

#[derive(Debug, Parser)]
#[command(name = "orca", version, about = "Closed-loop video agent episodes, benchmark suites and annotation service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and write its trace.
    Run(RunArgs),
    /// Run a suite over policies, seeds and noise settings.
    Bench(BenchArgs),
    /// Compute the metrics report from a trace directory.
    Metrics(MetricsArgs),
    /// Serve cases to annotators and collect their judgements.
    Serve(ServeArgs),
    /// Check task files against the schema and list every violation.
    ValidateTask(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Scripted,
    Remote,
}

#[derive(Debug, Args)]
pub struct AgentArgs {
    /// Regenerations allowed per turn after the first attempt.
    #[arg(long, default_value_t = 2)]
    pub n_retry: u32,
    /// Turn budget; defaults to twice the subgoal count plus four.
    #[arg(long)]
    pub max_turns: Option<u32>,
    #[arg(long, value_enum, default_value_t = Backend::Scripted)]
    pub backend: Backend,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task file, or the id of a built-in task.
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value = "orca", value_parser = parse_policy)]
    pub policy: Policy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub p_wrong: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p_omit: f64,
    /// Share of corruptions confined to a window of frames.
    #[arg(long, default_value_t = 0.25)]
    pub transient_fraction: f64,
    #[command(flatten)]
    pub agent: AgentArgs,
    /// Trace file; the trace goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Suite file, or `desk` for the built-in ten tasks.
    #[arg(long)]
    pub suite: String,
    /// Comma-separated policies; defaults to the suite's list, else all four.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    pub policy: Vec<Policy>,
    /// `0..20`, `0..=19` or `1,5,9`; defaults to the suite's seeds, else `0..10`.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Seeds>,
    /// Comma-separated values; several values form a grid with the other noise flags.
    #[arg(long, value_delimiter = ',')]
    pub p_wrong: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub p_omit: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub transient_fraction: Vec<f64>,
    #[command(flatten)]
    pub agent: AgentArgs,
    /// Parallel episodes; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Trace directory.
    #[arg(long, default_value = "traces")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Annotation store written by the service.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Report file; defaults to `metrics.json` inside the trace directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Score physical plausibility from simulator flags when no annotations exist.
    #[arg(long)]
    pub pps_surrogate: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Annotation log, label salt and default static directory.
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    /// Defaults to `traces` inside the data directory.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Built annotation UI; defaults to `static` inside the data directory.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long)]
    pub pps_surrogate: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Task files to check.
    #[arg(required_unless_present = "task")]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub task: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse()
}

pub fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = |e: std::num::ParseIntError| format!("bad seed in `{s}`: {e}");
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (a.trim().parse().map_err(bad)?..=b.trim().parse().map_err(bad)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (a.trim().parse().map_err(bad)?..b.trim().parse().map_err(bad)?).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(bad)).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("`{s}` names no seeds"));
    }
    Ok(Seeds(seeds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap().0, vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=4").unwrap().0, vec![2, 3, 4]);
        assert_eq!(parse_seeds("7, 9").unwrap().0, vec![7, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
