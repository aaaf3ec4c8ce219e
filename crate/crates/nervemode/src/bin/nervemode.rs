use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nervemode::cli::{self, OutputFormat};

#[derive(Parser)]
#[command(
    name = "nervemode",
    about = "Run, validate and classify mode-switching supervision scenarios",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and print a summary; exit 1 if an alarm occurred.
    Run {
        /// Scenario configuration file (TOML).
        scenario: PathBuf,
        /// Seed override; defaults to the file's seed (or 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Run a seed range `start..end` (end exclusive), one isolated run each.
        #[arg(long, value_parser = parse_range, conflicts_with = "seed")]
        seeds: Option<(u64, u64)>,
        /// Step count override; defaults to the file's steps (or 1000).
        #[arg(long)]
        steps: Option<u64>,
        /// Trace output path; with --seeds, one file per seed is written.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trace format: structured (line-delimited records) or text-table.
        #[arg(long, default_value = "structured")]
        format: OutputFormat,
    },
    /// Check a scenario file: nerve closure, refinement blocks, transition table.
    Validate {
        /// Scenario configuration file (TOML).
        scenario: PathBuf,
    },
    /// Classify a score vector against a nerve and print the outcome.
    Classify {
        /// Score file: one `mode = value` per line (TOML).
        #[arg(long)]
        scores: PathBuf,
        /// Nerve file: `sets = [[..]]` plus optional `vertices = [..]` (TOML).
        #[arg(long)]
        nerve: PathBuf,
        #[arg(long)]
        p_low: f64,
        #[arg(long)]
        p_high: f64,
    },
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (start, end) = s
        .split_once("..")
        .ok_or_else(|| format!("expected start..end, got `{s}`"))?;
    let start: u64 = start.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let end: u64 = end.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    if start >= end {
        return Err(format!("empty seed range {start}..{end}"));
    }
    Ok((start, end))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let code = match cli.command {
        Command::Run { scenario, seed, seeds, steps, out, format } => cli::cmd_run(
            &scenario,
            seed,
            seeds,
            steps,
            out.as_deref(),
            format,
            &mut stdout,
        ),
        Command::Validate { scenario } => cli::cmd_validate(&scenario, &mut stdout),
        Command::Classify { scores, nerve, p_low, p_high } => {
            cli::cmd_classify(&scores, &nerve, p_low, p_high, &mut stdout)
        }
    };
    ExitCode::from(code as u8)
}
