use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use varinn::experiments::{run, ExperimentConfig, RunOptions, Subcommand, SECTIONS};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    PriorEffect,
    FdivCompare,
    LatentSweep,
    EpsilonSweep,
    SupportMismatch,
    ParetoMoments,
    KlOracle,
    Selfcheck,
}

impl Command {
    fn subcommand(self) -> Subcommand {
        match self {
            Command::PriorEffect => Subcommand::PriorEffect,
            Command::FdivCompare => Subcommand::FdivCompare,
            Command::LatentSweep => Subcommand::LatentSweep,
            Command::EpsilonSweep => Subcommand::EpsilonSweep,
            Command::SupportMismatch => Subcommand::SupportMismatch,
            Command::ParetoMoments => Subcommand::ParetoMoments,
            Command::KlOracle => Subcommand::KlOracle,
            Command::Selfcheck => Subcommand::Selfcheck,
        }
    }
}

/// Run one experiment and append its rows to a CSV file.
///
/// Any `--section.key=value` argument (sections: experiment, arch, train,
/// sweep) overrides the configuration file.
#[derive(Debug, Parser)]
#[command(name = "varinn", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Sectioned `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Validate and print the run matrix without training.
    #[arg(long)]
    dry_run: bool,
    /// Replace rows of run ids that are already in the output file.
    #[arg(long)]
    force: bool,
    /// Cells run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output CSV, same as --experiment.output.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn is_override(arg: &str) -> bool {
    arg.strip_prefix("--")
        .and_then(|a| a.split_once('.'))
        .is_some_and(|(section, rest)| SECTIONS.contains(&section) && rest.contains('='))
}

fn main() -> ExitCode {
    let (overrides, args): (Vec<String>, Vec<String>) = std::env::args().partition(|a| is_override(a));
    let cli = Cli::parse_from(args);
    let mut overrides = overrides;
    if let Some(out) = &cli.output {
        overrides.push(format!("experiment.output={}", out.display()));
    }
    let text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => Some((t, path.display().to_string())),
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => None,
    };
    let file = text.as_ref().map(|(t, s)| (t.as_str(), s.as_str()));
    let cfg = match ExperimentConfig::resolve(cli.command.subcommand(), file, &overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        dry_run: cli.dry_run,
        force: cli.force,
        jobs: cli.jobs.max(1),
    };
    match run(&cfg, &opts, &mut std::io::stderr()) {
        Ok(summary) if summary.failed_rows > 0 => {
            eprintln!("{} failed rows", summary.failed_rows);
            ExitCode::from(1)
        }
        Ok(summary) => {
            if let Some(path) = summary.output {
                eprintln!("{} rows -> {}", summary.rows.len(), path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
