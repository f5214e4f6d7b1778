use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// School value-added models: fit, compare, simulate.
#[derive(Debug, Parser)]
#[command(name = "vam", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one or more model specs and write effects, coefficients and summaries.
    Fit(FitArgs),
    /// Compare effect tables from earlier fits.
    Compare(CompareArgs),
    /// Generate a synthetic cohort with known truth.
    Simulate(SimulateArgs),
    /// Fit the full grid and compare it in one step.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct CohortArgs {
    #[arg(long)]
    students: PathBuf,
    #[arg(long)]
    schools: PathBuf,
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for independent fits.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    /// raw, va, cva-a, cva-b, cva-x or all.
    #[arg(long)]
    model: Option<String>,
    /// included, omitted, early or both. Without it a single family uses
    /// included and `all` covers every treatment.
    #[arg(long)]
    prior: Option<String>,
    /// All 20 family x treatment combinations.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value = "fits")]
    out: PathBuf,
    /// Also write each design matrix as design.csv.
    #[arg(long)]
    dump_design: bool,
    /// Skip empirical-Bayes shrinkage.
    #[arg(long)]
    no_shrinkage: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Directory written by `vam fit`.
    #[arg(long, conflicts_with = "effects")]
    fits: Option<PathBuf>,
    /// effects.csv files, as PATH (label taken from the parent directory
    /// name) or FAMILY:TREATMENT=PATH.
    #[arg(long)]
    effects: Vec<String>,
    /// school_flags.csv for scatter highlighting.
    #[arg(long)]
    flags: Option<PathBuf>,
    #[arg(long, default_value = "comparison")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// default or full-scale; replaces the [simulation] table of the config.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive range such as 1..10; one seed-N directory per seed.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, default_value = "simulated")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VAM_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("E_USAGE: {first}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Compare(a) => commands::compare(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}: {msg}", kind.code());
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}
