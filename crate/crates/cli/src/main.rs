use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use suremap_cli::ablate::{self, AblateArgs};
use suremap_cli::benchmark::{self, BenchmarkArgs};
use suremap_cli::error::CliResult;
use suremap_cli::estimate::{self, EstimateArgs};
use suremap_cli::io::write_output;
use suremap_cli::simulate::{self, SimulateArgs};
use suremap_cli::summarize::{self, SummarizeArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

/// Disaggregated-evaluation estimators and their benchmark harness.
#[derive(Debug, Parser)]
#[command(name = "suremap", version, about)]
struct Cli {
    /// Seed for every random stream
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (default: stdout)
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Report format for benchmark/ablate
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a raw record CSV into a summary JSON
    Summarize(SummarizeArgs),
    /// Run one estimator on a summary JSON
    Estimate(EstimateArgs),
    /// Subsample-with-replacement trials scored against full-data truth
    Benchmark(BenchmarkArgs),
    /// Draw synthetic data from the hierarchical additive-effects model
    Simulate(SimulateArgs),
    /// Sweep interaction order, task count, or task similarity
    Ablate(AblateArgs),
}

fn run(cli: &Cli) -> CliResult<()> {
    let output = cli.output.as_deref();
    let json_only = |what: &str| -> CliResult<()> {
        if cli.format == OutputFormat::Csv {
            return Err(suremap_cli::error::CliError::usage(format!(
                "{what} emits JSON only; --format csv applies to benchmark and ablate"
            )));
        }
        Ok(())
    };
    match &cli.command {
        Command::Summarize(args) => {
            json_only("summarize")?;
            let summary = summarize::run(args)?;
            write_output(output, &serde_json::to_string_pretty(&summary)?)
        }
        Command::Estimate(args) => {
            json_only("estimate")?;
            let estimates = estimate::run(args)?;
            write_output(output, &serde_json::to_string_pretty(&estimates)?)
        }
        Command::Benchmark(args) => {
            let report = benchmark::run(args, cli.seed)?;
            match cli.format {
                OutputFormat::Json => write_output(output, &serde_json::to_string_pretty(&report)?),
                OutputFormat::Csv => write_output(output, &report.to_csv()),
            }
        }
        Command::Simulate(args) => {
            json_only("simulate")?;
            let summary = simulate::run(args, cli.seed)?;
            write_output(output, &serde_json::to_string_pretty(&summary)?)
        }
        Command::Ablate(args) => {
            let report = ablate::run(args, cli.seed)?;
            match cli.format {
                OutputFormat::Json => write_output(output, &serde_json::to_string_pretty(&report)?),
                OutputFormat::Csv => write_output(output, &report.to_csv()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
