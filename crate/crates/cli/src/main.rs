// Comparisons like `!(x <= tol)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod bench;
mod config;
mod dataset;
mod error;
mod eval;
mod train;
mod verify;

/// Polyharmonic cascade: train, evaluate, benchmark and self-check.
#[derive(Debug, Parser)]
#[command(name = "polycascade", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model described by a TOML run config.
    Train {
        config: PathBuf,
        /// Validate the config and print the architecture without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Score a saved model on a dataset.
    Eval {
        snapshot: PathBuf,
        /// A run config (its test split is used), an IDX image file (with
        /// `--labels`), or a delimited table.
        dataset: PathBuf,
        /// IDX label file matching an IDX image file.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Label column of a delimited table (0-based).
        #[arg(long, default_value_t = 0)]
        label_column: usize,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
        /// Write per-row scores and predictions to this CSV file.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Time the octahedral closed forms against the general dense routes.
    Bench {
        /// Largest package input width in the sweep (powers of two from 16).
        #[arg(long, default_value_t = 2048)]
        max_n: usize,
        /// Batch sizes, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "64,512")]
        batch_sizes: Vec<usize>,
        /// Timed repetitions per measurement (the median is reported).
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical invariant battery.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inject a known defect to confirm the battery catches it.
        #[arg(long, value_enum, hide = true)]
        fault: Option<FaultArg>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    CorruptB3,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, dry_run } => train::run(&config, dry_run),
        Command::Eval {
            snapshot,
            dataset,
            labels,
            label_column,
            delimiter,
            predictions,
        } => eval::run(&eval::EvalArgs {
            snapshot,
            dataset,
            labels,
            label_column,
            delimiter,
            predictions,
        }),
        Command::Bench {
            max_n,
            batch_sizes,
            repeats,
            out,
        } => bench::run(&bench::BenchArgs {
            max_n,
            batch_sizes,
            repeats,
            out,
        }),
        Command::Verify { seed, fault } => verify::run(
            seed,
            fault.map(|f| match f {
                FaultArg::CorruptB3 => polycascade::verify::Fault::CorruptB3,
            }),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn bench_batch_sizes_parse_as_list() {
        let cli = Cli::try_parse_from([
            "polycascade",
            "bench",
            "--max-n",
            "64",
            "--batch-sizes",
            "1,8",
        ])
        .unwrap();
        match cli.command {
            Command::Bench {
                max_n, batch_sizes, ..
            } => {
                assert_eq!(max_n, 64);
                assert_eq!(batch_sizes, vec![1, 8]);
            }
            other => panic!("{other:?}"),
        }
    }
}
