//! `ttc`: render synthetic datasets, re-derive their labels, run the
//! estimators, train the feature-scale head and tabulate MiD/RTE results.
//!
//! Exit codes: 0 on success, 1 on internal errors, 2 on usage or input errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ttc", version, about = "Monocular time-to-contact toolkit")]
pub struct Cli {
    /// JSON run configuration. Missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override the configuration's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorName {
    /// Box-size ratio of the input detections.
    #[value(name = "detection")]
    Detection,
    /// Multi-scale template matching on pixels.
    #[value(name = "pixel_mse")]
    PixelMse,
    /// Feature-space scale classification; needs `--weights`.
    #[value(name = "feature_scale")]
    FeatureScale,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the configured scenes into a dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Write into a directory that already holds a dataset.
        #[arg(long)]
        force: bool,
    },
    /// Re-derive TTC labels from depths and compare them with stored labels.
    Annotate {
        dataset: PathBuf,
        /// Annotation summary path; defaults to `annotations.json` in the dataset.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Largest accepted |tau| deviation from a stored label, seconds.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Proceed despite a config hash mismatch.
        #[arg(long)]
        force: bool,
    },
    /// Estimate a single sequence directory and print the result as JSON.
    Estimate {
        sequence: PathBuf,
        #[arg(long, value_enum)]
        estimator: EstimatorName,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Frame gap between reference and target, 1 to 5.
        #[arg(long)]
        gap: Option<u32>,
    },
    /// Train the feature-scale head and write weights, checkpoints and the loss curve.
    Train {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Initial weights; a fresh model is built from the config otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Proceed despite a config hash mismatch, and overwrite earlier output.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate an estimator on a dataset and write JSON and CSV reports.
    Eval {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        estimator: EstimatorName,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Frame gap between reference and target, 1 to 5.
        #[arg(long)]
        gap: Option<u32>,
        /// JSON report path; the CSV table is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Proceed despite a config hash mismatch, and overwrite earlier output.
        #[arg(long)]
        force: bool,
    },
    /// Merge evaluation reports into one table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Merge reports produced under different configs.
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
