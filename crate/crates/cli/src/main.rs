//! Command-line entry point wiring ingestion, training, evaluation, and
//! single-image prediction. Results go to stdout, diagnostics to stderr,
//! and every error path exits nonzero.

mod commands;
mod config;
mod pgm;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "htrc",
    about = "Handwritten character recognition with a from-scratch CNN",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rescale a raw IDX pair to 32x32 and write it with a 70:30 split file.
    Prepare {
        /// Raw IDX image file (any size >= 32x32)
        #[arg(long)]
        images: PathBuf,
        /// IDX label file
        #[arg(long)]
        labels: PathBuf,
        /// Output directory for images.idx, labels.idx, split.csv
        #[arg(long)]
        out: PathBuf,
        /// Flip polarity (white-background scans -> dark background)
        #[arg(long)]
        invert: bool,
        /// Split shuffle seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model per the config file; writes checkpoint.htrc and curves.csv.
    Train {
        /// key = value config file
        #[arg(long)]
        config: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Pin the single-threaded deterministic execution contract
        /// (execution is always deterministic; the flag documents intent)
        #[arg(long)]
        deterministic: bool,
    },
    /// Evaluate a checkpoint on an IDX pair; writes the metrics CSVs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Label-map override: UTF-8, one character per line
        #[arg(long)]
        labelmap: Option<PathBuf>,
    },
    /// Classify a single PGM (P5) image with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Binary PGM (P5) grayscale image, any size >= 32x32
        #[arg(long)]
        image: PathBuf,
        /// How many char:prob lines to print
        #[arg(long, default_value_t = 5)]
        topk: usize,
        /// Flip polarity before prediction
        #[arg(long)]
        invert: bool,
        /// Label-map override: UTF-8, one character per line
        #[arg(long)]
        labelmap: Option<PathBuf>,
    },
    /// Finite-difference check of the configured model's gradients.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare {
            images,
            labels,
            out,
            invert,
            seed,
        } => commands::prepare(&images, &labels, &out, invert, seed),
        Command::Train {
            config,
            out,
            deterministic,
        } => commands::train(&config, &out, deterministic),
        Command::Eval {
            checkpoint,
            images,
            labels,
            out,
            labelmap,
        } => commands::eval(&checkpoint, &images, &labels, &out, labelmap.as_deref()),
        Command::Predict {
            checkpoint,
            image,
            topk,
            invert,
            labelmap,
        } => commands::predict(&checkpoint, &image, topk, invert, labelmap.as_deref()),
        Command::Gradcheck { config } => commands::gradcheck(&config),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
