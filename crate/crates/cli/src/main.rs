//! `fsncsr`: train, sample, evaluate, frequency-split and gradient-check.
//!
//! Exit codes: 0 success, 1 other failure (including a failed gradient
//! check), 2 invalid config, 3 non-finite loss, 4 incompatible shapes,
//! 5 missing sample files, 6 indivisible image dimensions.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::exit;

#[derive(Parser)]
#[command(name = "fsncsr", version, about = "Frequency-separated noise-conditioned flow super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON experiment config.
    Train {
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Draw super-resolved samples for one LR PNG or a folder of them.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// LR PNG file or directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Take sampler defaults from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Samples per input.
        #[arg(long)]
        num: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Inference noise level fed to the condition.
        #[arg(long = "sigma-inf")]
        sigma_inf: Option<f64>,
    },
    /// Diversity, LR-PSNR and sparsity report for a sample manifest.
    Eval {
        #[arg(long = "gt-dir")]
        gt_dir: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Diversity patch size.
        #[arg(long)]
        patch: Option<usize>,
        /// Patch distance: mse or l1.
        #[arg(long)]
        distance: Option<String>,
        /// Samples per GT image used for diversity.
        #[arg(long)]
        num: Option<usize>,
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Write low.png, high.fshf and recombined.png for one image.
    Freqsplit {
        image: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient check and brute-force log-det check.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report directory (defaults to the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Entries probed per parameter tensor.
        #[arg(long, default_value_t = 24)]
        entries: usize,
        #[arg(long, hide = true)]
        flip_logdet_sign: bool,
    },
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    match cli.command {
        Command::Train { config, resume } => commands::train(&config, resume.as_deref()),
        Command::Sample {
            checkpoint,
            input,
            out,
            config,
            temperature,
            num,
            seed,
            sigma_inf,
        } => commands::sample(&commands::SampleArgs {
            checkpoint,
            input,
            out,
            config,
            temperature,
            num,
            seed,
            sigma_inf,
        }),
        Command::Eval {
            gt_dir,
            manifest,
            out,
            config,
            patch,
            distance,
            num,
            scale,
        } => commands::eval(&commands::EvalArgs {
            gt_dir,
            manifest,
            out,
            config,
            patch,
            distance,
            num,
            scale,
        }),
        Command::Freqsplit { image, scale, out } => commands::freqsplit(&image, scale, &out),
        Command::Gradcheck {
            config,
            checkpoint,
            out,
            entries,
            flip_logdet_sign,
        } => commands::gradcheck(&commands::GradcheckArgs {
            config,
            checkpoint,
            out,
            entries,
            flip_logdet_sign,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
