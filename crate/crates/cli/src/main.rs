//! `replift`: generate synthetic pose datasets, train the adversarial lifter,
//! evaluate checkpoints, run noise sweeps, lift keypoint files and render
//! plots — each command deterministic under its config and seed.

mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use replift_core::Error as CoreError;

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite(_) => CliError::numerical(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "replift",
    version,
    about = "Weakly supervised adversarial 2D-to-3D human pose lifting"
)]
struct Cli {
    /// Root directory all relative paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a TOML config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the lifter/critic pair on an unpaired dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Paired dataset evaluated between epochs.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        decay: Option<f64>,
        #[arg(long)]
        critic_iters: Option<usize>,
        #[arg(long)]
        gp_weight: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable the critic's KCS path (the ablation configuration).
        #[arg(long)]
        no_kcs: bool,
    },
    /// Evaluate a checkpoint against a paired dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise-robustness sweep: evaluate under increasing 2D noise.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated pixel standard deviations.
        #[arg(long, default_value = "0,5,10,15,20")]
        sigmas: String,
        #[arg(long, default_value_t = 9000)]
        noise_seed: u64,
    },
    /// Lift a 2D keypoint file to 3D poses and cameras.
    Lift {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Measure single-frame forward latency instead of only lifting.
        #[arg(long)]
        bench: bool,
        /// Frames timed by --bench.
        #[arg(long, default_value_t = 10_000)]
        bench_frames: usize,
    },
    /// Render SVG plots from pose files, metrics logs or sweep tables.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Maximum number of skeleton frames rendered from a pose file.
        #[arg(long, default_value_t = 16)]
        limit: usize,
    },
}

fn main() -> ExitCode {
    // worker parallelism cap; generation and evaluation parallelize per
    // sample, training itself is a single deterministic owner
    if let Ok(threads) = std::env::var("REPLIFT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with successful exit
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    let result = match cli.command {
        Command::Gen { config, out } => commands::gen::run(&cli.workdir, &config, &out),
        Command::Train {
            config,
            data,
            out,
            eval_data,
            resume,
            lr,
            decay,
            critic_iters,
            gp_weight,
            epochs,
            batch,
            seed,
            no_kcs,
        } => commands::train::run(
            &cli.workdir,
            commands::train::Args {
                config,
                data,
                out,
                eval_data,
                resume,
                lr,
                decay,
                critic_iters,
                gp_weight,
                epochs,
                batch,
                seed,
                no_kcs,
            },
        ),
        Command::Eval {
            checkpoint,
            data,
            out,
        } => commands::eval::run(&cli.workdir, &checkpoint, &data, &out),
        Command::Sweep {
            checkpoint,
            data,
            out,
            sigmas,
            noise_seed,
        } => commands::sweep::run(&cli.workdir, &checkpoint, &data, &out, &sigmas, noise_seed),
        Command::Lift {
            checkpoint,
            input,
            out,
            bench,
            bench_frames,
        } => commands::lift::run(&cli.workdir, &checkpoint, &input, &out, bench, bench_frames),
        Command::Plot { input, out, limit } => commands::plot::run(&cli.workdir, &input, &out, limit),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
