use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use priorformer::commands;
use priorformer::parallel::default_threads;
use priorformer::Failure;
use priorformer_core::model::Ablation;

/// Blind video quality assessment with content and distortion prior tokens.
#[derive(Debug, Parser)]
#[command(name = "priorformer", version)]
struct Cli {
    /// Maximum number of worker threads (default: available cores).
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset as PFVF files.
    Synth {
        /// key=value spec: videos, frames, tokens, feature_width,
        /// content_width, distortion_width, noise, clusters, seed.
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
        /// Directory that receives one <id>.pfvf file per video.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Train on a directory of labeled PFVF files and write a PFMP file.
    Train {
        /// Directory of .pfvf files; split into train and test sets.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// key=value run configuration (model and training keys).
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Output parameter file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Print per-frame scores and the video score for one PFVF file.
    Predict {
        /// PFMP parameter file.
        #[arg(long, value_name = "FILE")]
        params: PathBuf,
        /// PFVF feature file.
        #[arg(long, value_name = "FILE")]
        video: PathBuf,
    },
    /// Evaluate PLCC and SRCC on a directory of labeled PFVF files.
    Eval {
        /// PFMP parameter file.
        #[arg(long, value_name = "FILE")]
        params: PathBuf,
        /// Directory of .pfvf files.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Disable a component at evaluation time; repeatable.
        #[arg(long, value_enum, value_name = "PART")]
        ablate: Vec<Part>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// key=value model configuration (default: a two-layer width-8 model).
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Seed of the first case.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random cases.
        #[arg(long, default_value_t = 3)]
        cases: usize,
        /// Frames per random video.
        #[arg(long, default_value_t = 3)]
        frames: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Part {
    /// Content prior token.
    Ct,
    /// Distortion prior token.
    Dt,
    /// Temporal pooling (the video score becomes the mean frame score).
    Tp,
}

fn ablation(parts: &[Part]) -> Ablation {
    let mut a = Ablation::default();
    for p in parts {
        match p {
            Part::Ct => a.use_content_token = false,
            Part::Dt => a.use_distortion_token = false,
            Part::Tp => a.use_temporal_pooling = false,
        }
    }
    a
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let threads = cli.threads.map_or_else(default_threads, |t| t as usize);
    match cli.command {
        Command::Synth { spec, out_dir } => commands::synth(&spec, &out_dir, out),
        Command::Train {
            data,
            config,
            out: path,
        } => commands::train(&data, config.as_deref(), &path, threads, out),
        Command::Predict { params, video } => commands::predict(&params, &video, out),
        Command::Eval { params, data, ablate } => commands::eval(&params, &data, ablation(&ablate), threads, out),
        Command::Gradcheck {
            config,
            seed,
            cases,
            frames,
        } => commands::gradcheck(config.as_deref(), seed, cases, frames, threads, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = run(cli, &mut out);
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
