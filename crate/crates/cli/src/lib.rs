//! Library behind the `roadforge` executable.
//!
//! [`run`] parses arguments, dispatches to a subcommand and maps the outcome
//! to an exit code: [`EXIT_OK`], [`EXIT_VALIDATION`] for bad input or a
//! failed check, [`EXIT_IO`] for file system errors and [`EXIT_USAGE`] for
//! unknown flags.

mod commands;
mod context;
mod runlog;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub use commands::{
    BuildArgs, DatasetCommand, EvalArgs, GenerateArgs, GradcheckArgs, MetricArgs, NoiseBenchArgs, StitchArgs,
    TrainArgs,
};
pub use context::{Context, ALL_KEYS, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "roadforge", version, about = "Road-network graph datasets, generation and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Base directory; relative paths are resolved against it.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for dataset building and evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Global seed. Falls back to the config file, then ROADFORGE_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Configuration override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Run log, one JSON object appended per invocation.
    #[arg(long, global = true, default_value = "run.jsonl")]
    pub log: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset construction.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model on a built dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Generate a graph from one segmentation image.
    Generate(GenerateArgs),
    /// StreetMover distance between two graphs.
    Metric(MetricArgs),
    /// Merge a grid of tile graphs into one graph.
    Stitch(StitchArgs),
    /// Finite-difference check of every model's training loss.
    Gradcheck(GradcheckArgs),
    /// Evaluate a checkpoint on increasingly noisy input images.
    NoiseBench(NoiseBenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Dataset(DatasetCommand::Build(_)) => "dataset build",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Generate(_) => "generate",
            Command::Metric(_) => "metric",
            Command::Stitch(_) => "stitch",
            Command::Gradcheck(_) => "gradcheck",
            Command::NoiseBench(_) => "noise-bench",
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let start = Instant::now();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut ctx = match Context::new(&cli.global, cli.command.name(), argv) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e:#}");
            return exit_code(&e);
        }
    };
    let outcome = commands::dispatch(&cli.command, &mut ctx);
    let code = match &outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(e)
        }
    };
    match ctx.finish(code, outcome.as_ref().err(), start.elapsed()) {
        Ok(()) => code,
        Err(e) => {
            eprintln!("error: writing run log: {e:#}");
            if code == EXIT_OK {
                EXIT_IO
            } else {
                code
            }
        }
    }
}

/// [`EXIT_IO`] when any error in the chain is a file system error,
/// [`EXIT_VALIDATION`] otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(is_io) {
        EXIT_IO
    } else {
        EXIT_VALIDATION
    }
}

fn is_io(e: &(dyn std::error::Error + 'static)) -> bool {
    use roadforge_autodiff::AdError;
    use roadforge_core::dataset::DatasetError;
    use roadforge_core::geom::rgf::RgfError;
    use roadforge_core::raster::PgmError;
    use roadforge_model::ModelError;

    if e.is::<std::io::Error>() {
        return true;
    }
    if let Some(e) = e.downcast_ref::<DatasetError>() {
        return e.is_io();
    }
    if let Some(e) = e.downcast_ref::<ModelError>() {
        return matches!(e, ModelError::Io(_) | ModelError::Autodiff(AdError::Io(_)));
    }
    matches!(e.downcast_ref::<RgfError>(), Some(RgfError::Io(_)))
        || matches!(e.downcast_ref::<PgmError>(), Some(PgmError::Io(_)))
        || matches!(e.downcast_ref::<AdError>(), Some(AdError::Io(_)))
}
