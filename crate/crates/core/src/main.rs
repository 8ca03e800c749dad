use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cuefuse::pipeline::{LoadedConfig, Pipeline, PipelineError, Stage};
use cuefuse::synth::{write_corpus, SynthSpec};

#[derive(Parser)]
#[command(name = "cuefuse", version, about = "Fuse face and situational-context emotion judgments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Never call a live LLM; answer from the cache and replay fixtures.
    #[arg(long)]
    offline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest human ratings: soft labels and consensus table.
    Aggregate(RunArgs),
    /// Convert face-model frames to per-video distributions.
    Face(RunArgs),
    /// Query each configured LLM for per-outcome context distributions.
    Context(RunArgs),
    /// Combine the face and context channels.
    Fuse(RunArgs),
    /// Score every method against the human context-based ratings.
    Eval(RunArgs),
    /// Run every stage in order.
    All(RunArgs),
    /// Write a seeded synthetic corpus and matching configs.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run_stages(args: &RunArgs, stages: &[Stage]) -> Result<(), PipelineError> {
    let cfg = LoadedConfig::load(&args.config)?;
    let pipeline = Pipeline::new(cfg, args.offline);
    pipeline.run(stages)?;
    log::info!("outputs in {}", pipeline.output_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Aggregate(a) => run_stages(a, &[Stage::Aggregate]),
        Command::Face(a) => run_stages(a, &[Stage::Face]),
        Command::Context(a) => run_stages(a, &[Stage::Context]),
        Command::Fuse(a) => run_stages(a, &[Stage::Fuse]),
        Command::Eval(a) => run_stages(a, &[Stage::Eval]),
        Command::All(a) => run_stages(a, &Stage::ALL),
        Command::Generate { out, seed } => {
            let spec = SynthSpec {
                seed: *seed,
                ..Default::default()
            };
            write_corpus(out, &spec)
                .map(|config| println!("{}", config.display()))
                .map_err(|e| PipelineError::io(out, e))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
