use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use geotarget_cli::stages::{evaluate_predictions_file, run_pipeline, Context, Stage};
use geotarget_cli::{CliError, LoadedConfig, THREADS_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "geotarget",
    version,
    about = "Spatial machine-learning proxy means testing pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage in order and write manifest.json.
    Run(Common),
    /// Preprocess, split and label households.
    Ingest(Common),
    /// Delaunay contiguity from region centroids.
    Weights(Common),
    /// Global and subset Moran's I, Getis-Ord Gi*.
    Stats(Common),
    /// Contiguity-constrained divisive clustering.
    Cluster(Common),
    /// Correlation PCA and component selection.
    Pca(Common),
    /// Fit the benchmark and per-cluster model grid.
    Train(Common),
    /// Targeting metrics for the model grid, or for one prediction file.
    Evaluate {
        #[arg(long, required_unless_present = "predictions")]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV with household_id, truth and label columns.
        #[arg(long, conflicts_with_all = ["config", "out"])]
        predictions: Option<PathBuf>,
    },
    /// Generate the synthetic heterogeneous dataset.
    Synth(Common),
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Config(format!("{THREADS_ENV}={v} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn stage_run(common: &Common, stage: Stage) -> Result<(), CliError> {
    let ctx = Context::new(LoadedConfig::load(&common.config)?, common.out.as_deref());
    ctx.run_stage(stage)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Run(c) => {
            let ctx = Context::new(LoadedConfig::load(&c.config)?, c.out.as_deref());
            run_pipeline(&ctx)?;
            println!("pipeline complete: {}", ctx.art.root.display());
            Ok(())
        }
        Command::Ingest(c) => stage_run(&c, Stage::Ingest),
        Command::Weights(c) => stage_run(&c, Stage::Weights),
        Command::Stats(c) => stage_run(&c, Stage::Stats),
        Command::Cluster(c) => stage_run(&c, Stage::Cluster),
        Command::Pca(c) => stage_run(&c, Stage::Pca),
        Command::Train(c) => stage_run(&c, Stage::Train),
        Command::Synth(c) => stage_run(&c, Stage::Synth),
        Command::Evaluate {
            predictions: Some(p),
            ..
        } => {
            print!("{}", evaluate_predictions_file(&p)?.render());
            Ok(())
        }
        Command::Evaluate {
            config,
            out,
            predictions: None,
        } => {
            let config = config.ok_or_else(|| CliError::Config("--config is required".into()))?;
            stage_run(&Common { config, out }, Stage::Evaluate)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
