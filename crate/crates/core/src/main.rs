use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use normminer::pipeline::{Pipeline, PipelineConfig, RunOptions, Stage};
use normminer::Error;

/// Mine shame and pride norms from subtitle corpora.
#[derive(Debug, Parser)]
#[command(name = "normminer", version)]
struct Cli {
    /// ingest, extract, lexstats, norms, cluster, assoc, report, or all
    stage: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Dendrogram cut distance.
    #[arg(long)]
    threshold: Option<f64>,
    /// Serve model calls from caches and replay files only.
    #[arg(long)]
    offline: bool,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: &Cli) -> normminer::Result<()> {
    let cfg = PipelineConfig::load(&cli.config)?;
    let opts = RunOptions {
        seed: cli.seed,
        threshold: cli.threshold,
        offline: cli.offline,
        output_dir: cli.out.clone(),
    };
    let pipeline = Pipeline::new(cfg, &opts)?;
    if cli.stage == "all" {
        pipeline.run_all()
    } else {
        let stage: Stage = cli.stage.parse()?;
        let entry = pipeline.run(stage)?;
        for (k, v) in &entry.counts {
            log::info!("{stage}: {k} = {v}");
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_provider_error() {
        2
    } else {
        1
    }
}
