//! `dduq`: staged driver for domain-decomposed uncertainty quantification.

mod artifacts;
mod config;
mod stages;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;

use artifacts::{OutDir, Stage};
use config::Config;
use stages::Run;

#[derive(Parser, Debug)]
#[command(version, about = "Offline/online domain-decomposed uncertainty quantification")]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    stage: Stage,
    /// Overrides `sampling.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Threads for the sample-parallel maps; all cores by default.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let (mut cfg, _) = Config::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.sampling.seed = seed;
    }
    if let Some(n) = args.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")?;
    }
    let out = OutDir::new(&args.out)?;
    let hash = cfg.hash();
    out.check_prerequisites(args.stage, &hash)?;
    let run = Run { cfg: &cfg, out: &out };
    match args.stage {
        Stage::Prep => run.prep(),
        Stage::Offline => run.offline(),
        Stage::Surrogate => run.surrogate(),
        Stage::Online => run.online(),
        Stage::Report => run.report(),
        Stage::FlowBench => run.flow_bench(),
    }
    .with_context(|| format!("stage `{}` failed", args.stage.name()))?;
    out.record(args.stage, &hash, cfg.sampling.seed)
}
