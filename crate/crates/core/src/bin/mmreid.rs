use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmreid::config::{Protocol, RunConfig};
use mmreid::model::ModelKind;
use mmreid::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "mmreid", about = "Visible-infrared re-identification robustness workbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic paired corpus from the `[synthetic]` section.
    GenSynthetic(Common),
    /// Materialize a corrupted copy of `dataset.root`.
    BuildBenchmark {
        #[command(flatten)]
        common: Common,
        /// ucd, ccd or ccdx:p; overrides `protocol`.
        #[arg(long)]
        protocol: Option<Protocol>,
    },
    /// Train a model on the training split of `dataset.root`.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `model.kind`.
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Evaluate on the test split with the leave-one-out query protocol.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Trained checkpoint; without it a freshly initialized model is used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Corpus to evaluate on instead of `dataset.root`, such as a
        /// directory written by build-benchmark.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// clean, ucd, ccd or ccdx:p; corrupts a clean corpus in memory.
        #[arg(long)]
        protocol: Option<Protocol>,
        /// Overrides `model.kind` when no checkpoint is given.
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Aggregate summaries into report.csv and report.png.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
}

fn load(c: &Common, protocol: Option<Protocol>, model: Option<ModelKind>) -> Result<RunConfig, PipelineError> {
    pipeline::require(&[("config", &c.config)])?;
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(p) = protocol {
        cfg.protocol = p;
    }
    if let Some(k) = model {
        cfg.model.kind = k;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, PipelineError> {
    match cli.command {
        Command::GenSynthetic(c) => {
            let cfg = load(&c, None, None)?;
            pipeline::gen_synthetic(&cfg, &c.out, c.force)?;
            Ok(format!("wrote corpus to {}", c.out.display()))
        }
        Command::BuildBenchmark { common: c, protocol } => {
            let cfg = load(&c, protocol, None)?;
            let n = pipeline::build_benchmark(&cfg, &c.out, c.force)?;
            Ok(format!("wrote {n} {} pairs to {}", cfg.protocol, c.out.display()))
        }
        Command::Train { common: c, model } => {
            let cfg = load(&c, None, model)?;
            let outcome = pipeline::train(&cfg, &c.out, c.force)?;
            let last = outcome.log.last().map_or(f64::NAN, |r| r.total_loss);
            Ok(format!("trained {} for {} epochs (final loss {last:.4}) into {}", cfg.label(), outcome.log.len(), c.out.display()))
        }
        Command::Evaluate { common: c, checkpoint, corpus, protocol, model } => {
            let cfg = load(&c, protocol, model)?;
            let s = pipeline::evaluate(&cfg, checkpoint.as_deref(), corpus.as_deref(), &c.out, c.force)?;
            Ok(format!("{} on {}: mAP {:.4} mINP {:.4} rank-1 {:.4}", s.model, s.protocol, s.map, s.minp, s.rank1))
        }
        Command::Report { out, force, summaries } => {
            let rows = pipeline::report(&summaries, &out, force)?;
            Ok(format!("reported {} summaries into {}", rows.len(), out.display()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
