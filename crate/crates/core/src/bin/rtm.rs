//! Command-line pipeline driver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rtm_core::config::RunConfig;
use rtm_core::pipeline::{self, PipelineError, Workdir};

#[derive(Parser)]
#[command(
    name = "rtm",
    about = "Personalized product-search re-ranking: BM25 candidates re-scored by a review transformer",
    version
)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key (repeatable); wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Working directory (shorthand for --set workdir=...).
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw reviews + metadata into corpus artifacts and splits.
    Ingest {
        /// Line-delimited review records (reviewerID/asin/reviewText/...).
        #[arg(long)]
        reviews: Option<PathBuf>,
        /// Line-delimited item metadata (asin/categories/description).
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Generate the synthetic corpus and ingest it.
    Synth,
    /// Build the inverted index over item reviews.
    Index,
    /// First-stage retrieval into a run file.
    Retrieve {
        #[arg(long, default_value = "test")]
        split: String,
        /// bm25 or pop.
        #[arg(long, default_value = "bm25")]
        method: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain word embeddings on train reviews (skip-gram).
    Pretrain,
    /// Train the re-ranking model.
    Train {
        /// Resume from a checkpoint with trainer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Re-rank a candidate run with a trained checkpoint.
    Rerank {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a run file against a split's qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also print per-pair metric values.
        #[arg(long)]
        per_pair: bool,
    },
    /// Fisher randomization test between two runs.
    Sigtest {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Attention explanation for one (pair, item).
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Pair id as it appears in run files, e.g. q12:u0007.
        #[arg(long)]
        pair: String,
        #[arg(long)]
        item: String,
        /// 1-based layer; defaults to the final layer.
        #[arg(long)]
        layer: Option<usize>,
        /// Reference unit: q, ur<k>, or ir<k>.
        #[arg(long, default_value = "q")]
        reference: String,
        #[arg(long, default_value_t = 3)]
        top: usize,
        #[arg(long, default_value_t = 1)]
        bottom: usize,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(PipelineError::Missing(path.clone()));
            }
            RunConfig::from_file(path).map_err(|e| PipelineError::Config(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    if let Some(wd) = &cli.workdir {
        cfg.workdir = wd.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<(), PipelineError> {
    let _lock = Workdir::new(&cfg.workdir).lock()?;
    match &cli.command {
        Command::Ingest { reviews, meta } => {
            let reviews = reviews
                .clone()
                .or_else(|| cfg.reviews.clone())
                .ok_or_else(|| PipelineError::Config("no reviews path given".into()))?;
            let meta = meta
                .clone()
                .or_else(|| cfg.meta.clone())
                .ok_or_else(|| PipelineError::Config("no meta path given".into()))?;
            let s = pipeline::run_ingest(cfg, &reviews, &meta)?;
            println!(
                "ingested {} reviews ({} kept after {}-core, {} dropped empty, {} bad lines)",
                s.reviews_in, s.reviews_kept, cfg.k_core, s.dropped_empty, s.line_errors
            );
            println!(
                "{} queries, {} interactions ({} moved back, {} users all-train), vocab {}",
                s.queries, s.interactions, s.moved_back, s.users_all_train, s.vocab
            );
        }
        Command::Synth => {
            let s = pipeline::run_synth(cfg)?;
            println!(
                "synthetic corpus: {} reviews kept, {} queries, {} interactions, vocab {}",
                s.reviews_kept, s.queries, s.interactions, s.vocab
            );
        }
        Command::Index => {
            let path = pipeline::run_index(cfg)?;
            println!("index written to {}", path.display());
        }
        Command::Retrieve { split, method, out } => {
            let path = pipeline::run_retrieve(cfg, split, method, out.as_deref())?;
            println!("run written to {}", path.display());
        }
        Command::Pretrain => {
            let path = pipeline::run_pretrain(cfg)?;
            println!("embeddings written to {}", path.display());
        }
        Command::Train { resume } => {
            let path = pipeline::run_train(cfg, resume.as_deref())?;
            println!("model written to {}", path.display());
        }
        Command::Rerank {
            checkpoint,
            candidates,
            out,
        } => {
            let path = pipeline::run_rerank(cfg, checkpoint, candidates, out.as_deref())?;
            println!("run written to {}", path.display());
        }
        Command::Eval {
            run,
            split,
            per_pair,
        } => {
            let (_, text) = pipeline::run_eval(cfg, run, split, *per_pair)?;
            print!("{text}");
        }
        Command::Sigtest { run_a, run_b, split } => {
            let text = pipeline::run_sigtest(cfg, run_a, run_b, split)?;
            print!("{text}");
        }
        Command::Explain {
            checkpoint,
            pair,
            item,
            layer,
            reference,
            top,
            bottom,
        } => {
            let text = pipeline::run_explain(
                cfg, checkpoint, pair, item, *layer, reference, *top, *bottom,
            )?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("rtm: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match dispatch(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rtm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
