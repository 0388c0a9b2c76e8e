//! `medclaim`: claim detection, PIO tagging, pseudo-pair generation and
//! evidence retrieval driven from one config file and one work directory.

mod commands;
mod config;
mod data;
mod error;
mod workdir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::workdir::Workdir;

#[derive(Parser)]
#[command(name = "medclaim", version, about = "Medical claim tagging and evidence retrieval")]
struct Cli {
    /// INI config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every module without its own seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for derived artifacts and reports.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate posts and annotations and store the resolved annotation sets.
    Ingest,
    /// Per-population corpus statistics.
    Stats,
    /// Inter-annotator kappa and P/R/F1 per label.
    Agree,
    /// Population-stratified train/dev/test split.
    Split,
    /// Train the span and PIO taggers on the train split.
    TrainTagger,
    /// Tag every post with the current tagger.
    Tag {
        /// Also write the annotations to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Token P/R/F1 of the current tagger on the test split.
    EvalTagger,
    /// Generate pseudo pairs for each split.
    Pseudogen,
    /// Train the context and evidence encoders on the train pseudo pairs.
    TrainRetriever,
    /// Encode the evidence collection with the current evidence encoder.
    Index,
    /// Retrieve evidence for claims in a post file.
    Query {
        /// Posts file; defaults to the configured posts.
        #[arg(long)]
        posts: Option<PathBuf>,
        #[arg(long)]
        post_id: Option<String>,
        /// Claim token span `start:end`; without it the taggers find the claims.
        #[arg(long, value_parser = parse_span)]
        claim: Option<(usize, usize)>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Evaluate the retriever and the baselines on the test pseudo pairs.
    EvalRetrieval,
    /// Expert judgment agreement and cumulative relevance of a run.
    JudgeReport {
        /// Run file; defaults to the run of the last `eval-retrieval`.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Write a synthetic corpus.
    Synth {
        /// Output directory; defaults to the workdir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_span(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected start:end")?;
    let a = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub work: Workdir,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        workdir: cli.workdir,
    };
    if let Some(p) = &cli.config {
        data::require(p, "config")?;
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let work = Workdir::open(&cfg.paths.workdir)?;
    let ctx = Ctx { cfg, work };
    use commands::{corpus, retrieval, tagger};
    match cli.command {
        Command::Ingest => corpus::ingest(&ctx),
        Command::Stats => corpus::stats(&ctx),
        Command::Agree => corpus::agree(&ctx),
        Command::Split => corpus::split(&ctx),
        Command::Synth { out } => corpus::synth(&ctx, out),
        Command::TrainTagger => tagger::train(&ctx),
        Command::Tag { out } => tagger::tag(&ctx, out),
        Command::EvalTagger => tagger::eval(&ctx),
        Command::Pseudogen => retrieval::pseudogen(&ctx),
        Command::TrainRetriever => retrieval::train(&ctx),
        Command::Index => retrieval::index(&ctx),
        Command::Query {
            posts,
            post_id,
            claim,
            k,
        } => retrieval::query(
            &ctx,
            retrieval::QueryArgs {
                posts,
                post_id,
                claim,
                k,
            },
        ),
        Command::EvalRetrieval => retrieval::eval(&ctx),
        Command::JudgeReport { run } => retrieval::judge_report(&ctx, run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}
