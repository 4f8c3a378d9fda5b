//! `planwrite`: prepare corpora, train, generate, evaluate and inspect.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numeric failure.

mod blocks;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "planwrite", version, about = "Plan-then-write data-to-text generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Drop the global planning latent.
    NoGlobal,
    /// Drop the per-sentence latents.
    NoLocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Greedy,
    Sample,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary, encode records and report plan extraction.
    Prepare {
        /// Training corpus, one JSON record per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Validation corpus, encoded with the training vocabulary.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Tab-separated `value alias alias ...` lines used for matching.
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        /// Run config; only its `terminators` key is read here.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on a prepared directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config file and the environment.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        ablate: Vec<Ablation>,
    },
    /// Sample texts for each input.
    Generate(GenerateArgs),
    /// Sample plans only; same as `generate --plan-only`.
    Plan(GenerateArgs),
    /// Score generated texts against references.
    Eval {
        /// Output of `generate`.
        #[arg(long)]
        outputs: PathBuf,
        /// Corpus file aligned with the generation inputs; supplies the
        /// reference texts and the items.
        #[arg(long)]
        references: PathBuf,
        /// Items to score coverage against instead of the reference items,
        /// in the generation input format.
        #[arg(long)]
        items: Option<PathBuf>,
        #[arg(long)]
        synonyms: Option<PathBuf>,
        /// Also report self-BLEU and distinct plans over each input's samples.
        #[arg(long)]
        per_input_samples: bool,
        /// Run config; only its `terminators` key is read here.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize a checkpoint or vocabulary file.
    Inspect { path: PathBuf },
}

#[derive(clap::Args, Clone)]
pub struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to `vocab.json` next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Inputs, one JSON object with `pairs` (and optional `title`) per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Greedy)]
    mode: Mode,
    #[arg(long)]
    plan_only: bool,
    /// Write here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare {
            corpus,
            out,
            valid,
            synonyms,
            min_count,
            config,
        } => commands::prepare(&corpus, &out, valid.as_deref(), synonyms.as_deref(), min_count, config.as_deref()),
        Command::Train { config, seed, ablate } => commands::train(&config, seed, &ablate),
        Command::Generate(a) => commands::generate(&a),
        Command::Plan(mut a) => {
            a.plan_only = true;
            commands::generate(&a)
        }
        Command::Eval {
            outputs,
            references,
            items,
            synonyms,
            per_input_samples,
            config,
        } => commands::eval(
            &outputs,
            &references,
            items.as_deref(),
            synonyms.as_deref(),
            per_input_samples,
            config.as_deref(),
        ),
        Command::Inspect { path } => commands::inspect(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("planwrite: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
