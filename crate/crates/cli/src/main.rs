mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::commands::Usage;
use crate::config::RunConfig;

/// Synthetic handwritten-word generation and CNN + BiLSTM + CTC recognition.
#[derive(Debug, Parser)]
#[command(name = "glyphforge", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON file with flat keys mirroring the flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Crop and resize every glyph image of a corpus.
    Preprocess {
        /// Corpus root: `<label>/<id>.png` or a `corpus.jsonl` listing.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        glyph_size: Option<usize>,
        /// Whiteness cutoff below which a pixel counts as ink.
        #[arg(long)]
        threshold: Option<f64>,
        /// Abort on the first unusable image instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Compose word images from a lexicon and a glyph corpus.
    Generate {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// overlapped, non_overlapped or both.
        #[arg(long)]
        mode: Option<String>,
        /// Overlapping columns between neighbouring glyphs.
        #[arg(long)]
        overlap: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        glyph_size: Option<usize>,
    },
    /// Train the recognizer on a generated dataset.
    Train {
        /// Dataset directory or its manifest.jsonl.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// adam or sgd.
        #[arg(long)]
        optimizer: Option<String>,
        /// Training share of the data, strictly between 0 and 1.
        #[arg(long)]
        split: Option<f64>,
        #[arg(long)]
        patience: Option<usize>,
        /// reference or tiny.
        #[arg(long)]
        model: Option<String>,
        /// codepoint or grapheme.
        #[arg(long)]
        class_unit: Option<String>,
        /// Stop once validation loss is below this with every word right.
        #[arg(long)]
        target_loss: Option<f64>,
    },
    /// Score a checkpoint on a manifest or on annotated pages.
    #[command(group(ArgGroup::new("source").required(true).args(["manifest", "pages"])))]
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Annotated page JSON.
        #[arg(long)]
        pages: Option<PathBuf>,
        /// Directory page paths are relative to (default: the JSON's).
        #[arg(long, requires = "pages")]
        image_root: Option<PathBuf>,
    },
    /// Transcribe one word image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.common.config {
        Some(p) => RunConfig::load(p).map_err(|e| Usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    let mut flags = RunConfig {
        seed: cli.common.seed,
        ..Default::default()
    };
    let out = cli.common.out;
    match cli.command {
        Command::Preprocess {
            input,
            glyph_size,
            threshold,
            strict,
        } => {
            flags.glyph_size = glyph_size;
            flags.threshold = threshold;
            flags.strict = strict.then_some(true);
            commands::preprocess(&input, out, &file.overridden_by(flags))
        }
        Command::Generate {
            lexicon,
            corpus,
            mode,
            overlap,
            count,
            glyph_size,
        } => {
            flags.mode = mode;
            flags.overlap = overlap;
            flags.count = count;
            flags.glyph_size = glyph_size;
            commands::generate(&lexicon, &corpus, out, &file.overridden_by(flags))
        }
        Command::Train {
            manifest,
            epochs,
            batch_size,
            learning_rate,
            optimizer,
            split,
            patience,
            model,
            class_unit,
            target_loss,
        } => {
            flags.epochs = epochs;
            flags.batch_size = batch_size;
            flags.learning_rate = learning_rate;
            flags.optimizer = optimizer;
            flags.split = split;
            flags.patience = patience;
            flags.model = model;
            flags.class_unit = class_unit;
            flags.target_loss = target_loss;
            commands::train(&manifest, out, &file.overridden_by(flags))
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            pages,
            image_root,
        } => {
            let source = match (manifest, pages) {
                (Some(m), _) => commands::TestSource::Manifest(m),
                (None, Some(p)) => commands::TestSource::Pages { json: p, image_root },
                (None, None) => unreachable!("clap requires a source"),
            };
            commands::evaluate(&checkpoint, source, out)
        }
        Command::Predict { checkpoint, image } => commands::predict(&checkpoint, &image),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
