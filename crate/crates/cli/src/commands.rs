use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use glyphforge::ctc::{Alphabet, ClassUnit};
use glyphforge::evaluation;
use glyphforge::imaging::{GrayRaster, InkThreshold};
use glyphforge::synth::{self, DatasetManifest, GlyphNormalization, Join, DEFAULT_OVERLAP_PX};
use glyphforge::training::{self, ModelPreset, Optimizer, TrainConfig, TrainError};

use crate::config::RunConfig;

/// Bad invocation; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(Usage(msg.into()).into())
}

fn require_out(out: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    match out {
        Some(o) => Ok(o),
        None => usage("--out <DIR> is required"),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn normalization(cfg: &RunConfig) -> anyhow::Result<GlyphNormalization> {
    let size = cfg.glyph_size.unwrap_or(synth::DEFAULT_GLYPH_SIZE);
    if size == 0 {
        return usage("--glyph-size must be positive");
    }
    let threshold = match cfg.threshold {
        Some(t) => match InkThreshold::new(t) {
            Ok(t) => t,
            Err(e) => return usage(e.to_string()),
        },
        None => InkThreshold::default(),
    };
    Ok(GlyphNormalization {
        width: size,
        height: size,
        threshold,
    })
}

pub fn preprocess(input: &Path, out: Option<PathBuf>, cfg: &RunConfig) -> anyhow::Result<()> {
    let out = require_out(out)?;
    let norm = normalization(cfg)?;
    let summary = synth::preprocess_corpus(input, &out, &norm, cfg.strict.unwrap_or(false))?;
    write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "processed {} glyphs in {} labels, skipped {}",
        summary.processed,
        summary.per_label.len(),
        summary.skipped.len()
    );
    for s in &summary.skipped {
        println!("  skipped {}: {}", s.path, s.reason);
    }
    Ok(())
}

enum GenMode {
    Single(Join),
    Both(usize),
}

pub fn generate(
    lexicon: &Path,
    corpus: &Path,
    out: Option<PathBuf>,
    cfg: &RunConfig,
) -> anyhow::Result<()> {
    let out = require_out(out)?;
    let norm = normalization(cfg)?;
    let overlap = |n: Option<usize>| -> anyhow::Result<usize> {
        let n = n.unwrap_or(DEFAULT_OVERLAP_PX);
        if n == 0 || n >= norm.width {
            return usage(format!(
                "--overlap must be between 1 and {} for {}px glyphs",
                norm.width - 1,
                norm.width
            ));
        }
        Ok(n)
    };
    let mode = match cfg.mode.as_deref().unwrap_or("overlapped") {
        "overlapped" => GenMode::Single(Join::Overlapped(overlap(cfg.overlap)?)),
        "non_overlapped" => {
            if cfg.overlap.is_some_and(|n| n > 0) {
                return usage("--overlap is only valid with --mode overlapped or both");
            }
            GenMode::Single(Join::NonOverlapped)
        }
        "both" => GenMode::Both(overlap(cfg.overlap)?),
        other => return usage(format!("unknown mode {other:?}; use overlapped, non_overlapped or both")),
    };
    let count = cfg.count.unwrap_or(100);
    if count == 0 {
        return usage("--count must be at least 1");
    }
    let seed = cfg.seed.unwrap_or(0);

    let lexicon = synth::load_lexicon(lexicon)?;
    let corpus = synth::load_glyph_corpus(corpus, &norm)?;
    let (coverable, skipped) = synth::coverage(&lexicon, &corpus);
    println!(
        "lexicon: {} words, {} coverable, {} uncoverable",
        lexicon.len(),
        coverable.len(),
        skipped.len()
    );
    if coverable.is_empty() {
        return Err(synth::SynthError::NoCoverableWords.into());
    }
    let runs = match mode {
        GenMode::Single(join) => vec![(join, out.clone())],
        GenMode::Both(n) => vec![
            (Join::NonOverlapped, out.join("non_overlapped")),
            (Join::Overlapped(n), out.join("overlapped")),
        ],
    };
    for (join, dir) in runs {
        let m = synth::generate_dataset(&lexicon, &corpus, join, count, seed, &dir)?;
        println!(
            "{}: {} images, {} symbols -> {}",
            join.mode().as_str(),
            m.records().len(),
            m.alphabet().len(),
            dir.display()
        );
    }
    Ok(())
}

fn train_config(cfg: &RunConfig) -> anyhow::Result<TrainConfig> {
    let d = TrainConfig::default();
    let optimizer = match cfg.optimizer.as_deref().unwrap_or("adam") {
        "sgd" => Optimizer::Sgd,
        "adam" => {
            let Optimizer::Adam { beta1, beta2, epsilon } = Optimizer::default() else {
                unreachable!()
            };
            Optimizer::Adam {
                beta1: cfg.beta1.unwrap_or(beta1),
                beta2: cfg.beta2.unwrap_or(beta2),
                epsilon: cfg.epsilon.unwrap_or(epsilon),
            }
        }
        other => return usage(format!("unknown optimizer {other:?}; use adam or sgd")),
    };
    let model = match cfg.model.as_deref().unwrap_or("reference") {
        "reference" => ModelPreset::Reference,
        "tiny" => ModelPreset::Tiny,
        other => return usage(format!("unknown model {other:?}; use reference or tiny")),
    };
    let class_unit = match cfg.class_unit.as_deref().unwrap_or("codepoint") {
        "codepoint" => ClassUnit::Codepoint,
        "grapheme" => ClassUnit::Grapheme,
        other => return usage(format!("unknown class unit {other:?}; use codepoint or grapheme")),
    };
    let config = TrainConfig {
        epochs: cfg.epochs.unwrap_or(d.epochs),
        batch_size: cfg.batch_size.unwrap_or(d.batch_size),
        learning_rate: cfg.learning_rate.unwrap_or(d.learning_rate),
        optimizer,
        seed: cfg.seed.unwrap_or(d.seed),
        split_ratio: cfg.split.unwrap_or(d.split_ratio),
        patience: cfg.patience.unwrap_or(d.patience),
        model,
        class_unit,
        target_loss: cfg.target_loss.or(d.target_loss),
    };
    if let Err(e) = config.validate() {
        return usage(e.to_string());
    }
    Ok(config)
}

pub fn train(manifest: &Path, out: Option<PathBuf>, cfg: &RunConfig) -> anyhow::Result<()> {
    let out = require_out(out)?;
    let config = train_config(cfg)?;
    let manifest = DatasetManifest::load(manifest)?;
    let alphabet = training::dataset_alphabet(&manifest, config.class_unit)?;
    let (train_set, val_set) = training::split_dataset(&manifest, config.split_ratio, config.seed)?;
    println!(
        "{} training / {} validation samples, {} classes",
        train_set.records().len(),
        val_set.records().len(),
        alphabet.num_classes()
    );
    println!("{:>6} {:>12} {:>12} {:>9}", "epoch", "train_loss", "val_loss", "val_wer");
    let outcome = training::train(
        &config,
        &alphabet,
        &train_set,
        &val_set,
        Some(&out),
        &mut |m| {
            println!(
                "{:>6} {:>12.6} {:>12.6} {:>9.4}",
                m.epoch, m.train_loss, m.val_loss, m.val_wer
            )
        },
    )?;
    write(&out.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    let best = outcome
        .metrics
        .iter()
        .find(|m| m.epoch == outcome.best.epoch)
        .expect("best epoch is logged");
    let last = outcome.metrics.last().expect("at least one epoch");
    println!("stopped: {:?} after epoch {}", outcome.stop, last.epoch);
    println!(
        "best epoch {}: val loss {:.6}, val WER {:.4} -> {}",
        best.epoch,
        best.val_loss,
        best.val_wer,
        out.join(training::BEST_CHECKPOINT).display()
    );
    println!("final val WER {:.4}", last.val_wer);
    Ok(())
}

pub enum TestSource {
    Manifest(PathBuf),
    Pages {
        json: PathBuf,
        image_root: Option<PathBuf>,
    },
}

fn ensure_covered<'a>(alphabet: &Alphabet, texts: impl IntoIterator<Item = &'a str>) -> anyhow::Result<()> {
    match training::check_alphabet(alphabet, texts) {
        Err(TrainError::AlphabetMismatch { missing }) => {
            bail!("AlphabetMismatch: checkpoint alphabet lacks {missing}")
        }
        other => Ok(other?),
    }
}

pub fn evaluate(checkpoint: &Path, source: TestSource, out: Option<PathBuf>) -> anyhow::Result<()> {
    let out = require_out(out)?;
    let ckpt = training::load_checkpoint(checkpoint)?;
    let arch = ckpt.params.architecture();
    let (inputs, references): (Vec<Vec<f64>>, Vec<String>) = match source {
        TestSource::Manifest(path) => {
            let manifest = DatasetManifest::load(&path)?;
            ensure_covered(&ckpt.alphabet, manifest.records().iter().map(|r| r.transcript.as_str()))?;
            let mut pairs = Vec::with_capacity(manifest.records().len());
            for r in manifest.records() {
                let img = GrayRaster::load_png(&manifest.image_path(r))?;
                pairs.push((training::prepare_input(&img, arch)?, r.transcript.clone()));
            }
            pairs.into_iter().unzip()
        }
        TestSource::Pages { json, image_root } => {
            let root = image_root.unwrap_or_else(|| {
                json.parent().map(Path::to_path_buf).unwrap_or_default()
            });
            let words = synth::ingest_annotated_pages(&json, &root)?;
            ensure_covered(&ckpt.alphabet, words.iter().map(|(_, t)| t.as_str()))?;
            let mut pairs = Vec::with_capacity(words.len());
            for (img, t) in words {
                pairs.push((training::prepare_input(&img, arch)?, t));
            }
            pairs.into_iter().unzip()
        }
    };
    if inputs.is_empty() {
        bail!("test source has no samples");
    }
    let slices: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let predictions: Vec<String> = training::transcribe(&ckpt.params, &ckpt.alphabet, &slices)?
        .into_iter()
        .map(|t| t.text)
        .collect();
    let report = evaluation::report(&predictions, &references)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("report.json"), report.to_json() + "\n")?;
    write(&out.join("samples.jsonl"), report.samples_jsonl())?;
    println!(
        "{:>8} {:>9} {:>10} {:>8} {:>9} {:>14}",
        "WER", "accuracy", "precision", "recall", "F1", "matched"
    );
    println!(
        "{:>8.4} {:>9.4} {:>10.4} {:>8.4} {:>9.4} {:>14}",
        report.wer,
        report.accuracy,
        report.precision,
        report.recall,
        report.f1,
        format!("{}/{}", report.matched_words, report.total_words)
    );
    println!("CER {:.4} (diagnostic)", report.cer);
    Ok(())
}

pub fn predict(checkpoint: &Path, image: &Path) -> anyhow::Result<()> {
    let ckpt = training::load_checkpoint(checkpoint)?;
    let img = GrayRaster::load_png(image)?;
    let input = training::prepare_input(&img, ckpt.params.architecture())?;
    let t = training::transcribe(&ckpt.params, &ckpt.alphabet, &[input.as_slice()])?
        .pop()
        .expect("one input, one transcription");
    println!("{}", t.text);
    println!(
        "frames {}, mean top-1 confidence {:.4}, min {:.4}",
        t.frame_confidence.len(),
        t.mean_confidence(),
        t.min_confidence()
    );
    Ok(())
}
