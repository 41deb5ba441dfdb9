//! Dataset splitting, the optimization loop and checkpoint files.

mod checkpoint;
mod data;

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::{Alphabet, ClassUnit, CtcError};
use crate::evaluation::{self, EvalError};
use crate::imaging::ImagingError;
use crate::nn::{Architecture, ModelParams, NnError, Tensor};
use crate::synth::{DatasetManifest, SynthError};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use data::{
    batch_tensor, check_alphabet, dataset_alphabet, load_samples, prepare_input,
    sample_from_image, transcribe, Sample, Transcription,
};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.gfck";
pub const LAST_CHECKPOINT: &str = "last.gfck";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("alphabet does not cover codepoints {missing}")]
    AlphabetMismatch { missing: String },
    #[error("transcript {transcript:?} needs {required} frames, the model has {frames}")]
    InfeasibleTarget {
        transcript: String,
        frames: usize,
        required: usize,
    },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("{0} parameter tensors but {1} gradients")]
    ShapeMismatch(String, String),
    #[error("not a checkpoint file")]
    NotACheckpoint,
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is truncated or its checksum does not match")]
    CorruptChecksum,
    #[error("checkpoint header: {0}")]
    CorruptHeader(String),
    #[error("I/O on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Layer-size preset; the class count comes from the alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    #[default]
    Reference,
    Tiny,
}

impl ModelPreset {
    pub fn architecture(self, num_classes: usize) -> Architecture {
        match self {
            ModelPreset::Reference => Architecture::reference(num_classes),
            ModelPreset::Tiny => Architecture::tiny(num_classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Training share of the split.
    pub split_ratio: f64,
    /// Epochs without a validation-loss improvement before stopping;
    /// 0 disables early stopping.
    pub patience: usize,
    pub model: ModelPreset,
    pub class_unit: ClassUnit,
    /// Stop as soon as the validation loss is below this and every
    /// validation word is recognized.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
            split_ratio: 0.8,
            patience: 5,
            model: ModelPreset::Reference,
            class_unit: ClassUnit::Codepoint,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio {} not in (0, 1)", self.split_ratio));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) || !(epsilon > 0.0) {
                return bad("adam needs 0 <= beta < 1 and epsilon > 0".into());
            }
        }
        if let Some(t) = self.target_loss {
            if !(t > 0.0) {
                return bad(format!("target_loss {t} must be positive"));
            }
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first `floor(ratio * n)` records train.
pub fn split_dataset(
    manifest: &DatasetManifest,
    ratio: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TrainError::InvalidConfig(format!("split ratio {ratio} not in (0, 1)")));
    }
    let n = manifest.records().len();
    if n == 0 {
        return Err(TrainError::EmptyManifest);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = split_point(n, ratio);
    Ok((manifest.subset(&order[..cut]), manifest.subset(&order[cut..])))
}

fn split_point(n: usize, ratio: f64) -> usize {
    // products such as 0.57 * 100 land a hair below the integer; snap those
    let exact = ratio * n as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 * n as f64 {
        rounded as usize
    } else {
        exact.floor() as usize
    }
}

/// Per-tensor moment estimates for the optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

/// One update of `params` from `grads`. SGD: `p - lr g`; Adam: the
/// bias-corrected moment update.
pub fn optimizer_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Tensor],
    state: &mut OptimizerState,
    optimizer: &Optimizer,
    learning_rate: f64,
) -> Result<()> {
    let params: Vec<&mut Tensor> = params.into_iter().collect();
    if params.len() != grads.len()
        || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape())
    {
        let shapes = |it: Vec<&[usize]>| format!("{it:?}");
        return Err(TrainError::ShapeMismatch(
            shapes(params.iter().map(|p| p.shape()).collect()),
            shapes(grads.iter().map(|g| g.shape()).collect()),
        ));
    }
    if state.first.is_empty() {
        state.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.second = state.first.clone();
    }
    state.step += 1;
    match *optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.into_iter().zip(grads) {
                for (v, d) in p.values_mut().iter_mut().zip(g.values()) {
                    *v -= learning_rate * d;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((p, g), m), s) in params
                .into_iter()
                .zip(grads)
                .zip(&mut state.first)
                .zip(&mut state.second)
            {
                for (((v, &d), m), s) in p.values_mut().iter_mut().zip(g.values()).zip(m).zip(s) {
                    *m = beta1 * *m + (1.0 - beta1) * d;
                    *s = beta2 * *s + (1.0 - beta2) * d * d;
                    *v -= learning_rate * (*m / c1) / ((*s / c2).sqrt() + epsilon);
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_wer: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub stop: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EpochLimit,
    Patience,
    TargetReached,
}

/// Validation loss and WER of `params` on prepared samples.
pub fn validate_samples(
    params: &ModelParams,
    alphabet: &Alphabet,
    samples: &[Sample],
) -> Result<(f64, f64)> {
    let arch = params.architecture();
    let per_sample = samples
        .par_iter()
        .map(|s| {
            let logp = params.forward(&batch_tensor([s.input.as_slice()], arch)?)?;
            let (t, c) = (logp.shape()[1], logp.shape()[2]);
            let frames = logp.reshape(vec![t, c])?;
            let loss = crate::ctc::ctc_loss(&frames, &s.target)?.loss;
            let text = crate::ctc::greedy_decode(&frames, alphabet)?;
            Ok((loss, text))
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = per_sample.iter().map(|(l, _)| l).sum::<f64>() / samples.len() as f64;
    let preds: Vec<String> = per_sample.into_iter().map(|(_, t)| t).collect();
    let refs: Vec<String> = samples.iter().map(|s| s.transcript.clone()).collect();
    Ok((loss, evaluation::wer(&preds, &refs)?))
}

/// Trains on `train`, monitoring `val`. With `out_dir` set, appends every
/// epoch to `metrics.jsonl` and keeps `best.gfck` / `last.gfck` current.
pub fn train(
    config: &TrainConfig,
    alphabet: &Alphabet,
    train: &DatasetManifest,
    val: &DatasetManifest,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.records().is_empty() || val.records().is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    let arch = config.model.architecture(alphabet.num_classes());
    let train_set = load_samples(train, alphabet, &arch)?;
    let val_set = load_samples(val, alphabet, &arch)?;
    train_samples(config, alphabet, &train_set, &val_set, out_dir, on_epoch)
}

/// [`train`] on samples already in memory.
pub fn train_samples(
    config: &TrainConfig,
    alphabet: &Alphabet,
    train_set: &[Sample],
    val_set: &[Sample],
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    let arch = config.model.architecture(alphabet.num_classes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(arch.clone(), rng.next_u64())?;
    let mut state = OptimizerState::default();

    let mut metrics_log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(METRICS_FILE);
            Some((File::create(&path).map_err(io_err(&path))?, path))
        }
        None => None,
    };

    let snapshot = |params: &ModelParams, step: u64, epoch: usize| Checkpoint {
        params: params.clone(),
        alphabet: alphabet.clone(),
        step,
        epoch,
        config: config.clone(),
    };
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut metrics = Vec::new();
    let mut stale = 0;
    let mut stop = StopReason::EpochLimit;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let step = state.step + 1;
            let results = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_set[i];
                    let x = batch_tensor([s.input.as_slice()], &arch)?;
                    Ok(params.loss_and_grads(&x, std::slice::from_ref(&s.target))?)
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> = results[0]
                .1
                .iter()
                .map(|g| Tensor::zeros(g.shape().to_vec()))
                .collect();
            let mut batch_loss = 0.0;
            for (loss, sample_grads) in &results {
                batch_loss += loss * scale;
                for (acc, g) in grads.iter_mut().zip(sample_grads) {
                    crate::nn::axpy(scale, g.values(), acc.values_mut());
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step,
                    detail: format!("epoch {epoch}, batch loss {batch_loss}"),
                });
            }
            if let Some(((name, _), _)) = params
                .named_tensors()
                .into_iter()
                .zip(&grads)
                .find(|(_, g)| g.values().iter().any(|v| !v.is_finite()))
            {
                return Err(TrainError::NonFiniteLoss {
                    step,
                    detail: format!("epoch {epoch}, gradient of {name}"),
                });
            }
            optimizer_step(
                params.tensors_mut(),
                &grads,
                &mut state,
                &config.optimizer,
                config.learning_rate,
            )?;
            params.round_to_f32();
            if let Some((name, _)) = params
                .named_tensors()
                .into_iter()
                .find(|(_, t)| t.values().iter().any(|v| !v.is_finite()))
            {
                return Err(TrainError::NonFiniteLoss {
                    step,
                    detail: format!("epoch {epoch}, parameter {name} diverged"),
                });
            }
            loss_sum += batch_loss * batch.len() as f64;
        }

        let (val_loss, val_wer) = validate_samples(&params, alphabet, val_set)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_wer,
        };
        info!(
            "epoch {epoch}: train loss {:.4}, val loss {val_loss:.4}, val WER {val_wer:.4}",
            m.train_loss
        );
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: state.step,
                detail: format!("epoch {epoch}, validation loss {val_loss}"),
            });
        }
        if let Some((file, path)) = metrics_log.as_mut() {
            let mut line = serde_json::to_vec(&m).expect("serializable");
            line.push(b'\n');
            file.write_all(&line).map_err(io_err(path))?;
        }
        metrics.push(m);
        on_epoch(&m);

        let improved = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
        if improved {
            let ck = snapshot(&params, state.step, epoch);
            if let Some(dir) = out_dir {
                save_checkpoint(&ck, &dir.join(BEST_CHECKPOINT))?;
            }
            best = Some((val_loss, ck));
            stale = 0;
        } else {
            stale += 1;
        }
        if config.target_loss.is_some_and(|t| val_loss < t) && val_wer == 0.0 {
            stop = StopReason::TargetReached;
            break;
        }
        if config.patience > 0 && stale >= config.patience {
            stop = StopReason::Patience;
            break;
        }
    }

    let last = snapshot(&params, state.step, metrics.len());
    if let Some(dir) = out_dir {
        save_checkpoint(&last, &dir.join(LAST_CHECKPOINT))?;
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch").1,
        last,
        metrics,
        stop,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}
