use std::collections::BTreeSet;

use rayon::prelude::*;

use super::{Result, TrainError};
use crate::ctc::{self, Alphabet, ClassUnit};
use crate::imaging::{self, GrayRaster, InkThreshold};
use crate::nn::{Architecture, ModelParams, Tensor};
use crate::synth::DatasetManifest;

/// Tight crop, then resize to the network input. Used identically for
/// training, evaluation and prediction.
pub fn prepare_input(img: &GrayRaster, arch: &Architecture) -> Result<Vec<f64>> {
    let cropped = imaging::tight_crop(img, InkThreshold::default())?;
    Ok(imaging::resize(&cropped, arch.input_width, arch.input_height)?.into_pixels())
}

/// A prepared input with its encoded transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<usize>,
    pub transcript: String,
}

/// Alphabet for a dataset: sorted codepoints, or the glyph labels recorded
/// at generation time.
pub fn dataset_alphabet(manifest: &DatasetManifest, unit: ClassUnit) -> Result<Alphabet> {
    match unit {
        ClassUnit::Codepoint => Ok(Alphabet::from_texts(
            manifest.records().iter().map(|r| r.transcript.as_str()),
        )),
        ClassUnit::Grapheme => {
            if manifest.graphemes().is_empty() {
                return Err(TrainError::InvalidConfig(
                    "grapheme classes need graphemes.json next to the manifest".into(),
                ));
            }
            Ok(Alphabet::new(manifest.graphemes().to_vec(), ClassUnit::Grapheme)?)
        }
    }
}

/// Fails with the offending codepoints if any transcript cannot be encoded.
pub fn check_alphabet<'a>(
    alphabet: &Alphabet,
    transcripts: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let mut missing = BTreeSet::new();
    let mut unencodable = None;
    for t in transcripts {
        missing.extend(alphabet.missing_codepoints(t));
        if unencodable.is_none() && alphabet.encode(t).is_err() {
            unencodable = Some(t.to_string());
        }
    }
    if !missing.is_empty() {
        return Err(TrainError::AlphabetMismatch {
            missing: missing.into_iter().collect(),
        });
    }
    if let Some(t) = unencodable {
        return Err(TrainError::AlphabetMismatch {
            missing: format!("(no segmentation of {t:?})"),
        });
    }
    Ok(())
}

/// Loads, prepares and encodes every record of `manifest`.
pub fn load_samples(
    manifest: &DatasetManifest,
    alphabet: &Alphabet,
    arch: &Architecture,
) -> Result<Vec<Sample>> {
    check_alphabet(alphabet, manifest.records().iter().map(|r| r.transcript.as_str()))?;
    manifest
        .records()
        .par_iter()
        .map(|r| {
            let path = manifest.image_path(r);
            let img = GrayRaster::load_png(&path)?;
            sample_from_image(&img, &r.transcript, alphabet, arch)
        })
        .collect()
}

pub fn sample_from_image(
    img: &GrayRaster,
    transcript: &str,
    alphabet: &Alphabet,
    arch: &Architecture,
) -> Result<Sample> {
    let target = alphabet.encode(transcript)?;
    let required = ctc::min_frames(&target);
    if required > arch.frames() {
        return Err(TrainError::InfeasibleTarget {
            transcript: transcript.to_string(),
            frames: arch.frames(),
            required,
        });
    }
    Ok(Sample {
        input: prepare_input(img, arch)?,
        target,
        transcript: transcript.to_string(),
    })
}

/// Stacks inputs into a `[N, 1, H, W]` batch.
pub fn batch_tensor<'a>(inputs: impl IntoIterator<Item = &'a [f64]>, arch: &Architecture) -> Result<Tensor> {
    let mut values = Vec::new();
    let mut n = 0;
    for x in inputs {
        values.extend_from_slice(x);
        n += 1;
    }
    Ok(Tensor::new(vec![n, 1, arch.input_height, arch.input_width], values)?)
}

/// A decoded transcript with the top-1 probability of every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub text: String,
    pub frame_confidence: Vec<f64>,
}

impl Transcription {
    pub fn mean_confidence(&self) -> f64 {
        self.frame_confidence.iter().sum::<f64>() / self.frame_confidence.len().max(1) as f64
    }

    pub fn min_confidence(&self) -> f64 {
        self.frame_confidence.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Forward pass and greedy decoding of prepared inputs.
pub fn transcribe(
    params: &ModelParams,
    alphabet: &Alphabet,
    inputs: &[&[f64]],
) -> Result<Vec<Transcription>> {
    let arch = params.architecture();
    inputs
        .par_iter()
        .map(|x| {
            let logp = params.forward(&batch_tensor([*x], arch)?)?;
            let (t, c) = (logp.shape()[1], logp.shape()[2]);
            let frames = logp.reshape(vec![t, c])?;
            let text = ctc::greedy_decode(&frames, alphabet)?;
            let frame_confidence = frames
                .values()
                .chunks(c)
                .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp())
                .collect();
            Ok(Transcription {
                text,
                frame_confidence,
            })
        })
        .collect()
}
