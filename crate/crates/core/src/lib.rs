//! Synthetic handwritten-word generation and a convolutional +
//! bidirectional-LSTM word recognizer trained with CTC.
//!
//! The pipeline: glyph images are cropped and normalized ([`imaging`]),
//! composed into word images following a lexicon ([`synth`]), used to train
//! the recognizer ([`nn`], [`ctc`], [`training`]), and scored with word error
//! rate and alignment-based precision/recall ([`evaluation`]).

pub mod ctc;
pub mod evaluation;
pub mod imaging;
pub mod nn;
pub mod synth;
pub mod training;
