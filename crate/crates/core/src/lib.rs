//! End-to-end low-resource online speech recognition, desk scale: LFBE
//! features, spectrogram augmentation, a from-scratch LSTM/CTC acoustic
//! model, word-level decoding with an ARPA n-gram LM, and the training
//! regimes (scratch, domain adaptation, pseudo-label distillation,
//! self-training) built on top.

pub mod augment;
pub mod config;
pub mod ctc;
pub mod data;
pub mod error;
pub mod features;
pub mod math;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod wordlm;

pub use error::{Error, Result};
