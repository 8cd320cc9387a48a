//! Fundamental-frequency (F0) contour tracking.
//!
//! The crate covers the whole pipeline: waveform and ground-truth ingestion,
//! STFT features, three learned trackers (DNN regression, RNN encoder
//! regression and a DNN-HMM classifier decoded with Viterbi), a YIN-style
//! baseline, and GPE/FPE scoring. The `f0track` binary drives full
//! experiments from a TOML manifest.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod models;
pub mod nn;
pub mod rng;
pub mod signal_io;
pub mod synth;
pub mod yin;

pub mod cli;

pub use error::{Error, Result};
pub use signal_io::{F0Contour, F0Frame, Waveform};
