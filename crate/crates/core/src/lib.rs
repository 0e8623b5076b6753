//! Transformer image captioning over precomputed CNN feature grids.
//!
//! The crate is organised bottom-up:
//!
//! * [`ndcore`]: dense tensors and a reverse-mode autodiff tape.
//! * [`transformer`]: the encoder/decoder captioning model.
//! * [`textpipe`]: caption normalisation, vocabulary and fixed-length encoding.
//! * [`datapipe`]: caption and feature file loading, splits, batching.
//! * [`trainer`]: Adam, checkpoints, metrics and BLEU-4 early stopping.
//! * [`captioner`]: greedy decoding and BLEU scoring.
//!
//! Feature grids come from a headless CNN and are read from CAPF1 files
//! (see [`datapipe::capf`]).

pub mod captioner;
pub mod config;
pub mod datapipe;
mod error;
pub mod fixtures;
pub mod ndcore;
pub mod selftest;
pub mod textpipe;
pub mod trainer;
pub mod transformer;

pub use error::{Error, Result};
