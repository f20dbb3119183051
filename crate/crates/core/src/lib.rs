//! Multilingual joint CTC-attention speech recognition at desk scale.
//!
//! The crate bundles a small reverse-mode differentiation engine, an
//! acoustic front end with a two-stage stacked bottleneck extractor, a
//! BLSTMP encoder with a location-aware attention decoder and CTC head,
//! multilingual training regimes (pooling, fine-tuning, output-layer
//! transfer), joint CTC/attention beam search, and a synthetic-language
//! harness for running the experiments end to end.

pub mod autodiff;
pub mod config;
pub mod ctc;
pub mod decoding;
pub mod error;
pub mod features;
pub mod harness;
pub mod model;
pub mod training;

pub use error::{Error, Result};
