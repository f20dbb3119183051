//! Acoustic front end and the two-stage stacked bottleneck (SBN) extractor.
//!
//! Dimension chain of the SBN path: 37 raw (24 log Mel + 13 pitch) →
//! 222 (11-frame Hamming/DCT context) → 80 (first bottleneck) → 1680
//! (21 stacked frames, every 5th kept) → 30 (second bottleneck).

pub mod archive;
mod context;
mod fbank;
mod pitch;
mod sbn;

pub use context::{
    conversation_mean_subtract, dct_basis, mean_subtract_by_side, stack_downsample, stack_indices,
    stage1_input,
};
pub use fbank::{compute_fbank, log_mel, raw_features, FrameLayout};
pub use pitch::pitch_features;
pub use sbn::{
    block_softmax, extract_sbn, train_sbn, SbnConfig, SbnParams, SbnTrainReport, SbnUtterance,
};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FBANK_DIM: usize = 80;
pub const RAW_DIM: usize = 37;
pub const STAGE1_INPUT_DIM: usize = 222;
pub const BN1_DIM: usize = 80;
pub const STACKED_DIM: usize = 1680;
pub const BN2_DIM: usize = 30;

/// `T × D` feature matrix for one utterance at a 10 ms frame shift.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub frames: Tensor,
}

impl FeatureSequence {
    pub const FRAME_SHIFT_MS: u32 = 10;
    pub const FRAME_LENGTH_MS: u32 = 25;

    pub fn new(id: impl Into<String>, frames: Tensor) -> Result<Self> {
        let id = id.into();
        if frames.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "{id}: features must be [T, D], got {:?}",
                frames.shape()
            )));
        }
        if !frames.all_finite() {
            return Err(Error::Invalid(format!("{id}: non-finite feature value")));
        }
        Ok(FeatureSequence { id, frames })
    }

    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let id = id.into();
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension(format!("{id}: ragged or empty rows")));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(id, Tensor::matrix(rows.len(), dim, data)?)
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub(crate) fn expect_dim(&self, dim: usize, what: &str) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::Dimension(format!(
                "{what} expects {dim}-dim features, {} has {}",
                self.id,
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Per-frame phone-state labels aligned to a [`FeatureSequence`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhoneTargetSequence {
    pub id: String,
    pub labels: Vec<usize>,
    pub language: String,
}
