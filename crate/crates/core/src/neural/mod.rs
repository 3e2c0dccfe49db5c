//! Forward math of the copywriting model, written against a generic float
//! scalar: gated visual embedding, sinusoidal positions, decoder embedding, a
//! pre-normalization decoder block, the vocabulary softmax, and a finite
//! difference gradient checker. No training.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

mod decoder;
pub mod gradcheck;
pub mod init;
mod matrix;
mod vel;

pub use decoder::{
    decoder_embed, decoder_embed_dense, decoder_forward, fusion_block_forward,
    multi_head_attention, positional_encoding, token_distribution, transformer_block_forward,
    Attention, BlockParams, DecoderParams, FeedForward, FusionBlockParams, LayerNorm,
};
pub use gradcheck::{gradcheck, Differentiable, GradOp};
pub use matrix::Matrix;
pub use vel::{vel_forward, vel_forward_rows, VelParams};

pub trait Scalar: Float + FromPrimitive + Debug + Send + Sync + 'static {}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Send + Sync + 'static {}

#[inline]
pub(crate) fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Layer count, hidden size and head count of the fusion/decoder stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub visual_dim: usize,
    pub ff_dim: usize,
}

impl ModelConfig {
    /// 12 layers, width 768, 12 heads, 2048-d clip features.
    pub const BASE: ModelConfig = ModelConfig {
        layers: 12,
        hidden: 768,
        heads: 12,
        visual_dim: 2048,
        ff_dim: 3072,
    };

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.heads == 0
            || !self.hidden.is_multiple_of(self.heads)
            || !self.hidden.is_multiple_of(2)
        {
            return Err(Error::InvalidParameter(format!(
                "inconsistent model config {self:?}"
            )));
        }
        Ok(())
    }

    /// Shape of the fused sequence for `frames` video rows, `words` summary
    /// tokens and `keys` structured-info keys.
    pub fn fusion_shape(&self, frames: usize, words: usize, keys: usize) -> (usize, usize) {
        (frames + words + keys, self.hidden)
    }
}

/// Adds the sinusoidal encoding of each key's priority rank to its embedding.
/// Rows of `keys` must already be in priority order.
pub fn add_priority_positions<T: Scalar>(keys: &Matrix<T>) -> Result<Matrix<T>> {
    keys.add(&positional_encoding(keys.rows(), keys.cols())?)
}

/// Concatenates video, summary and key rows (in that order) into the fusion
/// input sequence.
pub fn fusion_input<T: Scalar>(
    video: &Matrix<T>,
    summary: &Matrix<T>,
    keys: &Matrix<T>,
) -> Result<Matrix<T>> {
    let d = video.cols();
    if summary.cols() != d || keys.cols() != d {
        return Err(Error::Shape(format!(
            "modality widths differ: video {d}, summary {}, keys {}",
            summary.cols(),
            keys.cols()
        )));
    }
    Matrix::vstack(&[video, summary, keys])
}
