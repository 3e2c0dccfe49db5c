//! Central finite-difference check of the analytic input gradients.
//!
//! Each checked operation is reduced to a scalar loss `Σ c ∘ output` with a
//! fixed random weight tensor `c`. Plain summation would make the softmax
//! head's gradient identically zero.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::decoder::{
    decoder_embed_dense, token_distribution, token_distribution_input_grad,
    transformer_block_forward, transformer_block_input_grad, BlockParams,
};
use super::init::{random_block, random_matrix, random_vec, random_vel};
use super::matrix::dot;
use super::vel::{vel_forward, vel_input_grad, VelParams};
use super::{Matrix, Scalar};

pub const PASS_THRESHOLD: f64 = 1e-5;
pub const DEFAULT_EPS: f64 = 1e-6;

/// A scalar loss over a flat input vector, with its analytic gradient.
pub trait Differentiable<T: Scalar> {
    fn input(&self) -> Vec<T>;
    fn loss(&self, x: &[T]) -> Result<T>;
    fn gradient(&self, x: &[T]) -> Result<Vec<T>>;
}

/// Max over coordinates of `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn gradcheck<T: Scalar, D: Differentiable<T> + ?Sized>(op: &D, eps: T) -> Result<T> {
    let lo: T = super::c(1e-7);
    let hi: T = super::c(1e-4);
    if !(eps >= lo && eps <= hi) {
        return Err(Error::InvalidParameter(
            "finite-difference step must lie in [1e-7, 1e-4]".into(),
        ));
    }
    let x0 = op.input();
    let analytic = op.gradient(&x0)?;
    if analytic.len() != x0.len() {
        return Err(Error::Shape(
            "gradient length differs from input length".into(),
        ));
    }
    let two: T = super::c(2.0);
    let mut worst = T::zero();
    let mut x = x0.clone();
    for i in 0..x0.len() {
        x[i] = x0[i] + eps;
        let up = op.loss(&x)?;
        x[i] = x0[i] - eps;
        let down = op.loss(&x)?;
        x[i] = x0[i];
        let numeric = (up - down) / (two * eps);
        let a = analytic[i];
        let scale = T::one().max(a.abs()).max(numeric.abs());
        let err = (a - numeric).abs() / scale;
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("gradient coordinate {i}")));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// `Σ c ∘ (W·x)`.
pub struct LinearCheck<T> {
    pub weights: Matrix<T>,
    pub x: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> Differentiable<T> for LinearCheck<T> {
    fn input(&self) -> Vec<T> {
        self.x.clone()
    }

    fn loss(&self, x: &[T]) -> Result<T> {
        Ok(dot(&self.weights.apply(x)?, &self.c))
    }

    fn gradient(&self, _x: &[T]) -> Result<Vec<T>> {
        self.weights.apply_t(&self.c)
    }
}

pub struct VelCheck<T> {
    pub params: VelParams<T>,
    pub v: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> Differentiable<T> for VelCheck<T> {
    fn input(&self) -> Vec<T> {
        self.v.clone()
    }

    fn loss(&self, x: &[T]) -> Result<T> {
        Ok(dot(&vel_forward(x, &self.params)?, &self.c))
    }

    fn gradient(&self, x: &[T]) -> Result<Vec<T>> {
        vel_input_grad(x, &self.params, &self.c)
    }
}

/// Input is the flattened caption matrix followed by the flattened `W_p`.
pub struct DecoderEmbedCheck<T> {
    pub caption: Matrix<T>,
    pub token_embedding: Matrix<T>,
    pub position_projection: Matrix<T>,
    pub c: Matrix<T>,
}

impl<T: Scalar> DecoderEmbedCheck<T> {
    fn split(&self, x: &[T]) -> Result<(Matrix<T>, Matrix<T>)> {
        let (t, v) = self.caption.shape();
        let d = self.position_projection.rows();
        if x.len() != t * v + d * d {
            return Err(Error::Shape("decoder embed input length".into()));
        }
        Ok((
            Matrix::from_vec(t, v, x[..t * v].to_vec())?,
            Matrix::from_vec(d, d, x[t * v..].to_vec())?,
        ))
    }
}

impl<T: Scalar> Differentiable<T> for DecoderEmbedCheck<T> {
    fn input(&self) -> Vec<T> {
        let mut x = self.caption.as_slice().to_vec();
        x.extend_from_slice(self.position_projection.as_slice());
        x
    }

    fn loss(&self, x: &[T]) -> Result<T> {
        let (caption, wp) = self.split(x)?;
        let h = decoder_embed_dense(&caption, &self.token_embedding, &wp)?;
        Ok(dot(h.as_slice(), self.c.as_slice()))
    }

    fn gradient(&self, _x: &[T]) -> Result<Vec<T>> {
        let pe = super::positional_encoding::<T>(self.caption.rows(), self.token_embedding.cols())?;
        let mut g = self.c.matmul_t(&self.token_embedding)?.into_vec();
        g.extend(pe.transpose().matmul(&self.c)?.into_vec());
        Ok(g)
    }
}

/// Input is the flattened caption states followed by the flattened memory.
pub struct BlockCheck<T> {
    pub params: BlockParams<T>,
    pub h: Matrix<T>,
    pub memory: Matrix<T>,
    pub c: Matrix<T>,
}

impl<T: Scalar> BlockCheck<T> {
    fn split(&self, x: &[T]) -> Result<(Matrix<T>, Matrix<T>)> {
        let n = self.h.as_slice().len();
        Ok((
            Matrix::from_vec(self.h.rows(), self.h.cols(), x[..n].to_vec())?,
            Matrix::from_vec(self.memory.rows(), self.memory.cols(), x[n..].to_vec())?,
        ))
    }
}

impl<T: Scalar> Differentiable<T> for BlockCheck<T> {
    fn input(&self) -> Vec<T> {
        let mut x = self.h.as_slice().to_vec();
        x.extend_from_slice(self.memory.as_slice());
        x
    }

    fn loss(&self, x: &[T]) -> Result<T> {
        let (h, m) = self.split(x)?;
        let out = transformer_block_forward(&h, &m, &self.params)?;
        Ok(dot(out.as_slice(), self.c.as_slice()))
    }

    fn gradient(&self, x: &[T]) -> Result<Vec<T>> {
        let (h, m) = self.split(x)?;
        let (dh, dm) = transformer_block_input_grad(&h, &m, &self.params, &self.c)?;
        let mut g = dh.into_vec();
        g.extend(dm.into_vec());
        Ok(g)
    }
}

pub struct TokenDistributionCheck<T> {
    pub h: Vec<T>,
    pub output_embedding: Matrix<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> Differentiable<T> for TokenDistributionCheck<T> {
    fn input(&self) -> Vec<T> {
        self.h.clone()
    }

    fn loss(&self, x: &[T]) -> Result<T> {
        Ok(dot(
            &token_distribution(x, &self.output_embedding)?,
            &self.c,
        ))
    }

    fn gradient(&self, x: &[T]) -> Result<Vec<T>> {
        token_distribution_input_grad(x, &self.output_embedding, &self.c)
    }
}

/// The operations covered by the `gradcheck` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOp {
    Linear,
    VisualEmbedding,
    DecoderEmbed,
    TransformerBlock,
    TokenDistribution,
}

impl GradOp {
    pub const ALL: [GradOp; 5] = [
        GradOp::Linear,
        GradOp::VisualEmbedding,
        GradOp::DecoderEmbed,
        GradOp::TransformerBlock,
        GradOp::TokenDistribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Linear => "linear",
            GradOp::VisualEmbedding => "vel_forward",
            GradOp::DecoderEmbed => "decoder_embed",
            GradOp::TransformerBlock => "transformer_block_forward",
            GradOp::TokenDistribution => "token_distribution",
        }
    }

    /// Small random instance in double precision.
    pub fn instance(self, seed: u64) -> Box<dyn Differentiable<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            GradOp::Linear => Box::new(LinearCheck {
                weights: random_matrix(&mut rng, 5, 7, 1.0),
                x: random_vec(&mut rng, 7, 1.0),
                c: random_vec(&mut rng, 5, 1.0),
            }),
            GradOp::VisualEmbedding => Box::new(VelCheck {
                params: random_vel(&mut rng, 12, 6),
                v: random_vec(&mut rng, 12, 1.0),
                c: random_vec(&mut rng, 6, 1.0),
            }),
            GradOp::DecoderEmbed => {
                let (t, v, d) = (5, 9, 6);
                let caption = Matrix::from_fn(t, v, |_, _| rng.gen_range(0.0..1.0));
                Box::new(DecoderEmbedCheck {
                    caption,
                    token_embedding: random_matrix(&mut rng, v, d, 1.0),
                    position_projection: random_matrix(&mut rng, d, d, 1.0),
                    c: random_matrix(&mut rng, t, d, 1.0),
                })
            }
            GradOp::TransformerBlock => {
                let (t, s, d) = (4, 3, 8);
                Box::new(BlockCheck {
                    params: random_block(&mut rng, d, 2, 16),
                    h: random_matrix(&mut rng, t, d, 1.0),
                    memory: random_matrix(&mut rng, s, d, 1.0),
                    c: random_matrix(&mut rng, t, d, 1.0),
                })
            }
            GradOp::TokenDistribution => Box::new(TokenDistributionCheck {
                h: random_vec(&mut rng, 6, 1.0),
                output_embedding: random_matrix(&mut rng, 11, 6, 1.0),
                c: random_vec(&mut rng, 11, 1.0),
            }),
        }
    }

    pub fn check(self, seed: u64, eps: f64) -> Result<f64> {
        gradcheck(self.instance(seed).as_ref(), eps)
    }
}

impl fmt::Display for GradOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradOp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        GradOp::ALL
            .into_iter()
            .find(|op| op.name() == s || (s == "vel" && *op == GradOp::VisualEmbedding))
            .ok_or_else(|| format!("unknown operation `{s}`"))
    }
}
