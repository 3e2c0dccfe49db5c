//! Random parameter construction for checks and shape tests.

use rand::Rng;

use super::decoder::{Attention, BlockParams, FeedForward, FusionBlockParams, LayerNorm};
use super::vel::VelParams;
use super::{c, Matrix, Scalar};

pub fn random_vec<T: Scalar, R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<T> {
    (0..n).map(|_| c(rng.gen_range(-scale..scale))).collect()
}

pub fn random_matrix<T: Scalar, R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    scale: f64,
) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| c(rng.gen_range(-scale..scale)))
}

/// Uniform in ±1/sqrt(fan_in).
fn layer<T: Scalar, R: Rng>(rng: &mut R, out: usize, fan_in: usize) -> Matrix<T> {
    random_matrix(rng, out, fan_in, 1.0 / (fan_in as f64).sqrt())
}

pub fn random_vel<T: Scalar, R: Rng>(rng: &mut R, visual_dim: usize, d: usize) -> VelParams<T> {
    VelParams {
        w1: layer(rng, d, visual_dim),
        w2: layer(rng, d, d),
        w3: layer(rng, d, d),
        bn_mean: random_vec(rng, d, 0.1),
        bn_var: (0..d).map(|_| c(rng.gen_range(0.5..1.5))).collect(),
        bn_gamma: (0..d).map(|_| c(rng.gen_range(0.5..1.5))).collect(),
        bn_beta: random_vec(rng, d, 0.1),
        eps: c(1e-5),
    }
}

fn random_ln<T: Scalar, R: Rng>(rng: &mut R, d: usize) -> LayerNorm<T> {
    LayerNorm {
        gamma: (0..d).map(|_| c(rng.gen_range(0.5..1.5))).collect(),
        beta: random_vec(rng, d, 0.1),
        eps: c(1e-5),
    }
}

fn random_attention<T: Scalar, R: Rng>(rng: &mut R, d: usize) -> Attention<T> {
    Attention {
        wq: layer(rng, d, d),
        wk: layer(rng, d, d),
        wv: layer(rng, d, d),
        wo: layer(rng, d, d),
    }
}

fn random_ff<T: Scalar, R: Rng>(rng: &mut R, d: usize, d_ff: usize) -> FeedForward<T> {
    FeedForward {
        w1: layer(rng, d_ff, d),
        b1: random_vec(rng, d_ff, 0.1),
        w2: layer(rng, d, d_ff),
        b2: random_vec(rng, d, 0.1),
    }
}

pub fn random_block<T: Scalar, R: Rng>(
    rng: &mut R,
    d: usize,
    heads: usize,
    d_ff: usize,
) -> BlockParams<T> {
    BlockParams {
        heads,
        ln_self: random_ln(rng, d),
        self_attn: random_attention(rng, d),
        ln_cross: random_ln(rng, d),
        cross_attn: random_attention(rng, d),
        ln_ff: random_ln(rng, d),
        ff: random_ff(rng, d, d_ff),
    }
}

pub fn random_fusion_block<T: Scalar, R: Rng>(
    rng: &mut R,
    d: usize,
    heads: usize,
    d_ff: usize,
) -> FusionBlockParams<T> {
    FusionBlockParams {
        heads,
        ln_attn: random_ln(rng, d),
        attn: random_attention(rng, d),
        ln_ff: random_ln(rng, d),
        ff: random_ff(rng, d, d_ff),
    }
}
