//! Caption decoder: token + positional embedding, pre-normalization transformer
//! blocks with causal self-attention and cross-attention over the fused
//! multimodal memory, and the softmax head over the vocabulary.
//!
//! Weight matrices are stored `out × in` and applied to row vectors as
//! `x · Wᵀ`, except the positional projection which multiplies `PE · W_p`.

use crate::error::{Error, Result};

use super::matrix::dot;
use super::{c, Matrix, Scalar};

/// Sinusoidal encodings, `max_pos × d_model`.
pub fn positional_encoding<T: Scalar>(max_pos: usize, d_model: usize) -> Result<Matrix<T>> {
    if d_model < 2 || !d_model.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "model dimension must be even and at least 2, got {d_model}"
        )));
    }
    let base: T = c(10000.0);
    Ok(Matrix::from_fn(max_pos, d_model, |pos, j| {
        let i = j / 2;
        let angle =
            T::from(pos).unwrap() / base.powf(T::from(2 * i).unwrap() / T::from(d_model).unwrap());
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn identity(d: usize) -> Self {
        LayerNorm {
            gamma: vec![T::one(); d],
            beta: vec![T::zero(); d],
            eps: c(1e-5),
        }
    }
}

struct LayerNormCache<T> {
    normalized: Matrix<T>,
    inv_std: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &Matrix<T>, ln: &LayerNorm<T>) -> (Matrix<T>, LayerNormCache<T>) {
    let d = x.cols();
    let n: T = T::from(d).unwrap();
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = row
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / n;
        let s = T::one() / (var + ln.eps).sqrt();
        inv_std.push(s);
        for j in 0..d {
            let z = (row[j] - mean) * s;
            normalized[(r, j)] = z;
            out[(r, j)] = ln.gamma[j] * z + ln.beta[j];
        }
    }
    (
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    )
}

fn layer_norm_backward<T: Scalar>(
    dy: &Matrix<T>,
    cache: &LayerNormCache<T>,
    ln: &LayerNorm<T>,
) -> Matrix<T> {
    let d = dy.cols();
    let n: T = T::from(d).unwrap();
    let mut dx = Matrix::zeros(dy.rows(), d);
    for r in 0..dy.rows() {
        let z = cache.normalized.row(r);
        let dz: Vec<T> = (0..d).map(|j| dy[(r, j)] * ln.gamma[j]).collect();
        let mean_dz = dz.iter().fold(T::zero(), |a, &v| a + v) / n;
        let mean_dz_z = dot(&dz, z) / n;
        for j in 0..d {
            dx[(r, j)] = cache.inv_std[r] * (dz[j] - mean_dz - z[j] * mean_dz_z);
        }
    }
    dx
}

/// Multi-head attention projections, each `d × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
}

impl<T: Scalar> Attention<T> {
    pub fn zeros(d: usize) -> Self {
        Attention {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
        }
    }
}

struct AttentionCache<T> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    /// One `Tq × Tk` probability matrix per head.
    probs: Vec<Matrix<T>>,
}

fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in xs.iter_mut() {
        *x = *x / sum;
    }
}

fn attention<T: Scalar>(
    xq: &Matrix<T>,
    xkv: &Matrix<T>,
    a: &Attention<T>,
    heads: usize,
    causal: bool,
) -> Result<(Matrix<T>, AttentionCache<T>)> {
    let d = xq.cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Shape(format!(
            "{heads} heads do not divide width {d}"
        )));
    }
    if xkv.cols() != d {
        return Err(Error::Shape(format!(
            "query width {d} vs key/value width {}",
            xkv.cols()
        )));
    }
    if causal && xq.rows() != xkv.rows() {
        return Err(Error::Shape(
            "causal attention needs equal query and key lengths".into(),
        ));
    }
    let dh = d / heads;
    let scale = T::one() / T::from(dh).unwrap().sqrt();
    let q = xq.matmul_t(&a.wq)?;
    let k = xkv.matmul_t(&a.wk)?;
    let v = xkv.matmul_t(&a.wv)?;
    let (tq, tk) = (xq.rows(), xkv.rows());
    let mut concat = Matrix::zeros(tq, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (
            q.col_block(h * dh, dh),
            k.col_block(h * dh, dh),
            v.col_block(h * dh, dh),
        );
        let mut p = Matrix::zeros(tq, tk);
        for i in 0..tq {
            let visible = if causal { i + 1 } else { tk };
            let row = p.row_mut(i);
            for (j, x) in row[..visible].iter_mut().enumerate() {
                *x = dot(qh.row(i), kh.row(j)) * scale;
            }
            softmax_in_place(&mut row[..visible]);
        }
        concat.set_col_block(h * dh, &p.matmul(&vh)?);
        probs.push(p);
    }
    let out = concat.matmul_t(&a.wo)?;
    Ok((out, AttentionCache { q, k, v, probs }))
}

/// Returns gradients with respect to the query input and the key/value input.
fn attention_backward<T: Scalar>(
    dout: &Matrix<T>,
    cache: &AttentionCache<T>,
    a: &Attention<T>,
    heads: usize,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let d = dout.cols();
    let dh = d / heads;
    let scale = T::one() / T::from(dh).unwrap().sqrt();
    let dconcat = dout.matmul(&a.wo)?;
    let (tq, tk) = (cache.q.rows(), cache.k.rows());
    let mut dq = Matrix::zeros(tq, d);
    let mut dk = Matrix::zeros(tk, d);
    let mut dv = Matrix::zeros(tk, d);
    for h in 0..heads {
        let p = &cache.probs[h];
        let (qh, kh, vh) = (
            cache.q.col_block(h * dh, dh),
            cache.k.col_block(h * dh, dh),
            cache.v.col_block(h * dh, dh),
        );
        let dout_h = dconcat.col_block(h * dh, dh);
        dv.set_col_block(h * dh, &p.transpose().matmul(&dout_h)?);
        let dp = dout_h.matmul_t(&vh)?;
        // softmax backward; masked entries have p = 0 and drop out
        let mut ds = Matrix::zeros(tq, tk);
        for i in 0..tq {
            let inner = dot(dp.row(i), p.row(i));
            for j in 0..tk {
                ds[(i, j)] = p[(i, j)] * (dp[(i, j)] - inner) * scale;
            }
        }
        dq.set_col_block(h * dh, &ds.matmul(&kh)?);
        dk.set_col_block(h * dh, &ds.transpose().matmul(&qh)?);
    }
    let dxq = dq.matmul(&a.wq)?;
    let dxkv = dk.matmul(&a.wk)?.add(&dv.matmul(&a.wv)?)?;
    Ok((dxq, dxkv))
}

/// Position-wise feed-forward: `W2 · gelu(W1 · x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    /// `d_ff × d`
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    /// `d × d_ff`
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn zeros(d: usize, d_ff: usize) -> Self {
        FeedForward {
            w1: Matrix::zeros(d_ff, d),
            b1: vec![T::zero(); d_ff],
            w2: Matrix::zeros(d, d_ff),
            b2: vec![T::zero(); d],
        }
    }
}

// tanh approximation
fn gelu<T: Scalar>(x: T) -> T {
    let k: T = c(0.7978845608028654); // sqrt(2/pi)
    let a: T = c(0.044715);
    let half: T = c(0.5);
    half * x * (T::one() + (k * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k: T = c(0.7978845608028654);
    let a: T = c(0.044715);
    let half: T = c(0.5);
    let three: T = c(3.0);
    let t = (k * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * a * x * x)
}

fn add_bias<T: Scalar>(m: &mut Matrix<T>, b: &[T]) {
    for r in 0..m.rows() {
        for (x, &bb) in m.row_mut(r).iter_mut().zip(b) {
            *x = *x + bb;
        }
    }
}

fn feed_forward<T: Scalar>(x: &Matrix<T>, ff: &FeedForward<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let mut hidden = x.matmul_t(&ff.w1)?;
    add_bias(&mut hidden, &ff.b1);
    let mut out = hidden.map(gelu).matmul_t(&ff.w2)?;
    add_bias(&mut out, &ff.b2);
    Ok((out, hidden))
}

fn feed_forward_backward<T: Scalar>(
    dy: &Matrix<T>,
    hidden: &Matrix<T>,
    ff: &FeedForward<T>,
) -> Result<Matrix<T>> {
    let dact = dy.matmul(&ff.w2)?;
    let dhidden = dact.zip_map(hidden, |g, h| g * gelu_grad(h));
    dhidden.matmul(&ff.w1)
}

/// One pre-normalization decoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub heads: usize,
    pub ln_self: LayerNorm<T>,
    pub self_attn: Attention<T>,
    pub ln_cross: LayerNorm<T>,
    pub cross_attn: Attention<T>,
    pub ln_ff: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

impl<T: Scalar> BlockParams<T> {
    /// All projections zero: the block reduces to its residual path.
    pub fn zeros(d: usize, heads: usize, d_ff: usize) -> Self {
        BlockParams {
            heads,
            ln_self: LayerNorm::identity(d),
            self_attn: Attention::zeros(d),
            ln_cross: LayerNorm::identity(d),
            cross_attn: Attention::zeros(d),
            ln_ff: LayerNorm::identity(d),
            ff: FeedForward::zeros(d, d_ff),
        }
    }

    pub fn width(&self) -> usize {
        self.self_attn.wq.rows()
    }
}

struct BlockCache<T> {
    ln_self: LayerNormCache<T>,
    self_attn: AttentionCache<T>,
    ln_cross: LayerNormCache<T>,
    cross_attn: AttentionCache<T>,
    ln_ff: LayerNormCache<T>,
    ff_hidden: Matrix<T>,
}

fn check_block_shapes<T: Scalar>(
    h: &Matrix<T>,
    memory: &Matrix<T>,
    p: &BlockParams<T>,
) -> Result<()> {
    let d = p.width();
    if h.cols() != d || memory.cols() != d {
        return Err(Error::Shape(format!(
            "block width {d}, caption width {}, memory width {}",
            h.cols(),
            memory.cols()
        )));
    }
    if memory.rows() == 0 {
        return Err(Error::Shape("empty memory".into()));
    }
    Ok(())
}

fn block_forward<T: Scalar>(
    h: &Matrix<T>,
    memory: &Matrix<T>,
    p: &BlockParams<T>,
) -> Result<(Matrix<T>, BlockCache<T>)> {
    check_block_shapes(h, memory, p)?;
    let (n1, ln_self) = layer_norm(h, &p.ln_self);
    let (a1, self_attn) = attention(&n1, &n1, &p.self_attn, p.heads, true)?;
    let x1 = h.add(&a1)?;
    let (n2, ln_cross) = layer_norm(&x1, &p.ln_cross);
    let (a2, cross_attn) = attention(&n2, memory, &p.cross_attn, p.heads, false)?;
    let x2 = x1.add(&a2)?;
    let (n3, ln_ff) = layer_norm(&x2, &p.ln_ff);
    let (f, ff_hidden) = feed_forward(&n3, &p.ff)?;
    let out = x2.add(&f)?;
    Ok((
        out,
        BlockCache {
            ln_self,
            self_attn,
            ln_cross,
            cross_attn,
            ln_ff,
            ff_hidden,
        },
    ))
}

/// `h + SelfAttn(LN(h))` (causal), then `+ CrossAttn(LN(·), memory)`, then
/// `+ FFN(LN(·))`. Output has the shape of `h`.
pub fn transformer_block_forward<T: Scalar>(
    h: &Matrix<T>,
    memory: &Matrix<T>,
    p: &BlockParams<T>,
) -> Result<Matrix<T>> {
    Ok(block_forward(h, memory, p)?.0)
}

/// Gradients of `Σ weights ∘ block(h, memory)` with respect to `h` and `memory`.
pub(crate) fn transformer_block_input_grad<T: Scalar>(
    h: &Matrix<T>,
    memory: &Matrix<T>,
    p: &BlockParams<T>,
    weights: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let (_, cache) = block_forward(h, memory, p)?;
    let dout = weights;
    let dn3 = feed_forward_backward(dout, &cache.ff_hidden, &p.ff)?;
    let dx2 = dout.add(&layer_norm_backward(&dn3, &cache.ln_ff, &p.ln_ff))?;
    let (dn2, dmemory) = attention_backward(&dx2, &cache.cross_attn, &p.cross_attn, p.heads)?;
    let dx1 = dx2.add(&layer_norm_backward(&dn2, &cache.ln_cross, &p.ln_cross))?;
    let (dq, dkv) = attention_backward(&dx1, &cache.self_attn, &p.self_attn, p.heads)?;
    let dn1 = dq.add(&dkv)?;
    let dh = dx1.add(&layer_norm_backward(&dn1, &cache.ln_self, &p.ln_self))?;
    Ok((dh, dmemory))
}

/// Multi-head attention of `queries` over `keys_values`, without the
/// surrounding normalization and residual.
pub fn multi_head_attention<T: Scalar>(
    queries: &Matrix<T>,
    keys_values: &Matrix<T>,
    a: &Attention<T>,
    heads: usize,
    causal: bool,
) -> Result<Matrix<T>> {
    Ok(attention(queries, keys_values, a, heads, causal)?.0)
}

/// One bidirectional fusion layer over the concatenated modality sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBlockParams<T> {
    pub heads: usize,
    pub ln_attn: LayerNorm<T>,
    pub attn: Attention<T>,
    pub ln_ff: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

pub fn fusion_block_forward<T: Scalar>(
    x: &Matrix<T>,
    p: &FusionBlockParams<T>,
) -> Result<Matrix<T>> {
    let d = p.attn.wq.rows();
    if x.cols() != d {
        return Err(Error::Shape(format!(
            "fusion width {d}, input width {}",
            x.cols()
        )));
    }
    let (n1, _) = layer_norm(x, &p.ln_attn);
    let (a, _) = attention(&n1, &n1, &p.attn, p.heads, false)?;
    let x1 = x.add(&a)?;
    let (n2, _) = layer_norm(&x1, &p.ln_ff);
    let (f, _) = feed_forward(&n2, &p.ff)?;
    x1.add(&f)
}

/// Decoder embeddings and blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    /// `vocab × d` token embedding `W_t`.
    pub token_embedding: Matrix<T>,
    /// `d × d` positional projection `W_p`.
    pub position_projection: Matrix<T>,
    /// `vocab × d` output embedding `W_e`.
    pub output_embedding: Matrix<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub max_pos: usize,
}

impl<T: Scalar> DecoderParams<T> {
    pub fn vocab_size(&self) -> usize {
        self.token_embedding.rows()
    }

    pub fn width(&self) -> usize {
        self.token_embedding.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (v, d) = self.token_embedding.shape();
        if self.position_projection.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "W_p is {:?}, expected {d}x{d}",
                self.position_projection.shape()
            )));
        }
        if self.output_embedding.shape() != (v, d) {
            return Err(Error::Shape(format!(
                "W_e is {:?}, expected {v}x{d}",
                self.output_embedding.shape()
            )));
        }
        if self.blocks.is_empty() {
            return Err(Error::InvalidParameter(
                "decoder needs at least one block".into(),
            ));
        }
        if let Some(b) = self.blocks.iter().find(|b| b.width() != d) {
            return Err(Error::Shape(format!(
                "block width {} vs model width {d}",
                b.width()
            )));
        }
        Ok(())
    }
}

/// Row `t` is the embedding of `tokens[t]` plus the projected encoding of position `t`.
pub fn decoder_embed<T: Scalar>(tokens: &[usize], p: &DecoderParams<T>) -> Result<Matrix<T>> {
    p.validate()?;
    let vocab = p.vocab_size();
    if let Some(&id) = tokens.iter().find(|&&id| id >= vocab) {
        return Err(Error::OutOfVocabulary { id, vocab });
    }
    if tokens.len() > p.max_pos {
        return Err(Error::Shape(format!(
            "sequence of {} tokens exceeds max position {}",
            tokens.len(),
            p.max_pos
        )));
    }
    let pe = positional_encoding::<T>(tokens.len(), p.width())?;
    let mut h = pe.matmul(&p.position_projection)?;
    for (t, &id) in tokens.iter().enumerate() {
        for (x, &e) in h.row_mut(t).iter_mut().zip(p.token_embedding.row(id)) {
            *x = *x + e;
        }
    }
    Ok(h)
}

/// `V·W_t + PE·W_p` for a real-valued (e.g. one-hot) `T × vocab` caption matrix.
pub fn decoder_embed_dense<T: Scalar>(
    caption: &Matrix<T>,
    token_embedding: &Matrix<T>,
    position_projection: &Matrix<T>,
) -> Result<Matrix<T>> {
    let pe = positional_encoding::<T>(caption.rows(), token_embedding.cols())?;
    caption
        .matmul(token_embedding)?
        .add(&pe.matmul(position_projection)?)
}

/// Runs every block over the embedded caption.
pub fn decoder_forward<T: Scalar>(
    tokens: &[usize],
    memory: &Matrix<T>,
    p: &DecoderParams<T>,
) -> Result<Matrix<T>> {
    let mut h = decoder_embed(tokens, p)?;
    for b in &p.blocks {
        h = transformer_block_forward(&h, memory, b)?;
    }
    Ok(h)
}

pub(crate) fn logits<T: Scalar>(h_row: &[T], output_embedding: &Matrix<T>) -> Result<Vec<T>> {
    let l = output_embedding.apply(h_row)?;
    if l.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(l)
}

/// `softmax(W_e · h)`, max-subtracted. Entries that would underflow are
/// floored at the smallest positive normal value.
pub fn token_distribution<T: Scalar>(h_row: &[T], output_embedding: &Matrix<T>) -> Result<Vec<T>> {
    let mut p = logits(h_row, output_embedding)?;
    softmax_in_place(&mut p);
    for x in p.iter_mut() {
        if *x < T::min_positive_value() {
            *x = T::min_positive_value();
        }
    }
    Ok(p)
}

/// Gradient of `Σ weights ∘ token_distribution(h)` with respect to `h`.
pub(crate) fn token_distribution_input_grad<T: Scalar>(
    h_row: &[T],
    output_embedding: &Matrix<T>,
    weights: &[T],
) -> Result<Vec<T>> {
    let mut p = logits(h_row, output_embedding)?;
    softmax_in_place(&mut p);
    let mean = dot(weights, &p);
    let dlogits: Vec<T> = p
        .iter()
        .zip(weights)
        .map(|(&pi, &wi)| pi * (wi - mean))
        .collect();
    output_embedding.apply_t(&dlogits)
}
