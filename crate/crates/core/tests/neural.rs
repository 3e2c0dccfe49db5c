use adcopy::neural::init::{random_block, random_matrix};
use adcopy::neural::{
    decoder_embed, decoder_embed_dense, decoder_forward, token_distribution,
    transformer_block_forward, DecoderParams, Matrix,
};
use adcopy::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn decoder(seed: u64, vocab: usize, d: usize, heads: usize, layers: usize) -> DecoderParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DecoderParams {
        token_embedding: random_matrix(&mut rng, vocab, d, 1.0),
        position_projection: random_matrix(&mut rng, d, d, 0.3),
        output_embedding: random_matrix(&mut rng, vocab, d, 1.0),
        blocks: (0..layers)
            .map(|_| random_block(&mut rng, d, heads, 2 * d))
            .collect(),
        max_pos: 16,
    }
}

#[test]
fn single_and_double_precision_agree() {
    let p64 = decoder(1, 11, 8, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let memory: Matrix<f64> = random_matrix(&mut rng, 5, 8, 1.0);
    let tokens = [3, 0, 10, 7];
    let h64 = decoder_forward(&tokens, &memory, &p64).unwrap();

    let p32 = DecoderParams::<f32> {
        token_embedding: p64.token_embedding.convert(),
        position_projection: p64.position_projection.convert(),
        output_embedding: p64.output_embedding.convert(),
        blocks: p64
            .blocks
            .iter()
            .map(|b| adcopy::neural::BlockParams::<f32> {
                heads: b.heads,
                ln_self: conv_ln(&b.ln_self),
                self_attn: conv_attn(&b.self_attn),
                ln_cross: conv_ln(&b.ln_cross),
                cross_attn: conv_attn(&b.cross_attn),
                ln_ff: conv_ln(&b.ln_ff),
                ff: adcopy::neural::FeedForward {
                    w1: b.ff.w1.convert(),
                    b1: b.ff.b1.iter().map(|&x| x as f32).collect(),
                    w2: b.ff.w2.convert(),
                    b2: b.ff.b2.iter().map(|&x| x as f32).collect(),
                },
            })
            .collect(),
        max_pos: p64.max_pos,
    };
    let h32 = decoder_forward(&tokens, &memory.convert(), &p32).unwrap();
    assert_eq!(h32.shape(), h64.shape());
    for (a, b) in h32.as_slice().iter().zip(h64.as_slice()) {
        assert!((*a as f64 - b).abs() < 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

fn conv_ln(l: &adcopy::neural::LayerNorm<f64>) -> adcopy::neural::LayerNorm<f32> {
    adcopy::neural::LayerNorm {
        gamma: l.gamma.iter().map(|&x| x as f32).collect(),
        beta: l.beta.iter().map(|&x| x as f32).collect(),
        eps: l.eps as f32,
    }
}

fn conv_attn(a: &adcopy::neural::Attention<f64>) -> adcopy::neural::Attention<f32> {
    adcopy::neural::Attention {
        wq: a.wq.convert(),
        wk: a.wk.convert(),
        wv: a.wv.convert(),
        wo: a.wo.convert(),
    }
}

#[test]
fn self_attention_is_causal() {
    let p = decoder(3, 9, 8, 4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let memory: Matrix<f64> = random_matrix(&mut rng, 3, 8, 1.0);
    let h: Matrix<f64> = random_matrix(&mut rng, 6, 8, 1.0);
    let base = transformer_block_forward(&h, &memory, &p.blocks[0]).unwrap();
    // Perturbing row 4 leaves rows 0..4 untouched and changes rows 4..6.
    let mut h2 = h.clone();
    // Not a constant shift, which layer normalization would erase.
    for (j, x) in h2.row_mut(4).iter_mut().enumerate() {
        *x += 0.1 * j as f64;
    }
    let out = transformer_block_forward(&h2, &memory, &p.blocks[0]).unwrap();
    for r in 0..4 {
        assert_eq!(base.row(r), out.row(r));
    }
    for r in 4..6 {
        assert_ne!(base.row(r), out.row(r));
    }
}

#[test]
fn dense_embedding_of_one_hot_matches_lookup() {
    let p = decoder(5, 7, 6, 2, 1);
    let tokens = [6, 1, 1, 0];
    let one_hot = Matrix::from_fn(
        tokens.len(),
        7,
        |t, v| if tokens[t] == v { 1.0 } else { 0.0 },
    );
    let a = decoder_embed(&tokens, &p).unwrap();
    let b = decoder_embed_dense(&one_hot, &p.token_embedding, &p.position_projection).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn decoder_contract_errors() {
    let p = decoder(6, 5, 4, 2, 1);
    assert!(matches!(
        decoder_embed(&[0, 5], &p),
        Err(Error::OutOfVocabulary { id: 5, vocab: 5 })
    ));
    assert!(decoder_embed(&[0; 17], &p).is_err());
    let memory: Matrix<f64> = Matrix::zeros(2, 3);
    assert!(decoder_forward(&[0, 1], &memory, &p).is_err());
    let h = decoder_embed(&[0, 1], &p).unwrap();
    let dist = token_distribution(h.row(1), &p.output_embedding).unwrap();
    assert_eq!(dist.len(), 5);
    assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
