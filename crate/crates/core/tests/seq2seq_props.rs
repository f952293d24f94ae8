//! Encoder regression values, decoder causality and loss additivity.

use kgtext::autodiff::Tape;
use kgtext::params::ParamStore;
use kgtext::seq2seq::{self, ModelConfig, Seq2SeqParams};
use kgtext::tensor::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

const VOCAB: usize = 20;

fn tiny() -> (ModelConfig, ParamStore, Seq2SeqParams) {
    let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, rel_window: 4, ..ModelConfig::default() };
    let mut ps = ParamStore::new();
    let p = Seq2SeqParams::init(&cfg, VOCAB, VOCAB, &mut ps, &mut ChaCha8Rng::seed_from_u64(42));
    (cfg, ps, p)
}

fn rounded(m: &Matrix) -> Vec<Vec<f64>> {
    // Twelve significant digits keep the file stable across libm differences in the last ulp.
    (0..m.rows).map(|r| m.row(r).iter().map(|v| format!("{v:.12e}").parse().unwrap()).collect()).collect()
}

#[test]
fn encoder_golden() {
    let (cfg, ps, p) = tiny();
    let src = [4, 9, 5, 11, 6, 13, 7];
    let mut t = Tape::new(&ps);
    let wi = seq2seq::encode_words(&mut t, &cfg, &p, &src, None);
    let pi = seq2seq::encode_pos(&mut t, &cfg, &p, &src, None);
    let fused = seq2seq::fuse(&mut t, &p, wi, pi).unwrap();
    let out = serde_json::json!({
        "source": src,
        "word_states": rounded(t.value(wi)),
        "pos_states": rounded(t.value(pi)),
        "fused": rounded(t.value(fused)),
    });
    common::golden("encoder_d8", &out);
}

#[test]
fn decoding_is_bit_identical_across_runs() {
    let (cfg, ps, p) = tiny();
    let run = || {
        let mut t = Tape::new(&ps);
        let mem = seq2seq::encode_words(&mut t, &cfg, &p, &[4, 5, 6], None);
        let d = seq2seq::decode_words(&mut t, &cfg, &p, mem, &[1, 7, 8], None);
        (t.value(d.logits).clone(), t.value(d.attention).clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn batch_token_loss_is_sum_of_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Matrix::from_vec(3, VOCAB, (0..3 * VOCAB).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let b = Matrix::from_vec(2, VOCAB, (0..2 * VOCAB).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let mut both = a.data.clone();
    both.extend(&b.data);
    let joint = seq2seq::token_loss(&Matrix::from_vec(5, VOCAB, both), &[1, 2, 3, 4, 5]);
    let sum = seq2seq::token_loss(&a, &[1, 2, 3]) + seq2seq::token_loss(&b, &[4, 5]);
    assert!((joint - sum).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steps_ignore_future_tokens(prefix in proptest::collection::vec(4usize..VOCAB, 2..8), k in 0usize..8, seed in any::<u64>()) {
        let k = k % prefix.len();
        let (cfg, ps, p) = tiny();
        let mut t = Tape::new(&ps);
        let mem = seq2seq::encode_words(&mut t, &cfg, &p, &[4, 9, 5, 11], None);
        let mut altered = prefix.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for tok in &mut altered[k + 1..] {
            *tok = rng.gen_range(4..VOCAB);
        }
        let a = seq2seq::decode_words(&mut t, &cfg, &p, mem, &prefix, None);
        let b = seq2seq::decode_words(&mut t, &cfg, &p, mem, &altered, None);
        for j in 0..=k {
            prop_assert_eq!(t.value(a.logits).row(j), t.value(b.logits).row(j));
            prop_assert_eq!(t.value(a.attention).row(j), t.value(b.attention).row(j));
        }
    }
}
