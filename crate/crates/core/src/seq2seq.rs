//! Word encoder-decoder and POS generator.
//!
//! Both encoders read the same linearised graph. The POS encoder states are
//! fused into the word encoder states with `LN(FC([w; p]) + w)`; the word
//! decoder attends to the fused states, the POS decoder to its own encoder.
//! The two decoders run step-synchronised: at step `k` the word decoder
//! predicts token `k` and the POS decoder predicts its tag.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{causal_mask, DecoderLayer, EncoderLayer, Linear, Norm};
use crate::params::{ParamId, ParamStore};
use crate::supervision::{Upos, TAGSET_ID};
use crate::tensor::Matrix;

/// Tag class emitted at the end-of-sentence step.
pub const END_TAG: usize = Upos::ALL.len();
/// Number of POS output classes: the coarse tags plus [`END_TAG`].
pub const TAG_CLASSES: usize = END_TAG + 1;
/// Input-only tag fed at the first POS decoder step.
pub const BOS_TAG: usize = TAG_CLASSES;

/// What the copy gate sees as the POS signal at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosScope {
    /// Embedding of the tag at the current step.
    #[default]
    Local,
    /// Final POS decoder state, shared by every step.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlongPolicy {
    #[default]
    Truncate,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    /// Relative positions are clipped to `[-rel_window, rel_window]`.
    pub rel_window: usize,
    pub dropout: f64,
    pub tagset: String,
    pub pos_scope: PosScope,
    pub overlong: OverlongPolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_source_len: 256,
            max_target_len: 64,
            rel_window: 16,
            dropout: 0.0,
            tagset: TAGSET_ID.into(),
            pos_scope: PosScope::Local,
            overlong: OverlongPolicy::Truncate,
        }
    }
}

impl ModelConfig {
    /// Small configuration for fixtures and tests.
    pub fn micro() -> Self {
        Self { d_model: 32, n_layers: 1, n_heads: 2, d_ff: 64, rel_window: 8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return bad("model sizes must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.max_source_len == 0 || self.max_target_len == 0 {
            return bad("length limits must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.tagset != TAGSET_ID {
            return Err(Error::Config(format!("unsupported tagset `{}`", self.tagset)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqParams {
    /// Shared by the word encoder input and the word decoder input.
    pub embed: ParamId,
    pub pos_src_embed: ParamId,
    /// `TAG_CLASSES + 1` rows; the last is [`BOS_TAG`].
    pub tag_embed: ParamId,
    pub word_enc: Vec<EncoderLayer>,
    pub word_enc_norm: Norm,
    pub pos_enc: Vec<EncoderLayer>,
    pub pos_enc_norm: Norm,
    pub fusion: Linear,
    pub word_dec: Vec<DecoderLayer>,
    pub word_dec_norm: Norm,
    pub pos_dec: Vec<DecoderLayer>,
    pub pos_dec_norm: Norm,
    pub word_out: Linear,
    pub pos_out: Linear,
}

impl Seq2SeqParams {
    /// `vocab_size` is the output vocabulary; `input_size` adds the hashed
    /// out-of-vocabulary input buckets.
    pub fn init<R: Rng>(cfg: &ModelConfig, vocab_size: usize, input_size: usize, ps: &mut ParamStore, rng: &mut R) -> Self {
        let (d, h, f, w) = (cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.rel_window);
        let enc = |ps: &mut ParamStore, rng: &mut R, name: &str| -> Vec<EncoderLayer> {
            (0..cfg.n_layers).map(|i| EncoderLayer::new(ps, &format!("{name}.{i}"), d, h, f, w, rng)).collect()
        };
        let dec = |ps: &mut ParamStore, rng: &mut R, name: &str| -> Vec<DecoderLayer> {
            (0..cfg.n_layers).map(|i| DecoderLayer::new(ps, &format!("{name}.{i}"), d, h, f, w, rng)).collect()
        };
        Self {
            embed: ps.embedding("word.embed", input_size, d, rng),
            pos_src_embed: ps.embedding("pos.src_embed", input_size, d, rng),
            tag_embed: ps.embedding("pos.tag_embed", TAG_CLASSES + 1, d, rng),
            word_enc: enc(ps, rng, "word.enc"),
            word_enc_norm: Norm::new(ps, "word.enc.norm", d),
            pos_enc: enc(ps, rng, "pos.enc"),
            pos_enc_norm: Norm::new(ps, "pos.enc.norm", d),
            fusion: Linear::new(ps, "fusion", 2 * d, d, rng),
            word_dec: dec(ps, rng, "word.dec"),
            word_dec_norm: Norm::new(ps, "word.dec.norm", d),
            pos_dec: dec(ps, rng, "pos.dec"),
            pos_dec_norm: Norm::new(ps, "pos.dec.norm", d),
            word_out: Linear::new(ps, "word.out", d, vocab_size, rng),
            pos_out: Linear::new(ps, "pos.out", d, TAG_CLASSES, rng),
        }
    }
}

/// Applies the overlong-source policy to a token count.
pub fn check_source_len(cfg: &ModelConfig, len: usize) -> Result<usize> {
    if len <= cfg.max_source_len {
        return Ok(len);
    }
    match cfg.overlong {
        OverlongPolicy::Error => Err(Error::SourceTooLong { len, max: cfg.max_source_len }),
        OverlongPolicy::Truncate => {
            log::warn!("source of {len} tokens truncated to {}", cfg.max_source_len);
            Ok(cfg.max_source_len)
        }
    }
}

/// Inverted dropout on embedding outputs, active only during training.
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Option<Self> {
        (rate > 0.0).then(|| Self { rate, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn apply(&mut self, t: &mut Tape, x: Var) -> Var {
        let (r, c) = t.value(x).shape();
        let keep = 1.0 / (1.0 - self.rate);
        let mask = (0..r * c).map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep }).collect();
        let m = t.constant(Matrix::from_vec(r, c, mask));
        t.mul(x, m)
    }
}

fn embed(t: &mut Tape, table: ParamId, ids: &[usize], drop: Option<&mut Dropout>) -> Var {
    let x = t.gather(table, ids);
    match drop {
        Some(d) => d.apply(t, x),
        None => x,
    }
}

fn encode(t: &mut Tape, cfg: &ModelConfig, table: ParamId, layers: &[EncoderLayer], norm: &Norm, src: &[usize], drop: Option<&mut Dropout>) -> Var {
    let mut x = embed(t, table, src, drop);
    for layer in layers {
        x = layer.forward(t, x, cfg.n_heads, cfg.rel_window);
    }
    norm.forward(t, x)
}

/// Word encoder states `WI`, `m x d`.
pub fn encode_words(t: &mut Tape, cfg: &ModelConfig, p: &Seq2SeqParams, src: &[usize], drop: Option<&mut Dropout>) -> Var {
    encode(t, cfg, p.embed, &p.word_enc, &p.word_enc_norm, src, drop)
}

/// POS encoder states `PI`, `m x d`.
pub fn encode_pos(t: &mut Tape, cfg: &ModelConfig, p: &Seq2SeqParams, src: &[usize], drop: Option<&mut Dropout>) -> Var {
    encode(t, cfg, p.pos_src_embed, &p.pos_enc, &p.pos_enc_norm, src, drop)
}

/// `LN(FC([w_i; p_i]) + w_i)` per position.
pub fn fuse(t: &mut Tape, p: &Seq2SeqParams, wi: Var, pi: Var) -> Result<Var> {
    let (lw, lp) = (t.value(wi).rows, t.value(pi).rows);
    if lw != lp {
        return Err(Error::LengthMismatch(format!("word states have {lw} rows, POS states {lp}")));
    }
    let cat = t.concat_cols(&[wi, pi]);
    let f = p.fusion.forward(t, cat);
    let r = t.add(f, wi);
    Ok(t.layer_norm(r))
}

pub struct WordDecoding {
    /// Final-norm decoder states `s_k`, `K x d`.
    pub hidden: Var,
    pub logits: Var,
    /// Decoder input embeddings `v_{w_k}`, `K x d`.
    pub inputs: Var,
    /// Last-layer cross-attention averaged over heads, `K x m`.
    pub attention: Var,
}

fn mean_heads(t: &mut Tape, heads: &[Var]) -> Var {
    let mut acc = heads[0];
    for &h in &heads[1..] {
        acc = t.add(acc, h);
    }
    t.scale(acc, 1.0 / heads.len() as f64)
}

fn decode(t: &mut Tape, cfg: &ModelConfig, layers: &[DecoderLayer], norm: &Norm, mut x: Var, memory: Var) -> (Var, Var) {
    let k = t.value(x).rows;
    let causal = t.constant(causal_mask(k));
    let mut last = Vec::new();
    for layer in layers {
        let (y, w) = layer.forward(t, x, memory, causal, cfg.n_heads, cfg.rel_window);
        x = y;
        last = w;
    }
    let attention = mean_heads(t, &last);
    (norm.forward(t, x), attention)
}

/// Teacher-forced word decoding over `inputs` (`<bos>` followed by the target prefix, input ids).
pub fn decode_words(t: &mut Tape, cfg: &ModelConfig, p: &Seq2SeqParams, memory: Var, inputs: &[usize], drop: Option<&mut Dropout>) -> WordDecoding {
    let emb = embed(t, p.embed, inputs, drop);
    let (hidden, attention) = decode(t, cfg, &p.word_dec, &p.word_dec_norm, emb, memory);
    let logits = p.word_out.forward(t, hidden);
    WordDecoding { hidden, logits, inputs: emb, attention }
}

/// Teacher-forced POS decoding; returns `(hidden, logits)`.
pub fn decode_pos(t: &mut Tape, cfg: &ModelConfig, p: &Seq2SeqParams, memory: Var, tag_inputs: &[usize]) -> (Var, Var) {
    let emb = t.gather(p.tag_embed, tag_inputs);
    let (hidden, _) = decode(t, cfg, &p.pos_dec, &p.pos_dec_norm, emb, memory);
    let logits = p.pos_out.forward(t, hidden);
    (hidden, logits)
}

fn nll_on(t: &mut Tape, logits: Var, targets: &[usize]) -> Var {
    let lp = t.log_softmax(logits);
    let idx: Vec<(usize, usize)> = targets.iter().copied().enumerate().collect();
    let s = t.pick_sum(lp, &idx);
    t.scale(s, -1.0)
}

/// `-Σ_j log softmax(logits_j)[target_j]`.
pub fn token_loss_on(t: &mut Tape, logits: Var, targets: &[usize]) -> Var {
    nll_on(t, logits, targets)
}

/// Same form as [`token_loss_on`] over the tag classes.
pub fn pos_loss_on(t: &mut Tape, logits: Var, tags: &[usize]) -> Var {
    nll_on(t, logits, tags)
}

fn nll(logits: &Matrix, targets: &[usize]) -> f64 {
    targets.iter().enumerate().map(|(j, &y)| -crate::tensor::log_softmax(logits.row(j))[y]).sum()
}

pub fn token_loss(logits: &Matrix, targets: &[usize]) -> f64 {
    nll(logits, targets)
}

pub fn pos_loss(logits: &Matrix, tags: &[usize]) -> f64 {
    nll(logits, tags)
}

/// Everything the copy gate and token selection need at one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStep {
    pub word_logits: Vec<f64>,
    pub pos_logits: Vec<f64>,
    pub hidden: Vec<f64>,
    pub v_w: Vec<f64>,
    pub v_p: Vec<f64>,
    pub attention: Vec<f64>,
}

/// POS decoder targets and inputs for a tagged sentence: targets end with
/// [`END_TAG`], inputs start with [`BOS_TAG`].
pub fn tag_sequences(tags: &[Upos]) -> (Vec<usize>, Vec<usize>) {
    let mut targets: Vec<usize> = tags.iter().map(|t| t.id()).collect();
    targets.push(END_TAG);
    let mut inputs = vec![BOS_TAG];
    inputs.extend(&targets[..targets.len() - 1]);
    (inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ModelConfig, ParamStore, Seq2SeqParams) {
        let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, rel_window: 4, ..ModelConfig::default() };
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = Seq2SeqParams::init(&cfg, 10, 14, &mut ps, &mut rng);
        // Non-zero relative biases so position effects are exercised.
        for id in ps.ids().collect::<Vec<_>>() {
            if ps.name(id).ends_with(".rel") {
                let m = ps.get_mut(id);
                for (i, v) in m.data.iter_mut().enumerate() {
                    *v = 0.1 * (i as f64 - 4.0);
                }
            }
        }
        (cfg, ps, p)
    }

    #[test]
    fn encoder_shapes() {
        let (cfg, ps, p) = tiny();
        let mut t = Tape::new(&ps);
        let w = encode_words(&mut t, &cfg, &p, &[4, 8, 9, 5, 10], None);
        let pi = encode_pos(&mut t, &cfg, &p, &[4, 8, 9, 5, 10], None);
        assert_eq!(t.value(w).shape(), (5, 8));
        assert_eq!(t.value(pi).shape(), (5, 8));
        let f = fuse(&mut t, &p, w, pi).unwrap();
        assert_eq!(t.value(f).shape(), (5, 8));
    }

    #[test]
    fn swapping_tokens_changes_states() {
        let (cfg, ps, p) = tiny();
        let mut t = Tape::new(&ps);
        let a = encode_words(&mut t, &cfg, &p, &[8, 9, 11], None);
        let b = encode_words(&mut t, &cfg, &p, &[9, 8, 11], None);
        assert_ne!(t.value(a).row(2), t.value(b).row(2));
    }

    #[test]
    fn fuse_with_zero_affine_is_layer_norm_of_words() {
        let (_, mut ps, p) = tiny();
        ps.get_mut(p.fusion.w).data.fill(0.0);
        ps.get_mut(p.fusion.b).data.fill(0.0);
        let w = Matrix::from_vec(2, 8, (0..16).map(|i| (i as f64 * 0.7).cos()).collect());
        let mut t = Tape::new(&ps);
        let wv = t.constant(w.clone());
        let pa = t.constant(Matrix::filled(2, 8, 3.0));
        let pb = t.constant(Matrix::filled(2, 8, -1.0));
        let fa = fuse(&mut t, &p, wv, pa).unwrap();
        let fb = fuse(&mut t, &p, wv, pb).unwrap();
        let ln = t.layer_norm(wv);
        assert_eq!(t.value(fa), t.value(ln));
        assert_eq!(t.value(fb), t.value(ln));
    }

    #[test]
    fn fuse_matches_scripted_arithmetic() {
        let (_, mut ps, p) = tiny();
        let wmat = Matrix::from_vec(16, 8, (0..128).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.05).collect());
        let bvec = Matrix::from_vec(1, 8, (0..8).map(|i| i as f64 * 0.01).collect());
        *ps.get_mut(p.fusion.w) = wmat.clone();
        *ps.get_mut(p.fusion.b) = bvec.clone();
        let w = Matrix::from_vec(1, 8, vec![0.5, -1.0, 0.25, 2.0, 0.0, 1.5, -0.5, 1.0]);
        let pi = Matrix::from_vec(1, 8, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.0, 2.0, -2.0]);
        let mut t = Tape::new(&ps);
        let (wv, pv) = (t.constant(w.clone()), t.constant(pi.clone()));
        let f = fuse(&mut t, &p, wv, pv).unwrap();

        let cat: Vec<f64> = w.data.iter().chain(&pi.data).copied().collect();
        let r: Vec<f64> = (0..8).map(|j| (0..16).map(|i| cat[i] * wmat.get(i, j)).sum::<f64>() + bvec.data[j] + w.data[j]).collect();
        let mean = r.iter().sum::<f64>() / 8.0;
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
        for j in 0..8 {
            let expect = (r[j] - mean) / (var + 1e-5).sqrt();
            assert!((t.value(f).data[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_rejects_length_mismatch() {
        let (_, ps, p) = tiny();
        let mut t = Tape::new(&ps);
        let a = t.constant(Matrix::zeros(2, 8));
        let b = t.constant(Matrix::zeros(3, 8));
        assert!(matches!(fuse(&mut t, &p, a, b), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn decoding_is_causal_and_prefix_consistent() {
        let (cfg, ps, p) = tiny();
        let mut t = Tape::new(&ps);
        let mem = encode_words(&mut t, &cfg, &p, &[4, 8, 5, 9, 6, 11], None);
        let full = decode_words(&mut t, &cfg, &p, mem, &[1, 8, 9, 12, 11], None);
        let mut altered = decode_words(&mut t, &cfg, &p, mem, &[1, 8, 9, 3, 3], None).logits;
        for k in 0..3 {
            assert_eq!(t.value(full.logits).row(k), t.value(altered).row(k));
        }
        assert_ne!(t.value(full.logits).row(3), t.value(altered).row(3));
        for k in 1..=5 {
            altered = decode_words(&mut t, &cfg, &p, mem, &[1, 8, 9, 12, 11][..k], None).logits;
            assert_eq!(t.value(altered).row(k - 1), t.value(full.logits).row(k - 1));
        }
        let att = t.value(full.attention);
        for k in 0..5 {
            assert!((att.row(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_closed_forms() {
        let uniform = Matrix::zeros(4, 10);
        assert!((token_loss(&uniform, &[1, 5, 9, 0]) - 4.0 * 10f64.ln()).abs() < 1e-12);
        let tags = Matrix::zeros(3, TAG_CLASSES);
        assert!((pos_loss(&tags, &[0, 12, 4]) - 3.0 * (TAG_CLASSES as f64).ln()).abs() < 1e-12);
        let mut peaked = Matrix::filled(2, 3, -1e6);
        peaked.set(0, 2, 0.0);
        peaked.set(1, 0, 0.0);
        assert_eq!(token_loss(&peaked, &[2, 0]), 0.0);
    }

    #[test]
    fn tag_sequences_shift_by_one() {
        let (inp, tgt) = tag_sequences(&[Upos::Noun, Upos::Verb]);
        assert_eq!(tgt, vec![Upos::Noun.id(), Upos::Verb.id(), END_TAG]);
        assert_eq!(inp, vec![BOS_TAG, Upos::Noun.id(), Upos::Verb.id()]);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { n_heads: 3, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { tagset: "penn".into(), ..ModelConfig::default() }.validate().is_err());
    }
}
