//! Transformer building blocks on top of [`Tape`].
//!
//! Layers are pre-norm: `x + Attn(LN(x))`, then `x + FFN(LN(x))`. Layer
//! norms carry a learned gain and bias. Self-attention adds a learned
//! relative-position bias per head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;

/// Additive mask value for disallowed attention positions.
pub const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self { w: ps.xavier(format!("{name}.w"), d_in, d_out, rng), b: ps.zeros(format!("{name}.b"), 1, d_out) }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Self {
        Self { gain: ps.add(format!("{name}.g"), Matrix::filled(1, d, 1.0)), bias: ps.zeros(format!("{name}.b"), 1, d) }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let n = t.layer_norm(x);
        let g = t.param(self.gain);
        let b = t.param(self.bias);
        let y = t.mul_row(n, g);
        t.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    /// `heads x (2 * window + 1)` relative-position bias, absent for cross-attention.
    pub rel: Option<ParamId>,
}

impl Attention {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, heads: usize, window: Option<usize>, rng: &mut R) -> Self {
        Self {
            wq: ps.xavier(format!("{name}.wq"), d, d, rng),
            wk: ps.xavier(format!("{name}.wk"), d, d, rng),
            wv: ps.xavier(format!("{name}.wv"), d, d, rng),
            wo: ps.xavier(format!("{name}.wo"), d, d, rng),
            rel: window.map(|w| ps.zeros(format!("{name}.rel"), heads, 2 * w + 1)),
        }
    }

    /// Multi-head attention of `q_in` (queries) over `kv_in`.
    ///
    /// `mask`, when given, is added to every head's logits. Returns the
    /// output and the per-head attention weight matrices.
    pub fn forward(&self, t: &mut Tape, q_in: Var, kv_in: Var, heads: usize, window: usize, mask: Option<Var>) -> (Var, Vec<Var>) {
        let d = t.value(q_in).cols;
        let dh = d / heads;
        let (lq, lk) = (t.value(q_in).rows, t.value(kv_in).rows);
        let wq = t.param(self.wq);
        let wk = t.param(self.wk);
        let wv = t.param(self.wv);
        let wo = t.param(self.wo);
        let q = t.matmul(q_in, wq);
        let k = t.matmul(kv_in, wk);
        let v = t.matmul(kv_in, wv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = t.slice_cols(q, h * dh, dh);
            let kh = t.slice_cols(k, h * dh, dh);
            let vh = t.slice_cols(v, h * dh, dh);
            let s = t.matmul_t(qh, kh);
            let mut s = t.scale(s, scale);
            if let Some(rel) = self.rel {
                let bias = t.rel_bias(rel, h, 0, lq, lk, window);
                s = t.add(s, bias);
            }
            if let Some(m) = mask {
                s = t.add(s, m);
            }
            let a = t.softmax(s);
            weights.push(a);
            outs.push(t.matmul(a, vh));
        }
        let cat = if heads == 1 { outs[0] } else { t.concat_cols(&outs) };
        (t.matmul(cat, wo), weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut R) -> Self {
        Self { l1: Linear::new(ps, &format!("{name}.ff1"), d, d_ff, rng), l2: Linear::new(ps, &format!("{name}.ff2"), d_ff, d, rng) }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.l1.forward(t, x);
        let h = t.relu(h);
        self.l2.forward(t, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub ln1: Norm,
    pub attn: Attention,
    pub ln2: Norm,
    pub ff: FeedForward,
}

impl EncoderLayer {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, heads: usize, d_ff: usize, window: usize, rng: &mut R) -> Self {
        Self {
            ln1: Norm::new(ps, &format!("{name}.ln1"), d),
            attn: Attention::new(ps, &format!("{name}.self"), d, heads, Some(window), rng),
            ln2: Norm::new(ps, &format!("{name}.ln2"), d),
            ff: FeedForward::new(ps, name, d, d_ff, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var, heads: usize, window: usize) -> Var {
        let n = self.ln1.forward(t, x);
        let (a, _) = self.attn.forward(t, n, n, heads, window, None);
        let x = t.add(x, a);
        let n = self.ln2.forward(t, x);
        let f = self.ff.forward(t, n);
        t.add(x, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderLayer {
    pub ln1: Norm,
    pub self_attn: Attention,
    pub ln2: Norm,
    pub cross: Attention,
    pub ln3: Norm,
    pub ff: FeedForward,
}

impl DecoderLayer {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d: usize, heads: usize, d_ff: usize, window: usize, rng: &mut R) -> Self {
        Self {
            ln1: Norm::new(ps, &format!("{name}.ln1"), d),
            self_attn: Attention::new(ps, &format!("{name}.self"), d, heads, Some(window), rng),
            ln2: Norm::new(ps, &format!("{name}.ln2"), d),
            cross: Attention::new(ps, &format!("{name}.cross"), d, heads, None, rng),
            ln3: Norm::new(ps, &format!("{name}.ln3"), d),
            ff: FeedForward::new(ps, name, d, d_ff, rng),
        }
    }

    /// Returns the new states and the per-head cross-attention weights.
    pub fn forward(&self, t: &mut Tape, x: Var, memory: Var, causal: Var, heads: usize, window: usize) -> (Var, Vec<Var>) {
        let n = self.ln1.forward(t, x);
        let (a, _) = self.self_attn.forward(t, n, n, heads, window, Some(causal));
        let x = t.add(x, a);
        let n = self.ln2.forward(t, x);
        let (c, w) = self.cross.forward(t, n, memory, heads, window, None);
        let x = t.add(x, c);
        let n = self.ln3.forward(t, x);
        let f = self.ff.forward(t, n);
        (t.add(x, f), w)
    }
}

/// `len x len` additive mask hiding future positions.
pub fn causal_mask(len: usize) -> Matrix {
    let mut m = Matrix::zeros(len, len);
    for i in 0..len {
        for j in i + 1..len {
            m.set(i, j, MASKED);
        }
    }
    m
}
