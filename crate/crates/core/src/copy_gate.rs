//! Copy-or-predict gate.
//!
//! `t_copy = σ(W1 v_w + W2 v_p + W3 s + b)` scores copying from the decoder
//! input embedding, the POS signal and the decoder state. A semantic context
//! score `x_sem = σ(FC(F_context))` over a sliding window of recent decoder
//! input embeddings is blended in: `p_copy = λ x_sem + (1 - λ) t_copy`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kg_data::{LinearizedKG, TokenOrigin};
use crate::nn::Linear;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{argmax, dot, sigmoid, Matrix};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside logarithms.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CopyConfig {
    pub lambda: f64,
    pub window: usize,
    /// Extra window sizes whose scores are averaged with `window`'s. Empty by default.
    pub ensemble_windows: Vec<usize>,
    /// Hidden width of the context scorer; 0 means a single affine layer.
    pub scorer_hidden: usize,
    pub threshold: f64,
    /// Adds `-ln` of the attention mass on the matching source tokens at
    /// every copy step to the copy loss, so that the attention argmax used
    /// to pick the copied token is trained to point at it.
    pub supervise_pointer: bool,
}

impl Default for CopyConfig {
    fn default() -> Self {
        Self { lambda: 0.3, window: 3, ensemble_windows: Vec::new(), scorer_hidden: 0, threshold: 0.5, supervise_pointer: true }
    }
}

impl CopyConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.window == 0 || self.ensemble_windows.contains(&0) {
            return Err(Error::Config("window sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn windows(&self) -> Vec<usize> {
        let mut w = vec![self.window];
        w.extend(&self.ensemble_windows);
        w
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scorer {
    pub window: usize,
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyParams {
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    pub b: ParamId,
    pub scorers: Vec<Scorer>,
}

impl CopyParams {
    pub fn init<R: Rng>(cfg: &CopyConfig, d: usize, ps: &mut ParamStore, rng: &mut R) -> Self {
        let scorers = cfg
            .windows()
            .into_iter()
            .map(|w| {
                let name = format!("copy.sc{w}");
                let layers = if cfg.scorer_hidden == 0 {
                    vec![Linear::new(ps, &name, w * d, 1, rng)]
                } else {
                    vec![
                        Linear::new(ps, &format!("{name}.1"), w * d, cfg.scorer_hidden, rng),
                        Linear::new(ps, &format!("{name}.2"), cfg.scorer_hidden, 1, rng),
                    ]
                };
                Scorer { window: w, layers }
            })
            .collect();
        Self {
            w1: ps.xavier("copy.w1", d, 1, rng),
            w2: ps.xavier("copy.w2", d, 1, rng),
            w3: ps.xavier("copy.w3", d, 1, rng),
            b: ps.zeros("copy.b", 1, 1),
            scorers,
        }
    }
}

/// Flattened embeddings of steps `k-w+1..=k`, front-padded with `pad`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub features: Vec<f64>,
}

pub fn context_window(step_embeddings: &Matrix, pad: &[f64], k: usize, w: usize) -> ContextWindow {
    let mut features = Vec::with_capacity(w * pad.len());
    for j in 0..w {
        let back = w - 1 - j;
        if back > k {
            features.extend_from_slice(pad);
        } else {
            features.extend_from_slice(step_embeddings.row(k - back));
        }
    }
    ContextWindow { features }
}

/// Windows for every step at once: `K x (w d)`.
pub fn context_windows_on(t: &mut Tape, steps: Var, pad: Var, w: usize) -> Var {
    let k = t.value(steps).rows;
    let stacked = t.concat_rows(&[pad, steps]);
    let slots: Vec<Var> = (0..w)
        .map(|j| {
            let back = w - 1 - j;
            let rows: Vec<usize> = (0..k).map(|s| if back > s { 0 } else { s - back + 1 }).collect();
            t.select_rows(stacked, &rows)
        })
        .collect();
    if slots.len() == 1 {
        slots[0]
    } else {
        t.concat_cols(&slots)
    }
}

fn scorer_forward(t: &mut Tape, s: &Scorer, x: Var) -> Var {
    let mut h = x;
    for (i, l) in s.layers.iter().enumerate() {
        if i > 0 {
            h = t.relu(h);
        }
        h = l.forward(t, h);
    }
    t.sigmoid(h)
}

/// `x_sem` for every step, `K x 1`, averaged over the configured windows.
pub fn semantic_scores_on(t: &mut Tape, p: &CopyParams, steps: Var, pad: Var) -> Var {
    let mut acc: Option<Var> = None;
    for s in &p.scorers {
        let cw = context_windows_on(t, steps, pad, s.window);
        let x = scorer_forward(t, s, cw);
        acc = Some(match acc {
            Some(a) => t.add(a, x),
            None => x,
        });
    }
    let acc = acc.expect("at least one scorer");
    t.scale(acc, 1.0 / p.scorers.len() as f64)
}

/// Single-window score outside a tape.
pub fn semantic_score(cw: &ContextWindow, scorer: &Scorer, ps: &ParamStore) -> f64 {
    let mut t = Tape::new(ps);
    let x = t.constant(Matrix::row_vector(cw.features.clone()));
    let y = scorer_forward(&mut t, scorer, x);
    t.value(y).item()
}

/// `t_copy` per step, `K x 1`. `v_p` is omitted when POS is ablated.
pub fn gate_on(t: &mut Tape, p: &CopyParams, v_w: Var, v_p: Option<Var>, s: Var) -> Var {
    let w1 = t.param(p.w1);
    let w3 = t.param(p.w3);
    let b = t.param(p.b);
    let a = t.matmul(v_w, w1);
    let c = t.matmul(s, w3);
    let mut z = t.add(a, c);
    if let Some(vp) = v_p {
        let w2 = t.param(p.w2);
        let pp = t.matmul(vp, w2);
        z = t.add(z, pp);
    }
    let z = t.add_row(z, b);
    t.sigmoid(z)
}

/// `λ x_sem + (1 - λ) t_copy`; with no semantic score the gate is used alone.
pub fn blend_on(t: &mut Tape, t_copy: Var, x_sem: Option<Var>, lambda: f64) -> Var {
    match x_sem {
        None => t_copy,
        Some(x) => {
            let a = t.scale(x, lambda);
            let b = t.scale(t_copy, 1.0 - lambda);
            t.add(a, b)
        }
    }
}

/// `-Σ_k [y log p + (1 - y) log(1 - p)]`.
pub fn copy_loss_on(t: &mut Tape, p_copy: Var, labels: &[u8]) -> Var {
    let lp = t.ln(p_copy, EPS);
    let q = t.one_minus(p_copy);
    let lq = t.ln(q, EPS);
    let ones: Vec<(usize, usize)> = labels.iter().enumerate().filter(|(_, &y)| y == 1).map(|(k, _)| (k, 0)).collect();
    let zeros: Vec<(usize, usize)> = labels.iter().enumerate().filter(|(_, &y)| y != 1).map(|(k, _)| (k, 0)).collect();
    let a = t.pick_sum(lp, &ones);
    let b = t.pick_sum(lq, &zeros);
    let s = t.add(a, b);
    t.scale(s, -1.0)
}

/// `-Σ_k ln(Σ_{i ∈ sources[k]} a_{k,i})` over copy steps that have a matching source token.
pub fn pointer_loss_on(t: &mut Tape, attention: Var, sources: &[Vec<usize>], labels: &[u8]) -> Var {
    let (k, l) = t.value(attention).shape();
    let mut mask = Matrix::zeros(k, l);
    let mut picks = Vec::new();
    for (step, (src, &y)) in sources.iter().zip(labels).enumerate().take(k) {
        if y == 1 && !src.is_empty() {
            for &i in src {
                mask.set(step, i, 1.0);
            }
            picks.push((step, 0));
        }
    }
    let mask = t.constant(mask);
    let masked = t.mul(attention, mask);
    let ones = t.constant(Matrix::from_vec(l, 1, vec![1.0; l]));
    let mass = t.matmul(masked, ones);
    let lm = t.ln(mass, EPS);
    let s = t.pick_sum(lm, &picks);
    t.scale(s, -1.0)
}

pub fn pointer_loss(attention: &Matrix, sources: &[Vec<usize>], labels: &[u8]) -> f64 {
    sources
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|(_, (src, &y))| y == 1 && !src.is_empty())
        .map(|(k, (src, _))| -src.iter().map(|&i| attention.get(k, i)).sum::<f64>().max(EPS).ln())
        .sum()
}

pub fn copy_loss(p_copy: &[f64], labels: &[u8]) -> f64 {
    p_copy
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if y == 1 { -p.max(EPS).ln() } else { -(1.0 - p).max(EPS).ln() })
        .sum()
}

/// Plain-value gate for one step: returns `(t_copy, p_copy)`.
pub fn copy_probability(
    v_w: &[f64],
    v_p: Option<&[f64]>,
    s_k: &[f64],
    x_sem: Option<f64>,
    lambda: f64,
    p: &CopyParams,
    ps: &ParamStore,
) -> Result<(f64, f64)> {
    check_lambda(lambda)?;
    let col = |id: ParamId| &ps.get(id).data;
    let mut z = dot(v_w, col(p.w1)) + dot(s_k, col(p.w3)) + ps.get(p.b).item();
    if let Some(vp) = v_p {
        z += dot(vp, col(p.w2));
    }
    let t_copy = sigmoid(z);
    Ok((t_copy, blend(t_copy, x_sem, lambda)?))
}

pub fn blend(t_copy: f64, x_sem: Option<f64>, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(match x_sem {
        None => t_copy,
        Some(x) => lambda * x + (1.0 - lambda) * t_copy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenSource {
    Generated { id: usize },
    Copied { position: usize, origin: TokenOrigin, surface: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyDecision {
    pub t_copy: f64,
    pub x_semantic: Option<f64>,
    pub p_copy: f64,
    pub source: TokenSource,
}

impl CopyDecision {
    pub fn copied(&self) -> bool {
        matches!(self.source, TokenSource::Copied { .. })
    }
}

/// Source position a copy would take: highest attention among copyable
/// positions, ties to the lower index. `None` when nothing is copyable.
pub fn copy_target(attention: &[f64], lin: &LinearizedKG) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &a) in attention.iter().enumerate().take(lin.len()) {
        if lin.copyable(i) && best.is_none_or(|b| a > attention[b]) {
            best = Some(i);
        }
    }
    best
}

/// Copies when `p_copy >= threshold`, otherwise takes the word-logit argmax.
pub fn select_token(word_logits: &[f64], attention: &[f64], lin: &LinearizedKG, t_copy: f64, x_sem: Option<f64>, p_copy: f64, threshold: f64) -> CopyDecision {
    let generated = || TokenSource::Generated { id: argmax(word_logits) };
    let source = if p_copy >= threshold {
        match copy_target(attention, lin) {
            Some(position) => {
                TokenSource::Copied { position, origin: lin.provenance[position], surface: lin.surfaces[position].clone() }
            }
            None => {
                log::warn!("copy requested but no source token is attendable; generating instead");
                generated()
            }
        }
    } else {
        generated()
    };
    CopyDecision { t_copy, x_semantic: x_sem, p_copy, source }
}
