//! Greedy and beam-search decoding over any [`StepModel`].
//!
//! A hypothesis whose copy gate fires expands only into its copy candidate;
//! otherwise it expands into generated tokens. Candidate scores are summed
//! log-scores. Finished hypotheses are ranked by score divided by length.
//! Ties are broken by parent rank, then by token id.

use serde::{Deserialize, Serialize};

use crate::model::{Emitted, Expansion, StepModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam: usize,
    pub max_len: usize,
    pub length_norm: bool,
    /// Also run greedy decoding and keep it if it scores higher. Guarantees
    /// that a wider beam never returns a worse hypothesis than width 1.
    pub anchor_greedy: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam: 5, max_len: 60, length_norm: true, anchor_greedy: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<Emitted>,
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    pub fn normalized(&self, length_norm: bool) -> f64 {
        if length_norm {
            self.score / self.tokens.len().max(1) as f64
        } else {
            self.score
        }
    }

    pub fn ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.out_id).collect()
    }

    /// Output text tokens without the final `<eos>`.
    pub fn words(&self) -> Vec<String> {
        let n = if self.finished { self.tokens.len() - 1 } else { self.tokens.len() };
        self.tokens[..n].iter().map(|t| t.text.clone()).collect()
    }
}

/// Index of the best entry, ties to the lowest index.
fn best_index(scores: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Follows the single best choice at every step.
pub fn greedy<M: StepModel>(m: &M, max_len: usize) -> Hypothesis {
    let mut h = Hypothesis { tokens: Vec::new(), score: 0.0, finished: false };
    for _ in 0..max_len {
        let (tok, s) = match m.expand(&h.tokens) {
            Expansion::Copy { token, score } => (token, score),
            Expansion::Generate { scores, decision } => {
                let id = best_index(scores.iter().copied()).expect("non-empty vocabulary");
                (m.emit(id, decision), scores[id])
            }
        };
        h.score += s;
        let done = Some(tok.out_id) == m.eos() && tok.decision.as_ref().is_none_or(|d| !d.copied());
        h.tokens.push(tok);
        if done {
            h.finished = true;
            break;
        }
    }
    h
}

struct Candidate {
    score: f64,
    parent: usize,
    order: usize,
    token: Emitted,
}

pub fn beam_search<M: StepModel>(m: &M, cfg: &BeamConfig) -> Hypothesis {
    assert!(cfg.beam >= 1, "beam width must be at least 1");
    let mut live = vec![Hypothesis { tokens: Vec::new(), score: 0.0, finished: false }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut cands: Vec<Candidate> = Vec::new();
        for (parent, h) in live.iter().enumerate() {
            match m.expand(&h.tokens) {
                Expansion::Copy { token, score } => cands.push(Candidate { score: h.score + score, parent, order: 0, token }),
                Expansion::Generate { scores, decision } => {
                    let mut ids: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > f64::NEG_INFINITY).collect();
                    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
                    for id in ids.into_iter().take(cfg.beam) {
                        cands.push(Candidate { score: h.score + scores[id], parent, order: id, token: m.emit(id, decision.clone()) });
                    }
                }
            }
        }
        cands.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.parent.cmp(&b.parent)).then(a.order.cmp(&b.order)));
        let mut next = Vec::new();
        for c in cands.into_iter().take(cfg.beam) {
            let mut tokens = live[c.parent].tokens.clone();
            let is_eos = Some(c.token.out_id) == m.eos() && c.token.decision.as_ref().is_none_or(|d| !d.copied());
            tokens.push(c.token);
            let h = Hypothesis { tokens, score: c.score, finished: is_eos };
            if is_eos {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= cfg.beam {
            break;
        }
    }
    let pool = if finished.is_empty() { live } else { finished };
    let i = best_index(pool.iter().map(|h| h.normalized(cfg.length_norm))).expect("beam keeps at least one hypothesis");
    let mut best = pool.into_iter().nth(i).expect("index in range");
    if cfg.anchor_greedy && cfg.beam > 1 {
        let g = greedy(m, cfg.max_len);
        if g.normalized(cfg.length_norm) > best.normalized(cfg.length_norm) {
            best = g;
        }
    }
    best
}
