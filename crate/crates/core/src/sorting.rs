//! Learned triplet description order.
//!
//! Each padded slot gets a structure feature built from hashed entity and
//! relation embeddings: `[h + r - t ; h ; r ; t]`. Placeholder slots use a
//! dedicated learned pad feature. The whole padded graph (real features
//! followed by pad features) is flattened and fed through two affine layers;
//! the output is read as an `N x N` matrix whose row `i` scores the
//! description positions of slot `i`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::kg_data::PaddedGraph;
use crate::params::{ParamId, ParamStore};
use crate::supervision::OrderLabel;
use crate::tensor::Matrix;
use crate::text::fnv1a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SorterConfig {
    /// Fixed order length `N`: number of slots and of position classes.
    pub capacity: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub entity_buckets: usize,
    pub relation_buckets: usize,
    pub repair: Repair,
}

impl Default for SorterConfig {
    fn default() -> Self {
        Self { capacity: 8, embed_dim: 16, hidden: 64, entity_buckets: 4096, relation_buckets: 1024, repair: Repair::Greedy }
    }
}

impl SorterConfig {
    /// Width of one slot feature.
    pub fn feature_dim(&self) -> usize {
        4 * self.embed_dim
    }
}

/// How the description order is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// Triple-level sorting network.
    #[default]
    Learned,
    /// Heads and tails classified separately, triplets ranked by mean position.
    NodeLevel,
    Random,
    Gold,
    /// Triplets in input order.
    Input,
}

impl std::str::FromStr for OrderMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.replace('-', "_").as_str() {
            "learned" | "ts" => Ok(Self::Learned),
            "node_level" | "ns" => Ok(Self::NodeLevel),
            "random" | "rs" => Ok(Self::Random),
            "gold" | "gt" => Ok(Self::Gold),
            "input" => Ok(Self::Input),
            other => Err(crate::Error::Config(format!("unknown order mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for OrderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Learned => "learned",
            Self::NodeLevel => "node_level",
            Self::Random => "random",
            Self::Gold => "gold",
            Self::Input => "input",
        })
    }
}

/// Assignment used when the row-wise argmax is not a permutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repair {
    #[default]
    Greedy,
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SorterParams {
    pub entity: ParamId,
    pub relation: ParamId,
    pub pad: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub node_pad: ParamId,
    pub node_w1: ParamId,
    pub node_b1: ParamId,
    pub node_w2: ParamId,
    pub node_b2: ParamId,
}

impl SorterParams {
    pub fn init<R: Rng>(cfg: &SorterConfig, ps: &mut ParamStore, rng: &mut R) -> Self {
        let n = cfg.capacity;
        let d = cfg.embed_dim;
        let ds = cfg.feature_dim();
        Self {
            entity: ps.embedding("sorter.entity", cfg.entity_buckets, d, rng),
            relation: ps.embedding("sorter.relation", cfg.relation_buckets, d, rng),
            pad: ps.embedding("sorter.pad", 1, ds, rng),
            w1: ps.xavier("sorter.w1", n * ds, cfg.hidden, rng),
            b1: ps.zeros("sorter.b1", 1, cfg.hidden),
            w2: ps.xavier("sorter.w2", cfg.hidden, n * n, rng),
            b2: ps.zeros("sorter.b2", 1, n * n),
            node_pad: ps.embedding("sorter.node.pad", 1, d, rng),
            node_w1: ps.xavier("sorter.node.w1", 2 * n * d, cfg.hidden, rng),
            node_b1: ps.zeros("sorter.node.b1", 1, cfg.hidden),
            node_w2: ps.xavier("sorter.node.w2", cfg.hidden, 2 * n * n, rng),
            node_b2: ps.zeros("sorter.node.b2", 1, 2 * n * n),
        }
    }

    /// Parameters of the triple-level network.
    pub fn triple_level(&self) -> [ParamId; 7] {
        [self.entity, self.relation, self.pad, self.w1, self.b1, self.w2, self.b2]
    }
}

fn entity_bucket(cfg: &SorterConfig, s: &str) -> usize {
    (fnv1a(&s.to_lowercase()) % cfg.entity_buckets as u64) as usize
}

fn relation_bucket(cfg: &SorterConfig, s: &str) -> usize {
    (fnv1a(&s.to_lowercase()) % cfg.relation_buckets as u64) as usize
}

/// `N x d_s` slot features.
pub fn encode_triplets_on(tape: &mut Tape, pg: &PaddedGraph, cfg: &SorterConfig, p: &SorterParams) -> Var {
    let real = pg.real();
    let heads: Vec<usize> = real.iter().map(|t| entity_bucket(cfg, &t.head)).collect();
    let rels: Vec<usize> = real.iter().map(|t| relation_bucket(cfg, &t.relation)).collect();
    let tails: Vec<usize> = real.iter().map(|t| entity_bucket(cfg, &t.tail)).collect();
    let h = tape.gather(p.entity, &heads);
    let r = tape.gather(p.relation, &rels);
    let t = tape.gather(p.entity, &tails);
    let hr = tape.add(h, r);
    let trans = tape.sub(hr, t);
    let real_feats = tape.concat_cols(&[trans, h, r, t]);
    let n_pad = pg.capacity() - pg.n_real;
    if n_pad == 0 {
        return real_feats;
    }
    let pads = tape.gather(p.pad, &vec![0; n_pad]);
    tape.concat_rows(&[real_feats, pads])
}

/// Row-wise log-probabilities over position classes, `N x N`.
pub fn score_log_probs_on(tape: &mut Tape, feats: Var, cfg: &SorterConfig, p: &SorterParams) -> Var {
    let n = cfg.capacity;
    let flat = tape.reshape(feats, 1, n * cfg.feature_dim());
    let w1 = tape.param(p.w1);
    let b1 = tape.param(p.b1);
    let w2 = tape.param(p.w2);
    let b2 = tape.param(p.b2);
    let h = tape.matmul(flat, w1);
    let h = tape.add_row(h, b1);
    let h = tape.relu(h);
    let o = tape.matmul(h, w2);
    let o = tape.add_row(o, b2);
    let logits = tape.reshape(o, n, n);
    tape.log_softmax(logits)
}

/// Node-level baseline: `2N x N` log-probabilities, heads in rows `0..N`, tails in `N..2N`.
pub fn node_log_probs_on(tape: &mut Tape, pg: &PaddedGraph, cfg: &SorterConfig, p: &SorterParams) -> Var {
    let n = cfg.capacity;
    let d = cfg.embed_dim;
    let real = pg.real();
    let n_pad = n - pg.n_real;
    let mut parts = Vec::new();
    for side in 0..2 {
        let ids: Vec<usize> = real.iter().map(|t| entity_bucket(cfg, if side == 0 { &t.head } else { &t.tail })).collect();
        parts.push(tape.gather(p.entity, &ids));
        if n_pad > 0 {
            parts.push(tape.gather(p.node_pad, &vec![0; n_pad]));
        }
    }
    let nodes = tape.concat_rows(&parts);
    let flat = tape.reshape(nodes, 1, 2 * n * d);
    let w1 = tape.param(p.node_w1);
    let b1 = tape.param(p.node_b1);
    let w2 = tape.param(p.node_w2);
    let b2 = tape.param(p.node_b2);
    let h = tape.matmul(flat, w1);
    let h = tape.add_row(h, b1);
    let h = tape.relu(h);
    let o = tape.matmul(h, w2);
    let o = tape.add_row(o, b2);
    let logits = tape.reshape(o, 2 * n, n);
    tape.log_softmax(logits)
}

/// `L_sort = -Σ_real log P[slot][gold rank]`; pad slots contribute nothing.
pub fn sort_loss_on(tape: &mut Tape, log_probs: Var, gold: &OrderLabel) -> Var {
    let idx: Vec<(usize, usize)> = gold.real_ranks().into_iter().enumerate().collect();
    let s = tape.pick_sum(log_probs, &idx);
    tape.scale(s, -1.0)
}

/// Node-level loss: each real head and tail is classified into its triplet's rank.
pub fn node_loss_on(tape: &mut Tape, log_probs: Var, gold: &OrderLabel, capacity: usize) -> Var {
    let ranks = gold.real_ranks();
    let mut idx: Vec<(usize, usize)> = ranks.iter().copied().enumerate().collect();
    idx.extend(ranks.iter().enumerate().map(|(i, &r)| (capacity + i, r)));
    let s = tape.pick_sum(log_probs, &idx);
    tape.scale(s, -1.0)
}

/// Slot features as a plain matrix.
pub fn encode_triplets(pg: &PaddedGraph, cfg: &SorterConfig, ps: &ParamStore, p: &SorterParams) -> Matrix {
    let mut tape = Tape::new(ps);
    let v = encode_triplets_on(&mut tape, pg, cfg, p);
    tape.value(v).clone()
}

/// `N x N` row-stochastic matrix: row `i` is the position distribution of slot `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(pub Matrix);

impl ScoreMatrix {
    pub fn size(&self) -> usize {
        self.0.rows
    }
}

pub fn score_positions(features: &Matrix, cfg: &SorterConfig, ps: &ParamStore, p: &SorterParams) -> ScoreMatrix {
    let mut tape = Tape::new(ps);
    let f = tape.constant(features.clone());
    let lp = score_log_probs_on(&mut tape, f, cfg, p);
    ScoreMatrix(tape.value(lp).map(f64::exp))
}

/// `-Σ_real ln sm[slot][gold rank]`
pub fn sort_loss(sm: &ScoreMatrix, gold: &OrderLabel) -> f64 {
    -gold.real_ranks().iter().enumerate().map(|(slot, &rank)| sm.0.get(slot, rank).ln()).sum::<f64>()
}

/// Turns scores into a valid order over the first `n_real` slots.
///
/// The real `n_real x n_real` block is used. If its row-wise argmax is a
/// permutation it is returned as is; otherwise the block is re-assigned
/// greedily (highest remaining entry whose row and column are both free,
/// ties to lower row then lower column) or optimally (maximum total
/// log-score) depending on `repair`.
pub fn decode_order(sm: &ScoreMatrix, n_real: usize, repair: Repair) -> OrderLabel {
    assert!(n_real <= sm.size(), "n_real exceeds score matrix size");
    let block: Vec<Vec<f64>> = (0..n_real).map(|r| sm.0.row(r)[..n_real].to_vec()).collect();
    let argmax: Vec<usize> = block.iter().map(|row| crate::tensor::argmax(row)).collect();
    let mut seen = vec![false; n_real];
    let is_perm = argmax.iter().all(|&c| !std::mem::replace(&mut seen[c], true));
    let ranks = if is_perm {
        argmax
    } else {
        match repair {
            Repair::Greedy => greedy_assignment(&block),
            Repair::Optimal => optimal_assignment(&block),
        }
    };
    OrderLabel::from_ranks(&ranks, sm.size()).expect("assignment is a permutation")
}

/// Greedy maximum-score assignment; `result[row] = column`.
pub fn greedy_assignment(scores: &[Vec<f64>]) -> Vec<usize> {
    let n = scores.len();
    let mut row_of_col = vec![None; n];
    let mut result = vec![usize::MAX; n];
    for _ in 0..n {
        let mut best: Option<(usize, usize)> = None;
        for (r, row) in scores.iter().enumerate() {
            if result[r] != usize::MAX {
                continue;
            }
            for (c, &v) in row.iter().enumerate() {
                if row_of_col[c].is_some() {
                    continue;
                }
                if best.is_none_or(|(br, bc)| v > scores[br][bc]) {
                    best = Some((r, c));
                }
            }
        }
        let (r, c) = best.expect("a free cell remains");
        result[r] = c;
        row_of_col[c] = Some(r);
    }
    result
}

/// Exact maximum of `Σ ln scores[row][col]` over permutations, by DP over column subsets.
pub fn optimal_assignment(scores: &[Vec<f64>]) -> Vec<usize> {
    let n = scores.len();
    assert!(n <= 20, "optimal assignment limited to 20 slots");
    let full = 1usize << n;
    let mut best = vec![f64::NEG_INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        if best[mask] == f64::NEG_INFINITY {
            continue;
        }
        let row = mask.count_ones() as usize;
        if row == n {
            continue;
        }
        for c in 0..n {
            if mask & (1 << c) != 0 {
                continue;
            }
            let next = mask | (1 << c);
            let v = best[mask] + scores[row][c].max(f64::MIN_POSITIVE).ln();
            if v > best[next] {
                best[next] = v;
                choice[next] = c;
            }
        }
    }
    let mut result = vec![0; n];
    let mut mask = full - 1;
    for row in (0..n).rev() {
        let c = choice[mask];
        result[row] = c;
        mask &= !(1 << c);
    }
    result
}

/// Node-level order: each real triplet placed at the mean of its head's and
/// tail's argmax positions; ties by slot index.
pub fn decode_node_order(node_probs: &Matrix, n_real: usize, capacity: usize) -> OrderLabel {
    let pos = |row: usize| crate::tensor::argmax(&node_probs.row(row)[..n_real]) as f64;
    let mean: Vec<f64> = (0..n_real).map(|i| 0.5 * (pos(i) + pos(capacity + i))).collect();
    let mut listing: Vec<usize> = (0..n_real).collect();
    listing.sort_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(a.cmp(&b)));
    OrderLabel::from_listing(&listing, capacity).expect("sorted slots form a permutation")
}

/// Uniformly random order.
pub fn random_order<R: Rng>(n_real: usize, capacity: usize, rng: &mut R) -> OrderLabel {
    let mut listing: Vec<usize> = (0..n_real).collect();
    listing.shuffle(rng);
    OrderLabel::from_listing(&listing, capacity).expect("shuffle is a permutation")
}

/// Fraction of pairs ordered the same way, mapped to `[-1, 1]` (Kendall's tau-a).
pub fn kendall_tau(pred: &OrderLabel, gold: &OrderLabel) -> f64 {
    let p = pred.real_ranks();
    let g = gold.real_ranks();
    let n = p.len();
    if n < 2 {
        return 1.0;
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let a = (p[i] as i64 - p[j] as i64).signum();
            let b = (g[i] as i64 - g[j] as i64).signum();
            s += a * b;
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}
