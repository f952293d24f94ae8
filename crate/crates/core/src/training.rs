//! Joint training, optimisation and checkpoints.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{self, Ablation, ArchConfig, Model, Prepared};
use crate::parallel::{self, Schedule};
use crate::params::{Gradients, ParamStore};
use crate::sorting::{self, OrderMode};
use crate::supervision::{Vocabulary, TAGSET_ID};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub pos: f64,
    pub sort: f64,
    pub copy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { pos: 0.7, sort: 0.4, copy: 0.3 }
    }
}

/// The four component losses and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_token: f64,
    pub l_pos: f64,
    pub l_sort: f64,
    pub l_copy: f64,
    pub w_pos: f64,
    pub w_sort: f64,
    pub w_copy: f64,
    pub l_total: f64,
}

impl LossBundle {
    /// Effective weights: the copy term is dropped when the copy gate is ablated.
    pub fn effective_weights(weights: &LossWeights, ablation: &Ablation) -> LossWeights {
        LossWeights { copy: if ablation.no_cp { 0.0 } else { weights.copy }, ..*weights }
    }

    pub fn compose(l_token: f64, l_pos: f64, l_sort: f64, l_copy: f64, weights: &LossWeights, ablation: &Ablation) -> Self {
        let w = Self::effective_weights(weights, ablation);
        Self { l_token, l_pos, l_sort, l_copy, w_pos: w.pos, w_sort: w.sort, w_copy: w.copy, l_total: total(l_token, l_pos, l_sort, l_copy, &w) }
    }

    /// Recomputes the total from the stored parts and weights.
    pub fn identity_holds(&self) -> bool {
        let w = LossWeights { pos: self.w_pos, sort: self.w_sort, copy: self.w_copy };
        total(self.l_token, self.l_pos, self.l_sort, self.l_copy, &w) == self.l_total
    }
}

/// `l_token + w_pos l_pos + w_sort l_sort + w_copy l_copy`; zero-weight terms are skipped.
pub fn total(l_token: f64, l_pos: f64, l_sort: f64, l_copy: f64, w: &LossWeights) -> f64 {
    let mut s = l_token;
    for (wt, l) in [(w.pos, l_pos), (w.sort, l_sort), (w.copy, l_copy)] {
        if wt != 0.0 {
            s += wt * l;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Fraction of all steps spent in linear learning-rate warmup.
    pub warmup_frac: f64,
    pub ablation: Ablation,
    pub order_mode: OrderMode,
    /// Validation BLEU-4 every this many epochs (0 = never).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lr: 3e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            epochs: 20,
            seed: 0,
            clip_norm: 1.0,
            warmup_frac: 0.05,
            ablation: Ablation::default(),
            order_mode: OrderMode::Learned,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if [w.pos, w.sort, w.copy].iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("lr must be positive and warmup_frac in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Decoupled-weight-decay Adam. Parameters without a gradient in a step are left untouched.
pub struct AdamW {
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(num_params: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![None; num_params],
            v: vec![None; num_params],
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, ps: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for id in ps.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let p = ps.get_mut(id);
            let m = self.m[id.0].get_or_insert_with(|| Matrix::zeros(g.rows, g.cols));
            let v = self.v[id.0].get_or_insert_with(|| Matrix::zeros(g.rows, g.cols));
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * p.data[i]);
            }
        }
    }
}

/// Learning rate at 0-based `step` of `total` with linear warmup.
pub fn learning_rate(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    let warmup = (cfg.warmup_frac * total as f64).ceil() as usize;
    if warmup == 0 || step >= warmup {
        cfg.lr
    } else {
        cfg.lr * (step + 1) as f64 / warmup as f64
    }
}

/// Per-example losses `[token, pos, sort, copy]` and the batch-mean gradient of the weighted total.
pub fn batch_gradients(m: &Model, batch: &[&Prepared], cfg: &TrainConfig, dropout_seed: Option<u64>, schedule: Schedule) -> (Gradients, Vec<[f64; 4]>) {
    let w = LossBundle::effective_weights(&cfg.weights, &cfg.ablation);
    let indexed: Vec<(usize, &Prepared)> = batch.iter().copied().enumerate().collect();
    let results = parallel::map(&indexed, schedule, |&(i, ex)| {
        let mut t = Tape::new(&m.params);
        let seed = dropout_seed.map(|s| s.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
        let l = model::example_losses(&mut t, m, ex, cfg.order_mode, seed);
        let mut tot = l.token;
        for (wt, v) in [(w.pos, l.pos), (w.sort, l.sort), (w.copy, l.copy)] {
            if wt != 0.0 {
                let s = t.scale(v, wt);
                tot = t.add(tot, s);
            }
        }
        let vals = [l.token, l.pos, l.sort, l.copy].map(|v| t.value(v).item());
        (t.backward(tot), vals)
    });
    let mut grads = Gradients::new(m.params.len());
    let mut losses = Vec::with_capacity(results.len());
    for (g, l) in results {
        grads.merge(&g);
        losses.push(l);
    }
    grads.scale(1.0 / batch.len() as f64);
    (grads, losses)
}

fn mean_bundle(losses: &[[f64; 4]], cfg: &TrainConfig) -> LossBundle {
    let n = losses.len() as f64;
    let mean = |k: usize| losses.iter().map(|l| l[k]).sum::<f64>() / n;
    LossBundle::compose(mean(0), mean(1), mean(2), mean(3), &cfg.weights, &cfg.ablation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    #[serde(flatten)]
    pub losses: LossBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBundle,
    /// Exact-permutation accuracy of the trained sorter on the training set, in percent.
    pub order_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_bleu4: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a StepLog),
    Epoch(&'a EpochLog),
}

/// Dumped when a non-finite loss or gradient stops training.
#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub epoch: usize,
    pub step: usize,
    pub example_ids: Vec<String>,
    pub losses: Vec<[f64; 4]>,
    pub grad_norm: f64,
}

pub struct TrainHooks<'a> {
    pub log: Option<&'a mut dyn Write>,
    pub validate: Option<&'a dyn Fn(&Model) -> f64>,
    pub diagnostics: Option<&'a Path>,
    pub schedule: Schedule,
}

impl Default for TrainHooks<'_> {
    fn default() -> Self {
        Self { log: None, validate: None, diagnostics: None, schedule: Schedule::Auto }
    }
}

/// Share of `data` whose learned order equals the gold order, in percent.
pub fn order_accuracy(m: &Model, data: &[Prepared], mode: OrderMode) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let hits = data
        .iter()
        .filter(|ex| model::predict_order(m, &ex.graph, mode, Some(&ex.gold), &mut rng).is_ok_and(|o| o == ex.gold))
        .count();
    100.0 * hits as f64 / data.len() as f64
}

pub fn train(m: &mut Model, data: &[Prepared], cfg: &TrainConfig, mut hooks: TrainHooks<'_>) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(m.params.len(), cfg);
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let sorter_mode = if cfg.order_mode == OrderMode::NodeLevel { OrderMode::NodeLevel } else { OrderMode::Learned };
    let mut report = TrainReport::default();
    let mut step = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::with_capacity(data.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &data[i]).collect();
            let seed = (m.arch.model.dropout > 0.0).then(|| cfg.seed ^ (step as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
            let (mut grads, losses) = batch_gradients(m, &batch, cfg, seed, hooks.schedule);
            let bundle = mean_bundle(&losses, cfg);
            let grad_norm = grads.global_norm();
            if !bundle.l_total.is_finite() || !grad_norm.is_finite() {
                let diag = Diagnostics {
                    epoch,
                    step,
                    example_ids: batch.iter().map(|e| e.id.clone()).collect(),
                    losses: losses.clone(),
                    grad_norm,
                };
                if let Some(path) = hooks.diagnostics {
                    std::fs::write(path, serde_json::to_vec_pretty(&diag)?).map_err(|e| Error::io(path, e))?;
                }
                return Err(Error::NonFinite { epoch, step, detail: format!("examples {:?}", diag.example_ids) });
            }
            if cfg.clip_norm > 0.0 && grad_norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / grad_norm);
            }
            let lr = learning_rate(cfg, step, total_steps);
            opt.step(&mut m.params, &grads, lr);
            let log = StepLog { epoch, step, lr, grad_norm, losses: bundle };
            if let Some(w) = hooks.log.as_deref_mut() {
                write_line(w, &LogLine::Step(&log))?;
            }
            report.steps.push(log);
            epoch_losses.extend(losses);
            step += 1;
        }
        let val_bleu4 = match hooks.validate {
            Some(f) if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 => Some(f(m)),
            _ => None,
        };
        let log = EpochLog { epoch, losses: mean_bundle(&epoch_losses, cfg), order_accuracy: order_accuracy(m, data, sorter_mode), val_bleu4 };
        if let Some(w) = hooks.log.as_deref_mut() {
            write_line(w, &LogLine::Epoch(&log))?;
        }
        log::info!("epoch {epoch}: total {:.4} token {:.4}", log.losses.l_total, log.losses.l_token);
        report.epochs.push(log);
    }
    Ok(report)
}

/// Trains only the sorting network on `L_sort` until every training graph is
/// ordered exactly or `cfg.epochs` run out. Returns the accuracy after each epoch.
pub fn fit_sorter(m: &mut Model, data: &[Prepared], cfg: &TrainConfig, schedule: Schedule) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mode = if cfg.order_mode == OrderMode::NodeLevel { OrderMode::NodeLevel } else { OrderMode::Learned };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(m.params.len(), cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let model = &*m;
            let results = parallel::map(chunk, schedule, |&i| {
                let ex = &data[i];
                let mut t = Tape::new(&model.params);
                let loss = if mode == OrderMode::NodeLevel {
                    let lp = sorting::node_log_probs_on(&mut t, &ex.padded, &model.arch.sorter, &model.ids.sorter);
                    sorting::node_loss_on(&mut t, lp, &ex.gold, model.capacity())
                } else {
                    let f = sorting::encode_triplets_on(&mut t, &ex.padded, &model.arch.sorter, &model.ids.sorter);
                    let lp = sorting::score_log_probs_on(&mut t, f, &model.arch.sorter, &model.ids.sorter);
                    sorting::sort_loss_on(&mut t, lp, &ex.gold)
                };
                t.backward(loss)
            });
            let mut grads = Gradients::new(m.params.len());
            for g in &results {
                grads.merge(g);
            }
            grads.scale(1.0 / chunk.len() as f64);
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(Error::NonFinite { epoch: history.len() + 1, step: 0, detail: "sorter gradient".into() });
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            opt.step(&mut m.params, &grads, cfg.lr);
        }
        let acc = order_accuracy(m, data, mode);
        history.push(acc);
        if acc >= 100.0 {
            break;
        }
    }
    Ok(history)
}

fn write_line<T: Serialize>(w: &mut dyn Write, v: &T) -> Result<()> {
    let mut line = serde_json::to_vec(v)?;
    line.push(b'\n');
    w.write_all(&line).map_err(|e| Error::io("<training log>", e))
}

pub const CHECKPOINT_FORMAT: &str = "kgtext-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    arch: ArchConfig,
    ablation: Ablation,
    #[serde(default)]
    train: Option<TrainConfig>,
    tagset: String,
    vocab: Vocabulary,
    params: Vec<ParamEntry>,
    /// SHA-256 over parameter names, shapes and value bits.
    digest: String,
}

fn digest(entries: &[ParamEntry]) -> String {
    let mut h = Sha256::new();
    for e in entries {
        h.update(e.name.as_bytes());
        h.update([0]);
        h.update((e.rows as u64).to_le_bytes());
        h.update((e.cols as u64).to_le_bytes());
        for v in &e.data {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(path: &Path, m: &Model, train: Option<&TrainConfig>) -> Result<()> {
    let params: Vec<ParamEntry> =
        m.params.iter().map(|(name, v)| ParamEntry { name: name.to_string(), rows: v.rows, cols: v.cols, data: v.data.clone() }).collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        arch: m.arch.clone(),
        ablation: m.ablation,
        train: train.cloned(),
        tagset: TAGSET_ID.into(),
        vocab: m.vocab.clone(),
        digest: digest(&params),
        params,
    };
    let bytes = serde_json::to_vec(&file)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<TrainConfig>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Integrity(format!("{} is not a checkpoint", path.display())));
    }
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let file: CheckpointFile = serde_json::from_value(raw).map_err(|e| Error::Integrity(e.to_string()))?;
    if digest(&file.params) != file.digest {
        return Err(Error::Integrity("parameter digest mismatch".into()));
    }
    if file.tagset != TAGSET_ID {
        return Err(Error::Config(format!("checkpoint uses unsupported tagset `{}`", file.tagset)));
    }
    let mut m = Model::new(file.arch, file.ablation, file.vocab, 0)?;
    if file.params.len() != m.params.len() {
        return Err(Error::Integrity(format!("expected {} parameters, found {}", m.params.len(), file.params.len())));
    }
    for e in file.params {
        let id = m.params.id(&e.name).ok_or_else(|| Error::Integrity(format!("unknown parameter {}", e.name)))?;
        let slot = m.params.get_mut(id);
        if (slot.rows, slot.cols) != (e.rows, e.cols) || e.data.len() != e.rows * e.cols {
            return Err(Error::Integrity(format!("parameter {} has the wrong shape", e.name)));
        }
        slot.data = e.data;
    }
    Ok((m, file.train))
}
