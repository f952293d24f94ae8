//! The full model: sorter, generator and copy gate sharing one parameter store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::copy_gate::{self, CopyConfig, CopyDecision, CopyParams, TokenSource};
use crate::error::{Error, Result};
use crate::kg_data::{linearize, pad_graph, Example, KnowledgeGraph, LinearizedKG, PaddedGraph};
use crate::params::ParamStore;
use crate::seq2seq::{self, tag_sequences, Dropout, ModelConfig, PosScope, Seq2SeqParams, BOS_TAG, END_TAG};
use crate::sorting::{self, OrderMode, SorterConfig, SorterParams};
use crate::supervision::{OrderLabel, PosSequence, SupervisionRecord, Vocabulary, BOS, EOS, PAD, UNK};
use crate::tensor::{argmax, log_softmax, Matrix};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub model: ModelConfig,
    pub sorter: SorterConfig,
    pub copy: CopyConfig,
}

impl ArchConfig {
    pub fn micro() -> Self {
        Self {
            model: ModelConfig::micro(),
            sorter: SorterConfig { embed_dim: 8, hidden: 32, entity_buckets: 1024, relation_buckets: 256, ..SorterConfig::default() },
            copy: CopyConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.copy.validate()?;
        if self.sorter.capacity == 0 || self.sorter.embed_dim == 0 || self.sorter.hidden == 0 {
            return Err(Error::Config("sorter sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Component switches for the ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// No copy gate: no copy loss, pure generation at inference.
    pub no_cp: bool,
    /// No POS signal in the copy gate.
    pub no_pos: bool,
    /// No POS states fused into the word encoder.
    pub no_pos_fusion: bool,
    /// No semantic context score.
    pub no_sc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIds {
    pub seq: Seq2SeqParams,
    pub sorter: SorterParams,
    pub copy: CopyParams,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub arch: ArchConfig,
    pub ablation: Ablation,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub ids: ModelIds,
}

impl Model {
    pub fn new(arch: ArchConfig, ablation: Ablation, vocab: Vocabulary, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let ids = ModelIds {
            seq: Seq2SeqParams::init(&arch.model, vocab.len(), vocab.input_size(), &mut params, &mut rng),
            sorter: SorterParams::init(&arch.sorter, &mut params, &mut rng),
            copy: CopyParams::init(&arch.copy, arch.model.d_model, &mut params, &mut rng),
        };
        Ok(Self { arch, ablation, vocab, params, ids })
    }

    pub fn capacity(&self) -> usize {
        self.arch.sorter.capacity
    }

    fn copy_enabled(&self) -> bool {
        !self.ablation.no_cp
    }
}

/// One training example with every input and target resolved to ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub graph: KnowledgeGraph,
    pub padded: PaddedGraph,
    pub gold: OrderLabel,
    /// Gold-order linearisation (input ids).
    pub src: Vec<usize>,
    /// `<bos>` followed by the reference (input ids).
    pub dec_inputs: Vec<usize>,
    /// Reference output ids followed by `<eos>`.
    pub targets: Vec<usize>,
    pub tag_inputs: Vec<usize>,
    pub tag_targets: Vec<usize>,
    /// Per decoding step; the `<eos>` step is 0.
    pub copy_labels: Vec<u8>,
    /// Per decoding step, copyable source positions holding the target word.
    pub copy_sources: Vec<Vec<usize>>,
    pub reference: Vec<String>,
}

pub fn prepare(example: &Example, sup: &SupervisionRecord, model: &Model) -> Result<Prepared> {
    if sup.id != example.id {
        return Err(Error::InvalidRecord(format!("supervision record {} does not match example {}", sup.id, example.id)));
    }
    let n = model.capacity();
    let padded = pad_graph(&example.graph, n)?;
    let gold = sup.order()?;
    if gold.capacity() != n {
        return Err(Error::Config(format!("supervision uses order length {}, model expects {n}", gold.capacity())));
    }
    let lin = linearize(&example.graph, &gold, &model.vocab)?;
    let keep = seq2seq::check_source_len(&model.arch.model, lin.len())?;
    let src = lin.tokens[..keep].to_vec();

    let max_tokens = model.arch.model.max_target_len - 1;
    let reference: Vec<String> = sup.tokens.iter().take(max_tokens).cloned().collect();
    let mut dec_inputs = vec![BOS];
    dec_inputs.extend(reference.iter().map(|t| model.vocab.input_id(t)));
    let mut targets: Vec<usize> = reference.iter().map(|t| model.vocab.id(t)).collect();
    targets.push(EOS);
    let tags = PosSequence::from_names(&sup.pos[..reference.len().min(sup.pos.len())]);
    if tags.tags.len() != reference.len() {
        return Err(Error::LengthMismatch(format!("example {}: {} POS tags for {} tokens", example.id, tags.tags.len(), reference.len())));
    }
    let (tag_inputs, tag_targets) = tag_sequences(&tags.tags);
    let mut copy_labels: Vec<u8> = sup.copy_labels.iter().take(reference.len()).copied().collect();
    copy_labels.push(0);
    let mut copy_sources: Vec<Vec<usize>> =
        reference.iter().map(|w| (0..keep).filter(|&i| lin.copyable(i) && lin.surfaces[i] == *w).collect()).collect();
    copy_sources.push(Vec::new());
    Ok(Prepared {
        id: example.id.clone(),
        graph: example.graph.clone(),
        padded,
        gold,
        src,
        dec_inputs,
        targets,
        tag_inputs,
        tag_targets,
        copy_labels,
        copy_sources,
        reference,
    })
}

/// Per-example loss nodes on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub token: Var,
    pub pos: Var,
    pub sort: Var,
    pub copy: Var,
}

/// Builds all four losses for one example under teacher forcing.
///
/// The generator always reads the gold-order linearisation. The sorting
/// loss is the node-level loss when `order_mode` is node-level and the
/// triple-level loss otherwise.
pub fn example_losses(t: &mut Tape, m: &Model, ex: &Prepared, order_mode: OrderMode, dropout_seed: Option<u64>) -> LossVars {
    let cfg = &m.arch.model;
    let p = &m.ids.seq;
    let mut drop = dropout_seed.and_then(|s| Dropout::new(cfg.dropout, s));

    let wi = seq2seq::encode_words(t, cfg, p, &ex.src, drop.as_mut());
    let pi = seq2seq::encode_pos(t, cfg, p, &ex.src, drop.as_mut());
    let memory = if m.ablation.no_pos_fusion { wi } else { seq2seq::fuse(t, p, wi, pi).expect("encoders share the source") };
    let dec = seq2seq::decode_words(t, cfg, p, memory, &ex.dec_inputs, drop.as_mut());
    let (pos_hidden, pos_logits) = seq2seq::decode_pos(t, cfg, p, pi, &ex.tag_inputs);

    let token = seq2seq::token_loss_on(t, dec.logits, &ex.targets);
    let pos = seq2seq::pos_loss_on(t, pos_logits, &ex.tag_targets);

    let sort = match order_mode {
        OrderMode::NodeLevel => {
            let lp = sorting::node_log_probs_on(t, &ex.padded, &m.arch.sorter, &m.ids.sorter);
            sorting::node_loss_on(t, lp, &ex.gold, m.capacity())
        }
        _ => {
            let f = sorting::encode_triplets_on(t, &ex.padded, &m.arch.sorter, &m.ids.sorter);
            let lp = sorting::score_log_probs_on(t, f, &m.arch.sorter, &m.ids.sorter);
            sorting::sort_loss_on(t, lp, &ex.gold)
        }
    };

    let p_copy = copy_probabilities_on(t, m, dec.inputs, dec.hidden, pos_hidden, &ex.tag_targets);
    let mut copy = copy_gate::copy_loss_on(t, p_copy, &ex.copy_labels);
    if m.arch.copy.supervise_pointer {
        let ptr = copy_gate::pointer_loss_on(t, dec.attention, &ex.copy_sources, &ex.copy_labels);
        copy = t.add(copy, ptr);
    }
    LossVars { token, pos, sort, copy }
}

fn copy_probabilities_on(t: &mut Tape, m: &Model, v_w: Var, s: Var, pos_hidden: Var, tags: &[usize]) -> Var {
    let k = t.value(v_w).rows;
    let v_p = (!m.ablation.no_pos).then(|| match m.arch.model.pos_scope {
        PosScope::Local => t.gather(m.ids.seq.tag_embed, tags),
        PosScope::Global => {
            let last = t.value(pos_hidden).rows - 1;
            t.select_rows(pos_hidden, &vec![last; k])
        }
    });
    let t_copy = copy_gate::gate_on(t, &m.ids.copy, v_w, v_p, s);
    let x_sem = (!m.ablation.no_sc).then(|| {
        let pad = t.gather(m.ids.seq.embed, &[PAD]);
        copy_gate::semantic_scores_on(t, &m.ids.copy, v_w, pad)
    });
    copy_gate::blend_on(t, t_copy, x_sem, m.arch.copy.lambda)
}

/// Copy probabilities per teacher-forced step, for inspection and tests.
pub fn teacher_forced_copy_probs(m: &Model, ex: &Prepared) -> Vec<f64> {
    let mut t = Tape::new(&m.params);
    let cfg = &m.arch.model;
    let p = &m.ids.seq;
    let wi = seq2seq::encode_words(&mut t, cfg, p, &ex.src, None);
    let pi = seq2seq::encode_pos(&mut t, cfg, p, &ex.src, None);
    let memory = if m.ablation.no_pos_fusion { wi } else { seq2seq::fuse(&mut t, p, wi, pi).expect("same length") };
    let dec = seq2seq::decode_words(&mut t, cfg, p, memory, &ex.dec_inputs, None);
    let (ph, _) = seq2seq::decode_pos(&mut t, cfg, p, pi, &ex.tag_inputs);
    let pc = copy_probabilities_on(&mut t, m, dec.inputs, dec.hidden, ph, &ex.tag_targets);
    t.value(pc).data.clone()
}

/// Chooses the description order for inference.
pub fn predict_order<R: Rng>(m: &Model, graph: &KnowledgeGraph, mode: OrderMode, gold: Option<&OrderLabel>, rng: &mut R) -> Result<OrderLabel> {
    let n = m.capacity();
    let pg = pad_graph(graph, n)?;
    match mode {
        OrderMode::Learned => {
            let f = sorting::encode_triplets(&pg, &m.arch.sorter, &m.params, &m.ids.sorter);
            let sm = sorting::score_positions(&f, &m.arch.sorter, &m.params, &m.ids.sorter);
            Ok(sorting::decode_order(&sm, pg.n_real, m.arch.sorter.repair))
        }
        OrderMode::NodeLevel => {
            let mut t = Tape::new(&m.params);
            let lp = sorting::node_log_probs_on(&mut t, &pg, &m.arch.sorter, &m.ids.sorter);
            Ok(sorting::decode_node_order(t.value(lp), pg.n_real, n))
        }
        OrderMode::Random => Ok(sorting::random_order(pg.n_real, n, rng)),
        OrderMode::Gold => gold.cloned().ok_or_else(|| Error::InvalidOrder(format!("no gold order for graph {}", graph.id))),
        OrderMode::Input => Ok(OrderLabel::identity(pg.n_real, n)),
    }
}

/// A token emitted during decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emitted {
    /// Id fed back to the decoder.
    pub input_id: usize,
    /// Output vocabulary id (`<unk>` for copied out-of-vocabulary words).
    pub out_id: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<CopyDecision>,
}

/// What a hypothesis may do next.
#[derive(Debug, Clone, PartialEq)]
pub enum Expansion {
    /// The gate fired: the single copy candidate and its log-score.
    Copy { token: Emitted, score: f64 },
    /// Generation: log-score per output id (`-inf` for forbidden ids).
    Generate { scores: Vec<f64>, decision: Option<CopyDecision> },
}

/// Anything beam search can drive.
pub trait StepModel {
    fn eos(&self) -> Option<usize>;
    fn expand(&self, prefix: &[Emitted]) -> Expansion;
    fn emit(&self, out_id: usize, decision: Option<CopyDecision>) -> Emitted;
}

/// Inference state for one graph under a fixed order.
pub struct Session<'m> {
    pub model: &'m Model,
    pub lin: LinearizedKG,
    memory: Matrix,
    tags: Vec<usize>,
    pos_global: Option<Vec<f64>>,
    pub max_len: usize,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model, graph: &KnowledgeGraph, order: &OrderLabel, max_len: usize) -> Result<Self> {
        let cfg = &model.arch.model;
        let p = &model.ids.seq;
        let mut lin = linearize(graph, order, &model.vocab)?;
        let keep = seq2seq::check_source_len(cfg, lin.len())?;
        lin.tokens.truncate(keep);
        lin.surfaces.truncate(keep);
        lin.provenance.truncate(keep);
        let max_len = max_len.min(cfg.max_target_len);

        let mut t = Tape::new(&model.params);
        let wi = seq2seq::encode_words(&mut t, cfg, p, &lin.tokens, None);
        let pi = seq2seq::encode_pos(&mut t, cfg, p, &lin.tokens, None);
        let memory = if model.ablation.no_pos_fusion { wi } else { seq2seq::fuse(&mut t, p, wi, pi)? };
        let memory_m = t.value(memory).clone();
        let pi_m = t.value(pi).clone();

        // The POS decoder never reads words, so its greedy tag sequence is
        // shared by every hypothesis. After END every later step is END.
        let mut tags = Vec::with_capacity(max_len);
        let mut last_hidden = Vec::new();
        let mut inputs = vec![BOS_TAG];
        while tags.len() < max_len {
            let mut t = Tape::new(&model.params);
            let mem = t.constant(pi_m.clone());
            let (h, logits) = seq2seq::decode_pos(&mut t, cfg, p, mem, &inputs);
            let k = inputs.len() - 1;
            let tag = argmax(t.value(logits).row(k));
            last_hidden = t.value(h).row(k).to_vec();
            tags.push(tag);
            inputs.push(tag);
            if tag == END_TAG {
                break;
            }
        }
        tags.resize(max_len, END_TAG);
        let pos_global = (cfg.pos_scope == PosScope::Global).then_some(last_hidden);
        Ok(Self { model, lin, memory: memory_m, tags, pos_global, max_len })
    }

    /// Predicted POS tag ids per step.
    pub fn tags(&self) -> &[usize] {
        &self.tags
    }

    /// Runs the word decoder over `<bos> + prefix` and reads the last step.
    pub fn step(&self, prefix: &[usize]) -> (seq2seq::DecodeStep, f64, Option<f64>, f64) {
        let m = self.model;
        let cfg = &m.arch.model;
        let p = &m.ids.seq;
        let mut inputs = Vec::with_capacity(prefix.len() + 1);
        inputs.push(BOS);
        inputs.extend_from_slice(prefix);
        let k = prefix.len();
        let mut t = Tape::new(&m.params);
        let mem = t.constant(self.memory.clone());
        let dec = seq2seq::decode_words(&mut t, cfg, p, mem, &inputs, None);
        let emb = t.value(dec.inputs);
        let v_w = emb.row(k).to_vec();
        let tag = self.tags[k.min(self.tags.len() - 1)];
        let v_p = match &self.pos_global {
            Some(h) => h.clone(),
            None => m.params.get(p.tag_embed).row(tag).to_vec(),
        };
        let hidden = t.value(dec.hidden).row(k).to_vec();
        let x_sem = (!m.ablation.no_sc).then(|| {
            let pad = m.params.get(p.embed).row(PAD).to_vec();
            let scores: Vec<f64> = m
                .ids
                .copy
                .scorers
                .iter()
                .map(|s| copy_gate::semantic_score(&copy_gate::context_window(emb, &pad, k, s.window), s, &m.params))
                .collect();
            scores.iter().sum::<f64>() / scores.len() as f64
        });
        let vp = (!m.ablation.no_pos).then_some(v_p.as_slice());
        let (t_copy, p_copy) =
            copy_gate::copy_probability(&v_w, vp, &hidden, x_sem, m.arch.copy.lambda, &m.ids.copy, &m.params).expect("lambda validated");
        let step = seq2seq::DecodeStep {
            word_logits: t.value(dec.logits).row(k).to_vec(),
            pos_logits: Vec::new(),
            hidden,
            v_w,
            v_p,
            attention: t.value(dec.attention).row(k).to_vec(),
        };
        (step, t_copy, x_sem, p_copy)
    }

    pub fn threshold(&self) -> f64 {
        if self.model.copy_enabled() {
            self.model.arch.copy.threshold
        } else {
            f64::INFINITY
        }
    }
}

/// Output ids generation may never produce.
fn forbidden(id: usize) -> bool {
    id < crate::supervision::SPECIALS.len() && id != EOS && id != UNK
}

impl StepModel for Session<'_> {
    fn eos(&self) -> Option<usize> {
        Some(EOS)
    }

    fn expand(&self, prefix: &[Emitted]) -> Expansion {
        let ids: Vec<usize> = prefix.iter().map(|e| e.input_id).collect();
        let (step, t_copy, x_sem, p_copy) = self.step(&ids);
        let copy_on = self.model.copy_enabled();
        let decision = copy_gate::select_token(&step.word_logits, &step.attention, &self.lin, t_copy, x_sem, p_copy, self.threshold());
        if let TokenSource::Copied { position, surface, .. } = &decision.source {
            let score = p_copy.max(copy_gate::EPS).ln() + step.attention[*position].max(copy_gate::EPS).ln();
            let token = Emitted {
                input_id: self.model.vocab.input_id(surface),
                out_id: self.model.vocab.id(surface),
                text: surface.clone(),
                decision: Some(decision),
            };
            return Expansion::Copy { token, score };
        }
        let mut logits = step.word_logits;
        for (i, l) in logits.iter_mut().enumerate() {
            if forbidden(i) {
                *l = f64::NEG_INFINITY;
            }
        }
        let offset = if copy_on { (1.0 - p_copy).max(copy_gate::EPS).ln() } else { 0.0 };
        let scores = log_softmax(&logits).into_iter().map(|s| s + offset).collect();
        Expansion::Generate { scores, decision: copy_on.then_some(decision) }
    }

    fn emit(&self, out_id: usize, decision: Option<CopyDecision>) -> Emitted {
        let decision = decision.map(|mut d| {
            d.source = TokenSource::Generated { id: out_id };
            d
        });
        Emitted { input_id: out_id, out_id, text: self.model.vocab.token(out_id).to_string(), decision }
    }
}
