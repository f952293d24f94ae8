//! Generation over a split and the metrics report.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::{self, BeamConfig, Hypothesis};
use crate::error::{Error, Result};
use crate::kg_data::{Example, KnowledgeGraph};
use crate::metrics::{self, CorpusScores};
use crate::model::{self, Model, Session};
use crate::parallel::{self, Schedule};
use crate::sorting::{self, OrderMode};
use crate::supervision::{OrderLabel, SupervisionRecord};
use crate::text::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub beam: BeamConfig,
    pub order_mode: OrderMode,
    /// Seeds random orders; each graph derives its own stream from its id.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { beam: BeamConfig::default(), order_mode: OrderMode::Learned, seed: 0 }
    }
}

/// Graph-size buckets: 1-3, 4-6 and 7 or more triplets.
pub const BUCKETS: [(&str, usize, usize); 3] = [("1-3", 1, 3), ("4-6", 4, 6), ("7+", 7, usize::MAX)];

pub fn bucket_of(n_triplets: usize) -> &'static str {
    BUCKETS.iter().find(|(_, lo, hi)| (*lo..=*hi).contains(&n_triplets)).map_or(BUCKETS[0].0, |b| b.0)
}

/// One graph with all its references.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub graph: KnowledgeGraph,
    pub gold: OrderLabel,
    pub references: Vec<String>,
}

/// Groups examples that share a graph id; references keep file order.
pub fn group_items(examples: &[Example], sups: &[SupervisionRecord]) -> Result<Vec<EvalItem>> {
    if examples.len() != sups.len() {
        return Err(Error::LengthMismatch(format!("{} examples but {} supervision records", examples.len(), sups.len())));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut items: Vec<EvalItem> = Vec::new();
    for (ex, sup) in examples.iter().zip(sups) {
        if ex.id != sup.id {
            return Err(Error::InvalidRecord(format!("supervision record {} does not match example {}", sup.id, ex.id)));
        }
        let reference = sup.tokens.join(" ");
        match index.get(ex.graph.id.as_str()) {
            Some(&i) => items[i].references.push(reference),
            None => {
                index.insert(&ex.graph.id, items.len());
                items.push(EvalItem { graph: ex.graph.clone(), gold: sup.order()?, references: vec![reference] });
            }
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub graph_id: String,
    pub n_triplets: usize,
    /// Triplet indices in the order they were described.
    pub order: Vec<usize>,
    pub gold_order: Vec<usize>,
    pub hypothesis: Hypothesis,
}

impl Generation {
    pub fn text(&self) -> String {
        self.hypothesis.words().join(" ")
    }

    /// Share of emitted words that were copied from the graph.
    pub fn copy_rate(&self) -> f64 {
        let words = self.hypothesis.words();
        if words.is_empty() {
            return 0.0;
        }
        let copied = self.hypothesis.tokens[..words.len()].iter().filter(|t| t.decision.as_ref().is_some_and(|d| d.copied())).count();
        copied as f64 / words.len() as f64
    }
}

pub fn order_for(m: &Model, graph: &KnowledgeGraph, gold: Option<&OrderLabel>, cfg: &EvalConfig) -> Result<OrderLabel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a(&graph.id));
    model::predict_order(m, graph, cfg.order_mode, gold, &mut rng)
}

pub fn generate(m: &Model, graph: &KnowledgeGraph, gold: Option<&OrderLabel>, cfg: &EvalConfig) -> Result<Generation> {
    let order = order_for(m, graph, gold, cfg)?;
    let session = Session::new(m, graph, &order, cfg.beam.max_len)?;
    let beam = BeamConfig { max_len: session.max_len, ..cfg.beam };
    let hypothesis = decoding::beam_search(&session, &beam);
    Ok(Generation {
        graph_id: graph.id.clone(),
        n_triplets: graph.len(),
        order: order.listing(),
        gold_order: gold.map(OrderLabel::listing).unwrap_or_default(),
        hypothesis,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub bucket: String,
    pub graphs: usize,
    pub bleu4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub graph_id: String,
    pub hypothesis: String,
    pub references: Vec<String>,
    pub sentence_bleu: f64,
    pub copy_rate: f64,
    pub order: Vec<usize>,
    pub gold_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub order_mode: OrderMode,
    pub beam: usize,
    pub graphs: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub chrf_pp: f64,
    pub cider: f64,
    /// Percentage of graphs whose description order equals the gold order.
    pub order_exact_match: f64,
    pub kendall_tau: f64,
    pub buckets: Vec<BucketScore>,
    pub per_example: Vec<ExampleScore>,
}

impl MetricsReport {
    pub fn scores(&self) -> CorpusScores {
        CorpusScores { bleu4: self.bleu4, rouge_l: self.rouge_l, chrf_pp: self.chrf_pp, cider: self.cider }
    }

    /// Tab-separated per-example rows: id, hypothesis, first reference, sentence BLEU, copy rate.
    pub fn to_tsv(&self) -> String {
        let clean = |s: &str| s.replace(['\t', '\n'], " ");
        let mut out = String::from("id\thypothesis\treference\tbleu\tcopy_rate\n");
        for e in &self.per_example {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.4}\t{:.4}",
                clean(&e.graph_id),
                clean(&e.hypothesis),
                clean(e.references.first().map_or("", String::as_str)),
                e.sentence_bleu,
                e.copy_rate
            );
        }
        out
    }
}

/// Scores generations against the matching items.
pub fn report(items: &[EvalItem], gens: &[Generation], cfg: &EvalConfig) -> Result<MetricsReport> {
    if items.is_empty() {
        return Err(Error::EmptySplit);
    }
    let hyps: Vec<String> = gens.iter().map(Generation::text).collect();
    let refs: Vec<Vec<String>> = items.iter().map(|i| i.references.clone()).collect();
    let scores = metrics::score_corpus(&hyps, &refs);

    let mut exact = 0usize;
    let mut tau = 0.0;
    for (item, g) in items.iter().zip(gens) {
        let pred = OrderLabel::from_listing(&g.order, item.gold.capacity())?;
        exact += usize::from(pred == item.gold);
        tau += sorting::kendall_tau(&pred, &item.gold);
    }
    let n = items.len() as f64;

    let buckets = BUCKETS
        .iter()
        .map(|(label, _, _)| {
            let idx: Vec<usize> = (0..items.len()).filter(|&i| bucket_of(items[i].graph.len()) == *label).collect();
            let h: Vec<String> = idx.iter().map(|&i| hyps[i].clone()).collect();
            let r: Vec<Vec<String>> = idx.iter().map(|&i| refs[i].clone()).collect();
            BucketScore { bucket: label.to_string(), graphs: idx.len(), bleu4: metrics::bleu4(&h, &r) }
        })
        .collect();

    let per_example = items
        .iter()
        .zip(gens)
        .zip(&hyps)
        .map(|((item, g), h)| ExampleScore {
            graph_id: item.graph.id.clone(),
            hypothesis: h.clone(),
            references: item.references.clone(),
            sentence_bleu: metrics::sentence_bleu(h, &item.references),
            copy_rate: g.copy_rate(),
            order: g.order.clone(),
            gold_order: g.gold_order.clone(),
        })
        .collect();

    Ok(MetricsReport {
        order_mode: cfg.order_mode,
        beam: cfg.beam.beam,
        graphs: items.len(),
        bleu4: scores.bleu4,
        rouge_l: scores.rouge_l,
        chrf_pp: scores.chrf_pp,
        cider: scores.cider,
        order_exact_match: 100.0 * exact as f64 / n,
        kendall_tau: tau / n,
        buckets,
        per_example,
    })
}

/// Generates one sentence per graph and scores the split.
pub fn evaluate(m: &Model, items: &[EvalItem], cfg: &EvalConfig, schedule: Schedule) -> Result<(MetricsReport, Vec<Generation>)> {
    if items.is_empty() {
        return Err(Error::EmptySplit);
    }
    let gens = parallel::map(items, schedule, |item| generate(m, &item.graph, Some(&item.gold), cfg)).into_iter().collect::<Result<Vec<_>>>()?;
    Ok((report(items, &gens, cfg)?, gens))
}
