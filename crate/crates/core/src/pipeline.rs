//! Command implementations shared by the binary and the tests.
//!
//! Every command that writes a run directory leaves exactly one
//! `manifest.json` in it. The manifest holds the resolved configuration and
//! the command arguments, which is enough to repeat the run.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::corpus::{self, DataConfig};
use crate::decoding::BeamConfig;
use crate::error::{Error, Result};
use crate::evaluate::{self, EvalConfig, EvalItem, MetricsReport};
use crate::kg_data::{self, DatasetFormat, Example};
use crate::model::{Ablation, ArchConfig, Model};
use crate::parallel::{self, Schedule};
use crate::seq2seq::PosScope;
use crate::sorting::OrderMode;
use crate::supervision::{self, SidecarHeader, SupervisionRecord, TaggerRegistry, Upos, SIDECAR_FORMAT, SIDECAR_VERSION, TAGSET_ID};
use crate::training::{self, TrainConfig, TrainHooks, TrainReport};

/// Environment variable naming the default directory for run directories.
pub const RUN_ROOT_ENV: &str = "KGTEXT_RUN_ROOT";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Precomputed supervision for `train`; derived on the fly when absent.
    pub train_sidecar: Option<PathBuf>,
    pub format: DatasetFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
    /// Variant names to run; empty runs the whole suite.
    pub variants: Vec<String>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], variants: Vec::new() }
    }
}

/// Everything a run needs, as read from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataPaths,
    pub corpus: DataConfig,
    #[serde(flatten)]
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative data paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.train, &mut self.data.valid, &mut self.data.test, &mut self.data.train_sidecar].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        if self.corpus.order_length != self.arch.sorter.capacity {
            return Err(Error::Config(format!(
                "corpus.order_length ({}) must equal sorter.capacity ({})",
                self.corpus.order_length, self.arch.sorter.capacity
            )));
        }
        if self.eval.beam.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub bytes: u64,
    /// Git blob id: SHA-1 of `blob <len>\0<content>`.
    pub git_sha1: String,
}

pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let content = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest { path: path.to_path_buf(), bytes: content.len() as u64, git_sha1: git_blob_hash(&content) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Command-specific arguments after flag and config resolution.
    pub args: serde_json::Value,
    pub config: Option<RunConfig>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Collects what a command read and wrote, then writes the manifest.
pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, args: serde_json::Value, config: Option<&RunConfig>, seed: Option<u64>) -> Self {
        Self {
            manifest: RunManifest {
                command: command.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                args,
                config: config.cloned(),
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix: now(),
                finished_unix: 0.0,
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn finish(mut self, dir: &Path) -> Result<RunManifest> {
        self.manifest.finished_unix = now();
        write_json(&dir.join(MANIFEST_FILE), &self.manifest)?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Default run root: the environment variable, else `runs`.
pub fn default_run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// A fresh directory `<root>/<command>-<name>`; a numeric suffix avoids reuse.
pub fn new_run_dir(root: &Path, command: &str, name: Option<&str>) -> Result<PathBuf> {
    let stem = match name {
        Some(n) => format!("{command}-{n}"),
        None => format!("{command}-{}", SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())),
    };
    create_dir(root)?;
    for k in 0.. {
        let dir = if k == 0 { root.join(&stem) } else { root.join(format!("{stem}.{k}")) };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("unbounded suffix search")
}

/// Parses a dataset and fails on an empty result. Malformed records are logged and skipped.
pub fn load_examples(path: &Path, format: DatasetFormat, cfg: &DataConfig) -> Result<Vec<Example>> {
    let parsed = kg_data::parse_dataset(path, format)?;
    for e in &parsed.errors {
        log::warn!("{}:{}: {}", path.display(), e.location, e.message);
    }
    if parsed.examples.is_empty() {
        return Err(if parsed.errors.is_empty() {
            Error::EmptyCorpus
        } else {
            Error::InvalidRecord(format!("{}: no valid records ({} rejected)", path.display(), parsed.errors.len()))
        });
    }
    corpus::fit_graphs(parsed.examples, cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("no {what} split configured")))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub examples: usize,
    pub rejected: usize,
    /// Graph size → number of examples.
    pub order_lengths: BTreeMap<usize, usize>,
    /// Share of reference tokens labelled as copied.
    pub copy_rate: f64,
    pub tag_counts: BTreeMap<String, usize>,
}

/// Writes one supervision sidecar and one summary per input split into `out_dir`.
pub fn cmd_preprocess(inputs: &[PathBuf], format: DatasetFormat, cfg: &DataConfig, out_dir: &Path) -> Result<Vec<PreprocessSummary>> {
    let registry = TaggerRegistry::default();
    let tagger = registry.get(&cfg.tagger)?;
    if inputs.is_empty() {
        return Err(Error::Config("no input files".into()));
    }
    let mut mb = ManifestBuilder::new("preprocess", serde_json::json!({ "inputs": inputs, "format": format, "data": cfg }), None, None);
    let mut prepared = Vec::new();
    for input in inputs {
        let parsed = kg_data::parse_dataset(input, format)?;
        if parsed.examples.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for e in &parsed.errors {
            log::warn!("{}:{}: {}", input.display(), e.location, e.message);
        }
        let rejected = parsed.errors.len();
        let examples = corpus::fit_graphs(parsed.examples, cfg)?;
        prepared.push((input, examples, rejected));
        mb.input(input)?;
    }
    create_dir(out_dir)?;
    let mut summaries = Vec::new();
    for (input, examples, rejected) in prepared {
        let records = corpus::supervise_all(&examples, cfg.order_length, tagger);
        let stem = input.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
        let sidecar = out_dir.join(format!("{stem}.supervision.jsonl"));
        let header = SidecarHeader {
            format: SIDECAR_FORMAT.into(),
            version: SIDECAR_VERSION,
            tagger: tagger.id().into(),
            tagset: TAGSET_ID.into(),
            order_length: cfg.order_length,
            examples: records.len(),
        };
        supervision::write_sidecar(&sidecar, &header, &records)?;
        mb.output(&sidecar);
        let summary = summarize(&examples, &records, rejected);
        let summary_path = out_dir.join(format!("{stem}.summary.json"));
        write_json(&summary_path, &summary)?;
        mb.output(&summary_path);
        summaries.push(summary);
    }
    mb.finish(out_dir)?;
    Ok(summaries)
}

pub fn summarize(examples: &[Example], records: &[SupervisionRecord], rejected: usize) -> PreprocessSummary {
    let mut summary = PreprocessSummary { examples: records.len(), rejected, ..Default::default() };
    let (mut copied, mut tokens) = (0usize, 0usize);
    for (ex, r) in examples.iter().zip(records) {
        *summary.order_lengths.entry(ex.graph.len()).or_insert(0) += 1;
        copied += r.copy_labels.iter().filter(|&&y| y == 1).count();
        tokens += r.copy_labels.len();
        for t in &r.pos {
            *summary.tag_counts.entry(t.clone()).or_insert(0) += 1;
        }
    }
    for t in Upos::ALL {
        summary.tag_counts.entry(t.name().to_string()).or_insert(0);
    }
    summary.copy_rate = if tokens == 0 { 0.0 } else { copied as f64 / tokens as f64 };
    summary
}

fn train_records(cfg: &RunConfig, examples: &[Example], tagger_registry: &TaggerRegistry) -> Result<Vec<SupervisionRecord>> {
    match &cfg.data.train_sidecar {
        Some(path) => {
            let (header, records) = supervision::read_sidecar(path)?;
            if header.order_length != cfg.corpus.order_length {
                return Err(Error::Config(format!("sidecar order length {} differs from {}", header.order_length, cfg.corpus.order_length)));
            }
            Ok(records)
        }
        None => Ok(corpus::supervise_all(examples, cfg.corpus.order_length, tagger_registry.get(&cfg.corpus.tagger)?)),
    }
}

/// Loads a split as evaluation items (graphs grouped with their references).
pub fn load_items(path: &Path, format: DatasetFormat, cfg: &DataConfig) -> Result<Vec<EvalItem>> {
    let examples = load_examples(path, format, cfg)?;
    let registry = TaggerRegistry::default();
    let sups = corpus::supervise_all(&examples, cfg.order_length, registry.get(&cfg.tagger)?);
    evaluate::group_items(&examples, &sups)
}

pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
    pub run_dir: PathBuf,
}

/// Trains a model in memory from examples and returns it with the report.
pub fn train_model(cfg: &RunConfig, examples: &[Example], sups: &[SupervisionRecord], valid: Option<&[EvalItem]>, log: Option<&mut dyn std::io::Write>, diagnostics: Option<&Path>) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let vocab = corpus::vocab_from(sups, &cfg.corpus)?;
    let mut model = Model::new(cfg.arch.clone(), cfg.train.ablation, vocab, cfg.train.seed)?;
    let data = corpus::prepare_all(examples, sups, &model)?;
    let eval_cfg = EvalConfig { beam: BeamConfig { beam: 1, ..cfg.eval.beam }, ..cfg.eval };
    let validate = |m: &Model| match valid {
        Some(items) if !items.is_empty() => evaluate::evaluate(m, items, &eval_cfg, Schedule::Auto).map_or(0.0, |(r, _)| r.bleu4),
        _ => 0.0,
    };
    let log = log.map(|l| l as &mut dyn std::io::Write);
    let hooks = TrainHooks { log, validate: valid.map(|_| &validate as &dyn Fn(&Model) -> f64), diagnostics, schedule: Schedule::Auto };
    let report = training::train(&mut model, &data, &cfg.train, hooks)?;
    Ok((model, report))
}

pub fn cmd_train(cfg: &RunConfig, run_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_path = required(&cfg.data.train, "train")?;
    let examples = load_examples(train_path, cfg.data.format, &cfg.corpus)?;
    let registry = TaggerRegistry::default();
    let sups = train_records(cfg, &examples, &registry)?;
    let valid = cfg.data.valid.as_deref().map(|p| load_items(p, cfg.data.format, &cfg.corpus)).transpose()?;

    let mut mb = ManifestBuilder::new("train", serde_json::json!({}), Some(cfg), Some(cfg.train.seed));
    mb.input(train_path)?;
    for p in [&cfg.data.valid, &cfg.data.train_sidecar].into_iter().flatten() {
        mb.input(p)?;
    }
    let config_path = run_dir.join("config.toml");
    write_text(&config_path, &cfg.to_toml())?;
    mb.output(&config_path);
    let log_path = run_dir.join("train_log.jsonl");
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let diag = run_dir.join("diagnostics.json");
    let result = train_model(cfg, &examples, &sups, valid.as_deref(), Some(&mut log), Some(&diag));
    drop(log);
    mb.output(&log_path);
    let (model, report) = match result {
        Ok(r) => r,
        Err(e) => {
            if diag.exists() {
                mb.output(&diag);
            }
            mb.finish(run_dir)?;
            return Err(e);
        }
    };
    let ckpt = run_dir.join(CHECKPOINT_FILE);
    training::save_checkpoint(&ckpt, &model, Some(&cfg.train))?;
    mb.output(&ckpt);
    mb.finish(run_dir)?;
    Ok(TrainOutcome { model, report, run_dir: run_dir.to_path_buf() })
}

/// Per-step trace line for `generate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub graph_id: String,
    pub order: Vec<usize>,
    pub text: String,
    pub score: f64,
    pub steps: Vec<crate::model::Emitted>,
}

pub fn cmd_generate(checkpoint: &Path, input: &Path, format: DatasetFormat, cfg: &EvalConfig, data: &DataConfig, run_dir: &Path) -> Result<Vec<TraceRecord>> {
    let (model, _) = training::load_checkpoint(checkpoint)?;
    let items = load_items(input, format, &DataConfig { order_length: model.capacity(), ..data.clone() })?;
    let gens = parallel::map(&items, Schedule::Auto, |it| evaluate::generate(&model, &it.graph, Some(&it.gold), cfg)).into_iter().collect::<Result<Vec<_>>>()?;
    let mut mb = ManifestBuilder::new(
        "generate",
        serde_json::json!({ "checkpoint": checkpoint, "input": input, "format": format, "eval": cfg, "data": data }),
        None,
        Some(cfg.seed),
    );
    mb.input(checkpoint)?;
    mb.input(input)?;
    let traces: Vec<TraceRecord> = gens
        .iter()
        .map(|g| TraceRecord { graph_id: g.graph_id.clone(), order: g.order.clone(), text: g.text(), score: g.hypothesis.score, steps: g.hypothesis.tokens.clone() })
        .collect();
    let hyp_path = run_dir.join("hypotheses.txt");
    write_text(&hyp_path, &traces.iter().map(|t| format!("{}\n", t.text)).collect::<String>())?;
    mb.output(&hyp_path);
    let trace_path = run_dir.join("traces.jsonl");
    let mut lines = String::new();
    for t in &traces {
        lines.push_str(&serde_json::to_string(t)?);
        lines.push('\n');
    }
    write_text(&trace_path, &lines)?;
    mb.output(&trace_path);
    mb.finish(run_dir)?;
    Ok(traces)
}

/// Writes `metrics.json`, `per_example.tsv` and `kg_size.csv` into `dir`.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let metrics = dir.join("metrics.json");
    write_json(&metrics, report)?;
    let tsv = dir.join("per_example.tsv");
    write_text(&tsv, &report.to_tsv())?;
    let sizes = dir.join("kg_size.csv");
    let mut w = csv::Writer::from_path(&sizes).map_err(|e| Error::Config(e.to_string()))?;
    for b in &report.buckets {
        w.serialize(b).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&sizes, e))?;
    Ok(vec![metrics, tsv, sizes])
}

pub fn cmd_evaluate(checkpoint: &Path, split: &Path, format: DatasetFormat, cfg: &EvalConfig, data: &DataConfig, run_dir: &Path) -> Result<MetricsReport> {
    let (model, _) = training::load_checkpoint(checkpoint)?;
    let items = load_items(split, format, &DataConfig { order_length: model.capacity(), ..data.clone() })?;
    let (report, _) = evaluate::evaluate(&model, &items, cfg, Schedule::Auto)?;
    let mut mb = ManifestBuilder::new(
        "evaluate",
        serde_json::json!({ "checkpoint": checkpoint, "split": split, "format": format, "eval": cfg, "data": data }),
        None,
        Some(cfg.seed),
    );
    mb.input(checkpoint)?;
    mb.input(split)?;
    for p in write_report(&report, run_dir)? {
        mb.output(&p);
    }
    mb.finish(run_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Copy,
    Order,
    Window,
    PosScope,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Self::Copy),
            "order" => Ok(Self::Order),
            "window" => Ok(Self::Window),
            "pos_scope" | "pos-scope" => Ok(Self::PosScope),
            other => Err(Error::Config(format!("unknown ablation suite `{other}` (expected copy, order, window or pos_scope)"))),
        }
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Copy => "copy",
            Self::Order => "order",
            Self::Window => "window",
            Self::PosScope => "pos_scope",
        })
    }
}

/// One configuration in a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub arch: ArchConfig,
    pub ablation: Ablation,
    /// Order mode for training (only node-level changes training) and evaluation.
    pub order_mode: OrderMode,
}

/// The variants of `suite` derived from a base configuration.
pub fn suite_variants(suite: Suite, base: &RunConfig) -> Vec<Variant> {
    let v = |name: &str, arch: ArchConfig, ablation: Ablation, order_mode: OrderMode| Variant { name: name.into(), arch, ablation, order_mode };
    let a = base.arch.clone();
    let ab = base.train.ablation;
    match suite {
        Suite::Copy => vec![
            v("full", a.clone(), ab, OrderMode::Gold),
            v("w/o CP", a.clone(), Ablation { no_cp: true, ..ab }, OrderMode::Gold),
            v("w/o POS", a.clone(), Ablation { no_pos: true, ..ab }, OrderMode::Gold),
            v("w/o SC", a.clone(), Ablation { no_sc: true, ..ab }, OrderMode::Gold),
            v("w/o POS and SC", a, Ablation { no_pos: true, no_sc: true, ..ab }, OrderMode::Gold),
        ],
        Suite::Order => vec![
            v("GT", a.clone(), ab, OrderMode::Gold),
            v("TS", a.clone(), ab, OrderMode::Learned),
            v("NS", a.clone(), ab, OrderMode::NodeLevel),
            v("RS", a, ab, OrderMode::Random),
        ],
        Suite::Window => (1..=5)
            .map(|w| {
                let mut arch = a.clone();
                arch.copy.window = w;
                v(&format!("w={w}"), arch, ab, base.eval.order_mode)
            })
            .collect(),
        Suite::PosScope => [("local", PosScope::Local), ("global", PosScope::Global)]
            .into_iter()
            .map(|(name, scope)| {
                let mut arch = a.clone();
                arch.model.pos_scope = scope;
                v(name, arch, ab, base.eval.order_mode)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: Suite,
    pub variant: String,
    pub seed: u64,
    pub order_mode: OrderMode,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub chrf_pp: f64,
    pub cider: f64,
    pub order_exact_match: f64,
    pub kendall_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMean {
    pub variant: String,
    pub seeds: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub chrf_pp: f64,
    pub cider: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: Suite,
    pub rows: Vec<AblationRow>,
    pub means: Vec<AblationMean>,
}

impl AblationReport {
    pub fn mean(&self, variant: &str) -> Option<&AblationMean> {
        self.means.iter().find(|m| m.variant == variant)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("## Ablation suite: {}\n\n| variant | seeds | BLEU-4 | ROUGE-L | chrF++ | CIDEr |\n|---|---|---|---|---|---|\n", self.suite);
        for m in &self.means {
            s.push_str(&format!("| {} | {} | {:.2} | {:.2} | {:.2} | {:.3} |\n", m.variant, m.seeds, m.bleu4, m.rouge_l, m.chrf_pp, m.cider));
        }
        s.push_str("\n| variant | seed | order | BLEU-4 | ROUGE-L | chrF++ | CIDEr | order EM | tau |\n|---|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {} | {} | {:.2} | {:.2} | {:.2} | {:.3} | {:.1} | {:.3} |\n",
                r.variant, r.seed, r.order_mode, r.bleu4, r.rouge_l, r.chrf_pp, r.cider, r.order_exact_match, r.kendall_tau
            ));
        }
        s
    }
}

/// Per-variant means over seeds, in order of first appearance.
pub fn ablation_means(rows: &[AblationRow]) -> Vec<AblationMean> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rs: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == name).collect();
            let n = rs.len() as f64;
            let avg = |f: fn(&AblationRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            AblationMean { variant: name.to_string(), seeds: rs.len(), bleu4: avg(|r| r.bleu4), rouge_l: avg(|r| r.rouge_l), chrf_pp: avg(|r| r.chrf_pp), cider: avg(|r| r.cider) }
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format { path: path.to_path_buf(), format: "csv".into(), message: e.to_string() }
}

/// Reads the per-seed CSV written by [`cmd_ablate`].
pub fn read_ablation_csv(path: &Path) -> Result<AblationReport> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let rows = rd.deserialize().collect::<std::result::Result<Vec<AblationRow>, _>>().map_err(|e| csv_err(path, e))?;
    let suite = rows.first().map(|r| r.suite).ok_or(Error::EmptyCorpus)?;
    let means = ablation_means(&rows);
    Ok(AblationReport { suite, rows, means })
}

/// Reads a `kg_size.csv` written by [`write_report`].
pub fn read_bucket_csv(path: &Path) -> Result<Vec<evaluate::BucketScore>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    rd.deserialize().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| csv_err(path, e))
}

/// Trains and evaluates every selected variant of `suite` for every seed.
///
/// Variants whose training setup is identical (for example gold, learned
/// and random order) share one trained model per seed.
pub fn cmd_ablate(cfg: &RunConfig, suite: Suite, run_dir: &Path) -> Result<AblationReport> {
    cfg.validate()?;
    let train_path = required(&cfg.data.train, "train")?;
    let test_path = cfg.data.test.as_deref().or(cfg.data.valid.as_deref()).ok_or_else(|| Error::Config("no test or valid split configured".into()))?;
    let examples = load_examples(train_path, cfg.data.format, &cfg.corpus)?;
    let registry = TaggerRegistry::default();
    let sups = train_records(cfg, &examples, &registry)?;
    let items = load_items(test_path, cfg.data.format, &cfg.corpus)?;

    let mut variants = suite_variants(suite, cfg);
    if !cfg.ablate.variants.is_empty() {
        let known: Vec<String> = variants.iter().map(|v| v.name.clone()).collect();
        if let Some(bad) = cfg.ablate.variants.iter().find(|n| !known.contains(n)) {
            return Err(Error::Config(format!("suite {suite} has no variant `{bad}` (known: {})", known.join(", "))));
        }
        variants.retain(|v| cfg.ablate.variants.contains(&v.name));
    }
    if cfg.ablate.seeds.is_empty() {
        return Err(Error::Config("ablate.seeds is empty".into()));
    }

    let mut mb = ManifestBuilder::new("ablate", serde_json::json!({ "suite": suite }), Some(cfg), None);
    mb.input(train_path)?;
    mb.input(test_path)?;
    let mut rows = Vec::new();
    for &seed in &cfg.ablate.seeds {
        let mut cache: HashMap<String, Model> = HashMap::new();
        for v in &variants {
            let train_mode = if v.order_mode == OrderMode::NodeLevel { OrderMode::NodeLevel } else { OrderMode::Learned };
            let mut run = cfg.clone();
            run.arch = v.arch.clone();
            run.train = TrainConfig { seed, ablation: v.ablation, order_mode: train_mode, ..cfg.train.clone() };
            let key = serde_json::to_string(&(&run.arch, &run.train))?;
            if !cache.contains_key(&key) {
                log::info!("ablate {suite}: training {} (seed {seed})", v.name);
                let (model, _) = train_model(&run, &examples, &sups, None, None, None)?;
                cache.insert(key.clone(), model);
            }
            let model = &cache[&key];
            let ec = EvalConfig { order_mode: v.order_mode, seed, ..cfg.eval };
            let (r, _) = evaluate::evaluate(model, &items, &ec, Schedule::Auto)?;
            log::info!("ablate {suite}: {} seed {seed}: BLEU-4 {:.2}", v.name, r.bleu4);
            rows.push(AblationRow {
                suite,
                variant: v.name.clone(),
                seed,
                order_mode: v.order_mode,
                bleu4: r.bleu4,
                rouge_l: r.rouge_l,
                chrf_pp: r.chrf_pp,
                cider: r.cider,
                order_exact_match: r.order_exact_match,
                kendall_tau: r.kendall_tau,
            });
        }
    }
    let means = ablation_means(&rows);
    let report = AblationReport { suite, rows, means };

    let csv_path = run_dir.join(format!("ablation_{suite}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Config(e.to_string()))?;
    for r in &report.rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    mb.output(&csv_path);
    let md_path = run_dir.join(format!("ablation_{suite}.md"));
    write_text(&md_path, &report.to_markdown())?;
    mb.output(&md_path);
    let json_path = run_dir.join(format!("ablation_{suite}.json"));
    write_json(&json_path, &report)?;
    mb.output(&json_path);
    mb.finish(run_dir)?;
    Ok(report)
}
