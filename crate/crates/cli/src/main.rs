//! `kgtext`: preprocess, train, generate, evaluate, ablate and plot.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 non-finite loss during training.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgtext::corpus::DataConfig;
use kgtext::evaluate::EvalConfig;
use kgtext::kg_data::{self, DatasetFormat, OversizePolicy};
use kgtext::pipeline::{self, RunConfig, Suite, RUN_ROOT_ENV};
use kgtext::seq2seq::PosScope;
use kgtext::sorting::OrderMode;
use kgtext::synthetic::{self, SynthConfig};
use kgtext::{plot, Error, Result};

#[derive(Parser)]
#[command(name = "kgtext", version, about = "Knowledge-graph-to-text generation with learned triplet ordering and a copy gate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive order, copy and POS supervision sidecars for one or more splits.
    Preprocess(PreprocessArgs),
    /// Train a model; writes a run directory with checkpoint, log and manifest.
    Train(TrainArgs),
    /// Decode graphs with a checkpoint; writes hypotheses and decode traces.
    Generate(DecodeArgs),
    /// Decode a split and score it; writes metrics.json, per_example.tsv and kg_size.csv.
    Evaluate(DecodeArgs),
    /// Run an ablation suite over several seeds; writes CSV, markdown and JSON tables.
    Ablate(AblateArgs),
    /// Draw SVG charts from sweep CSVs.
    Plot(PlotArgs),
    /// Convert a WebNLG or DART JSON file to canonical JSON lines on stdout.
    Convert(ConvertArgs),
    /// Write a seeded synthetic corpus as JSON lines.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunDirArgs {
    /// Directory that receives run directories.
    #[arg(long, env = RUN_ROOT_ENV, default_value = "runs")]
    run_root: PathBuf,
    /// Run directory name suffix; defaults to a timestamp.
    #[arg(long)]
    name: Option<String>,
}

impl RunDirArgs {
    fn create(&self, command: &str) -> Result<PathBuf> {
        pipeline::new_run_dir(&self.run_root, command, self.name.as_deref())
    }
}

#[derive(Args)]
struct DataArgs {
    /// Input format: jsonl, webnlg-json or dart-json.
    #[arg(long)]
    format: Option<DatasetFormat>,
    /// Fixed order length N (maximum triplets per graph).
    #[arg(long)]
    order_length: Option<usize>,
    /// POS tagger id.
    #[arg(long)]
    tagger: Option<String>,
    /// Graphs larger than N: reject or truncate.
    #[arg(long, value_parser = parse_oversize)]
    oversize: Option<OversizePolicy>,
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(f) = self.format {
            cfg.data.format = f;
        }
        if let Some(n) = self.order_length {
            cfg.corpus.order_length = n;
            cfg.arch.sorter.capacity = n;
        }
        if let Some(t) = &self.tagger {
            cfg.corpus.tagger = t.clone();
        }
        if let Some(p) = self.oversize {
            cfg.corpus.oversize = p;
        }
    }
}

fn parse_oversize(s: &str) -> std::result::Result<OversizePolicy, String> {
    match s {
        "reject" => Ok(OversizePolicy::Reject),
        "truncate" => Ok(OversizePolicy::Truncate),
        other => Err(format!("expected reject or truncate, got `{other}`")),
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// Dataset files, one sidecar each.
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Output directory for sidecars, summaries and the manifest.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

/// Training flags that override the config file.
#[derive(Args)]
struct TrainFlags {
    /// TOML run configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training split.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation split, scored with greedy BLEU-4 after each epoch.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Test split (used by ablate).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Precomputed supervision sidecar for the training split.
    #[arg(long)]
    train_sidecar: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Minimum token count for the output vocabulary.
    #[arg(long)]
    min_count: Option<usize>,
    /// Replace the architecture with the small test-size one (other flags still apply).
    #[arg(long)]
    micro: bool,
    #[arg(long)]
    epochs: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for initialization, shuffling and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Order mode for training: learned or node_level.
    #[arg(long)]
    order_mode: Option<OrderMode>,
    /// Copy-gate context window size.
    #[arg(long)]
    window: Option<usize>,
    /// POS signal in the copy gate: local or global.
    #[arg(long, value_parser = parse_scope)]
    pos_scope: Option<PosScope>,
    /// Disable the copy gate.
    #[arg(long)]
    no_cp: bool,
    /// Remove the POS signal from the copy gate.
    #[arg(long)]
    no_pos: bool,
    /// Do not fuse POS states into the word encoder.
    #[arg(long)]
    no_pos_fusion: bool,
    /// Remove the semantic context score from the copy gate.
    #[arg(long)]
    no_sc: bool,
    /// Beam width for evaluation.
    #[arg(long)]
    beam: Option<usize>,
}

fn parse_scope(s: &str) -> std::result::Result<PosScope, String> {
    match s {
        "local" => Ok(PosScope::Local),
        "global" => Ok(PosScope::Global),
        other => Err(format!("expected local or global, got `{other}`")),
    }
}

impl TrainFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.micro {
            cfg.arch = kgtext::model::ArchConfig::micro();
        }
        for (slot, v) in [
            (&mut cfg.data.train, &self.train),
            (&mut cfg.data.valid, &self.valid),
            (&mut cfg.data.test, &self.test),
            (&mut cfg.data.train_sidecar, &self.train_sidecar),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        self.data.apply(&mut cfg);
        let t = &mut cfg.train;
        if let Some(v) = self.min_count {
            cfg.corpus.min_count = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
            cfg.eval.seed = v;
        }
        if let Some(v) = self.order_mode {
            t.order_mode = v;
        }
        t.ablation.no_cp |= self.no_cp;
        t.ablation.no_pos |= self.no_pos;
        t.ablation.no_pos_fusion |= self.no_pos_fusion;
        t.ablation.no_sc |= self.no_sc;
        if let Some(v) = self.window {
            cfg.arch.copy.window = v;
        }
        if let Some(v) = self.pos_scope {
            cfg.arch.model.pos_scope = v;
        }
        if let Some(v) = self.beam {
            cfg.eval.beam.beam = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    run: RunDirArgs,
}

#[derive(Args)]
struct DecodeArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset with graphs (and references, for evaluation).
    #[arg(long)]
    input: PathBuf,
    /// Input format: jsonl, webnlg-json or dart-json.
    #[arg(long, default_value = "jsonl")]
    format: DatasetFormat,
    /// Graphs larger than the checkpoint's order length: reject or truncate.
    #[arg(long, value_parser = parse_oversize, default_value = "reject")]
    oversize: OversizePolicy,
    /// Order source: learned, node_level, random, gold or input.
    #[arg(long, default_value = "learned")]
    order_mode: OrderMode,
    /// Beam width; 1 is greedy.
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Maximum output length in tokens.
    #[arg(long, default_value_t = 60)]
    max_len: usize,
    /// Seed for random orders.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    run: RunDirArgs,
}

impl DecodeArgs {
    fn configs(&self) -> (EvalConfig, DataConfig) {
        let mut e = EvalConfig { order_mode: self.order_mode, seed: self.seed, ..EvalConfig::default() };
        e.beam.beam = self.beam;
        e.beam.max_len = self.max_len;
        (e, DataConfig { oversize: self.oversize, ..DataConfig::default() })
    }
}

#[derive(Args)]
struct AblateArgs {
    /// Suite: copy, order, window or pos_scope.
    #[arg(long)]
    suite: String,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Only run these variants (comma-separated names as in the table).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    run: RunDirArgs,
}

#[derive(Args)]
struct PlotArgs {
    #[command(subcommand)]
    chart: Chart,
}

#[derive(Subcommand)]
enum Chart {
    /// BLEU-4 and chrF++ against copy window size from a window-suite CSV.
    Window {
        /// `ablation_window.csv` from `ablate --suite window`.
        #[arg(long)]
        csv: PathBuf,
        /// Output SVG file.
        #[arg(long)]
        out: PathBuf,
    },
    /// BLEU-4 per graph-size bucket, one line per `kg_size.csv`.
    KgSize {
        /// `kg_size.csv` files from `evaluate`; each run's directory name labels its line.
        #[arg(long = "csv", required = true, num_args = 1..)]
        csvs: Vec<PathBuf>,
        /// Output SVG file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConvertArgs {
    /// Source file.
    #[arg(long)]
    input: PathBuf,
    /// Source format: webnlg-json or dart-json.
    #[arg(long)]
    format: DatasetFormat,
}

#[derive(Args)]
struct SynthArgs {
    /// Preset: default, sorting, generation or ablation.
    #[arg(long, default_value = "default")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the preset's example count.
    #[arg(long)]
    examples: Option<usize>,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => {
            let mut cfg = RunConfig::default();
            a.data.apply(&mut cfg);
            let summaries = pipeline::cmd_preprocess(&a.inputs, cfg.data.format, &cfg.corpus, &a.out_dir)?;
            for (path, s) in a.inputs.iter().zip(&summaries) {
                println!("{}: {} examples, {} rejected, copy rate {:.3}", path.display(), s.examples, s.rejected, s.copy_rate);
                let hist: Vec<String> = s.order_lengths.iter().map(|(n, c)| format!("{n}:{c}")).collect();
                println!("  order lengths {}", hist.join(" "));
                let tags: Vec<String> = s.tag_counts.iter().filter(|(_, &c)| c > 0).map(|(t, c)| format!("{t}:{c}")).collect();
                println!("  tags {}", tags.join(" "));
            }
        }
        Command::Train(a) => {
            let cfg = a.flags.resolve()?;
            let dir = a.run.create("train")?;
            let out = pipeline::cmd_train(&cfg, &dir)?;
            if let Some(e) = out.report.epochs.last() {
                println!("epoch {}: loss {:.4}, order accuracy {:.3}", e.epoch, e.losses.l_total, e.order_accuracy);
            }
            println!("{}", out.run_dir.display());
        }
        Command::Generate(a) => {
            let (e, d) = a.configs();
            let dir = a.run.create("generate")?;
            for t in pipeline::cmd_generate(&a.checkpoint, &a.input, a.format, &e, &d, &dir)? {
                println!("{}\t{}", t.graph_id, t.text);
            }
            eprintln!("{}", dir.display());
        }
        Command::Evaluate(a) => {
            let (e, d) = a.configs();
            let dir = a.run.create("evaluate")?;
            let r = pipeline::cmd_evaluate(&a.checkpoint, &a.input, a.format, &e, &d, &dir)?;
            println!("BLEU-4 {:.2}  ROUGE-L {:.2}  chrF++ {:.2}  CIDEr {:.3}  order EM {:.1}", r.bleu4, r.rouge_l, r.chrf_pp, r.cider, r.order_exact_match);
            println!("{}", dir.display());
        }
        Command::Ablate(a) => {
            let suite: Suite = a.suite.parse()?;
            let mut cfg = a.flags.resolve()?;
            if !a.seeds.is_empty() {
                cfg.ablate.seeds = a.seeds;
            }
            if !a.variants.is_empty() {
                cfg.ablate.variants = a.variants;
            }
            let dir = a.run.create(&format!("ablate-{suite}"))?;
            let report = pipeline::cmd_ablate(&cfg, suite, &dir)?;
            print!("{}", report.to_markdown());
            println!("{}", dir.display());
        }
        Command::Plot(a) => match a.chart {
            Chart::Window { csv, out } => plot::window_chart(&pipeline::read_ablation_csv(&csv)?, &out)?,
            Chart::KgSize { csvs, out } => {
                let runs = csvs
                    .iter()
                    .map(|p| Ok((label(p), pipeline::read_bucket_csv(p)?)))
                    .collect::<Result<Vec<_>>>()?;
                plot::kg_size_chart(&runs, &out)?;
            }
        },
        Command::Convert(a) => {
            let content = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
            let out = kg_data::convert_to_jsonl(&content, a.format)
                .map_err(|message| Error::Format { path: a.input.clone(), format: a.format.to_string(), message })?;
            print!("{out}");
        }
        Command::Synth(a) => {
            let mut cfg = match a.preset.as_str() {
                "default" => SynthConfig { seed: a.seed, ..SynthConfig::default() },
                "sorting" => SynthConfig::sorting_fixture(a.seed),
                "generation" => SynthConfig::generation_fixture(a.seed),
                "ablation" => SynthConfig::ablation_corpus(a.seed),
                other => return Err(Error::Config(format!("unknown preset `{other}`"))),
            };
            if let Some(n) = a.examples {
                cfg.examples = n;
            }
            let text = synthetic::to_jsonl(&synthetic::generate_records(&cfg));
            match a.out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

/// Names a CSV by its parent directory, else by its stem.
fn label(p: &Path) -> String {
    p.parent()
        .and_then(|d| d.file_name())
        .or_else(|| p.file_stem())
        .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownTagger(_) => 2,
        Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
