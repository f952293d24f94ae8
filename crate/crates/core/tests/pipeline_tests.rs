//! End-to-end runs of the library commands on small files.

mod common;

use std::path::{Path, PathBuf};

use kgtext::corpus::DataConfig;
use kgtext::error::Error;
use kgtext::evaluate::EvalConfig;
use kgtext::kg_data::{CanonicalRecord, DatasetFormat};
use kgtext::model::ArchConfig;
use kgtext::pipeline::{self, RunConfig, Suite, MANIFEST_FILE};
use kgtext::sorting::OrderMode;
use kgtext::supervision::read_sidecar;
use kgtext::synthetic::{generate_records, to_jsonl, SynthConfig};

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn awh_jsonl() -> String {
    let rec = CanonicalRecord {
        id: Some("awh".into()),
        triples: common::awh_graph().triplets.iter().map(|t| vec![t.head.clone(), t.relation.clone(), t.tail.clone()]).collect(),
        text: Some(common::AWH_TEXT.into()),
        texts: Vec::new(),
        pos: None,
    };
    to_jsonl(&[rec])
}

fn manifests_under(dir: &Path) -> usize {
    std::fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().file_name() == MANIFEST_FILE).count()
}

#[test]
fn preprocess_writes_the_awh_supervision() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "awh.jsonl", &awh_jsonl());
    let out = dir.path().join("out");
    let summaries = pipeline::cmd_preprocess(&[input], DatasetFormat::Jsonl, &DataConfig::default(), &out).unwrap();
    assert_eq!(summaries[0].examples, 1);
    assert_eq!(summaries[0].rejected, 0);
    let (header, records) = read_sidecar(&out.join("awh.supervision.jsonl")).unwrap();
    assert_eq!(header.examples, 1);
    let r = &records[0];
    assert_eq!(r.order_listing, vec![2, 0, 1]);
    assert_eq!(r.order_ranks[..3], [Some(1), Some(2), Some(0)]);
    assert!(r.order_ranks[3..].iter().all(Option::is_none));
    assert_eq!(r.copy_labels, vec![1, 1, 1, 0, 1, 0, 1, 0, 0, 0, 1, 0]);
    assert_eq!(manifests_under(&out), 1);
    let m = pipeline::read_manifest(&out).unwrap();
    assert_eq!(m.command, "preprocess");
    assert_eq!(m.inputs.len(), 1);
    assert_eq!(m.outputs.len(), 2);
}

#[test]
fn preprocess_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "syn.jsonl", &to_jsonl(&generate_records(&SynthConfig { examples: 40, ..SynthConfig::default() })));
    let run = |name: &str| {
        let out = dir.path().join(name);
        pipeline::cmd_preprocess(std::slice::from_ref(&input), DatasetFormat::Jsonl, &DataConfig::default(), &out).unwrap();
        (std::fs::read(out.join("syn.supervision.jsonl")).unwrap(), std::fs::read(out.join("syn.summary.json")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn empty_and_unreadable_inputs_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.jsonl", "");
    let out = dir.path().join("out");
    assert!(matches!(pipeline::cmd_preprocess(&[empty.clone()], DatasetFormat::Jsonl, &DataConfig::default(), &out), Err(Error::EmptyCorpus)));
    assert!(pipeline::load_examples(&empty, DatasetFormat::Jsonl, &DataConfig::default()).is_err());
    let missing = dir.path().join("nope.jsonl");
    assert!(matches!(pipeline::cmd_preprocess(&[missing], DatasetFormat::Jsonl, &DataConfig::default(), &out), Err(Error::Io { .. })));
    let bad_tagger = DataConfig { tagger: "nltk".into(), ..DataConfig::default() };
    assert!(matches!(pipeline::cmd_preprocess(&[empty], DatasetFormat::Jsonl, &bad_tagger, &out), Err(Error::UnknownTagger(_))));
}

#[test]
fn run_dirs_never_collide() {
    let dir = tempfile::tempdir().unwrap();
    let a = pipeline::new_run_dir(dir.path(), "train", Some("x")).unwrap();
    let b = pipeline::new_run_dir(dir.path(), "train", Some("x")).unwrap();
    assert_ne!(a, b);
    assert!(a.is_dir() && b.is_dir());
}

fn small_config(dir: &Path) -> RunConfig {
    let train = write(dir, "train.jsonl", &to_jsonl(&generate_records(&SynthConfig::generation_fixture(0))));
    let mut cfg = RunConfig::default();
    cfg.arch = ArchConfig::micro();
    cfg.corpus.order_length = cfg.arch.sorter.capacity;
    cfg.data.train = Some(train.clone());
    cfg.data.test = Some(train);
    cfg.train.epochs = 4;
    cfg.train.lr = 1e-3;
    cfg.eval.beam.beam = 2;
    cfg.eval.beam.max_len = 24;
    cfg
}

#[test]
fn train_then_evaluate_matches_the_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = pipeline::new_run_dir(dir.path(), "train", Some("t")).unwrap();
    let outcome = pipeline::cmd_train(&cfg, &run).unwrap();
    assert_eq!(outcome.report.epochs.len(), 4);
    for f in ["config.toml", "train_log.jsonl", "checkpoint.json", MANIFEST_FILE] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert_eq!(manifests_under(&run), 1);
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains("\"kind\":\"epoch\"")).count(), 4);
    let saved = RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(saved, cfg);

    let eval_dir = pipeline::new_run_dir(dir.path(), "evaluate", Some("e")).unwrap();
    let ec = EvalConfig { order_mode: OrderMode::Gold, ..cfg.eval };
    let report =
        pipeline::cmd_evaluate(&run.join("checkpoint.json"), cfg.data.test.as_ref().unwrap(), DatasetFormat::Jsonl, &ec, &cfg.corpus, &eval_dir).unwrap();
    assert_eq!(report.graphs, 30);
    assert_eq!(report.order_exact_match, 100.0);
    for f in ["metrics.json", "per_example.tsv", "kg_size.csv", MANIFEST_FILE] {
        assert!(eval_dir.join(f).is_file(), "missing {f}");
    }
    assert_eq!(pipeline::read_bucket_csv(&eval_dir.join("kg_size.csv")).unwrap(), report.buckets);
    common::golden("metrics_report_gold", &report);
}

#[test]
fn generate_writes_one_line_per_graph() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = pipeline::new_run_dir(dir.path(), "train", None).unwrap();
    pipeline::cmd_train(&RunConfig { train: kgtext::training::TrainConfig { epochs: 1, ..cfg.train.clone() }, ..cfg.clone() }, &run).unwrap();
    let out = pipeline::new_run_dir(dir.path(), "generate", None).unwrap();
    let traces = pipeline::cmd_generate(&run.join("checkpoint.json"), cfg.data.test.as_ref().unwrap(), DatasetFormat::Jsonl, &cfg.eval, &cfg.corpus, &out).unwrap();
    assert_eq!(traces.len(), 30);
    assert_eq!(std::fs::read_to_string(out.join("hypotheses.txt")).unwrap().lines().count(), 30);
    assert_eq!(std::fs::read_to_string(out.join("traces.jsonl")).unwrap().lines().count(), 30);
}

#[test]
fn ablate_runs_every_variant_for_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.train.epochs = 1;
    cfg.eval.beam.beam = 1;
    cfg.ablate.seeds = vec![3, 4];
    cfg.ablate.variants = vec!["GT".into(), "RS".into(), "NS".into()];
    let run = pipeline::new_run_dir(dir.path(), "ablate", None).unwrap();
    let report = pipeline::cmd_ablate(&cfg, Suite::Order, &run).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert_eq!(report.means.len(), 3);
    assert!(report.rows.iter().filter(|r| r.variant == "GT").all(|r| r.order_exact_match == 100.0));
    let back = pipeline::read_ablation_csv(&run.join("ablation_order.csv")).unwrap();
    assert_eq!(back.rows, report.rows);
    assert_eq!(manifests_under(&run), 1);

    cfg.ablate.variants = vec!["bogus".into()];
    let run = pipeline::new_run_dir(dir.path(), "ablate", None).unwrap();
    assert!(matches!(pipeline::cmd_ablate(&cfg, Suite::Order, &run), Err(Error::Config(_))));
}

#[test]
fn config_files_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[data]\ntrain = \"data/train.jsonl\"\n\n[train]\nepochs = 3\n\n[copy]\nwindow = 2\n";
    let path = write(dir.path(), "run.toml", text);
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.data.train, Some(dir.path().join("data/train.jsonl")));
    assert_eq!(cfg.train.epochs, 3);
    assert_eq!(cfg.arch.copy.window, 2);
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    let bad = RunConfig { corpus: DataConfig { order_length: 3, ..DataConfig::default() }, ..RunConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    assert!(RunConfig::from_toml("[train]\nepochs = \"many\"\n").is_err());
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 2);
    let default = RunConfig::load(&dir.join("default.toml")).unwrap();
    assert_eq!(default, RunConfig::default());
}
