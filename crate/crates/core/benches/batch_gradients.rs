//! Batch gradient computation: rayon schedule against the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kgtext::corpus::{self, DataConfig};
use kgtext::model::{Ablation, ArchConfig, Model, Prepared};
use kgtext::parallel::Schedule;
use kgtext::supervision::LexiconTagger;
use kgtext::synthetic::{generate_examples, SynthConfig};
use kgtext::training::{batch_gradients, TrainConfig};

fn setup(n: usize) -> (Model, Vec<Prepared>) {
    let exs = generate_examples(&SynthConfig { examples: n, ..SynthConfig::default() }).unwrap();
    let arch = ArchConfig::micro();
    let sups = corpus::supervise_all(&exs, arch.sorter.capacity, &LexiconTagger);
    let vocab = corpus::vocab_from(&sups, &DataConfig::default()).unwrap();
    let m = Model::new(arch, Ablation::default(), vocab, 0).unwrap();
    let data = corpus::prepare_all(&exs, &sups, &m).unwrap();
    (m, data)
}

fn bench(c: &mut Criterion) {
    let (m, data) = setup(32);
    let cfg = TrainConfig::default();
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(20);
    for size in [8usize, 32] {
        let batch: Vec<&Prepared> = data.iter().take(size).collect();
        for (name, schedule) in [("rayon", Schedule::Auto), ("sequential", Schedule::Sequential)] {
            group.bench_with_input(BenchmarkId::new(name, size), &batch, |b, batch| b.iter(|| batch_gradients(&m, batch, &cfg, None, schedule)));
        }
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
