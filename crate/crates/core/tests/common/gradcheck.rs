//! Central finite differences against the tape's gradients on a d=4 model.

use kgtext::autodiff::Tape;
use kgtext::kg_data::{Example, KnowledgeGraph, Triplet};
use kgtext::model::{self, Ablation, Model, Prepared};
use kgtext::params::ParamId;
use kgtext::sorting::OrderMode;
use kgtext::training::LossWeights;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub enum Which {
    Token,
    Pos,
    Sort,
    Copy,
    Total,
}

pub fn loss(m: &Model, ex: &Prepared, which: Which, mode: OrderMode) -> (f64, kgtext::params::Gradients) {
    let mut t = Tape::new(&m.params);
    let l = model::example_losses(&mut t, m, ex, mode, None);
    let w = LossWeights::default();
    let v = match which {
        Which::Token => l.token,
        Which::Pos => l.pos,
        Which::Sort => l.sort,
        Which::Copy => l.copy,
        Which::Total => {
            let p = t.scale(l.pos, w.pos);
            let s = t.scale(l.sort, w.sort);
            let c = t.scale(l.copy, w.copy);
            let a = t.add(l.token, p);
            let b = t.add(a, s);
            t.add(b, c)
        }
    };
    let value = t.value(v).item();
    (value, t.backward(v))
}

pub fn fixture() -> (Model, Prepared) {
    let graph = KnowledgeGraph::new(
        "g",
        vec![Triplet::new("Mira Stone", "birth place", "Lund").unwrap(), Triplet::new("Mira Stone", "occupation", "painter").unwrap()],
    )
    .unwrap();
    let ex = Example::new("g", graph, "Mira Stone was born in Lund and worked as a painter .", None).unwrap();
    let (m, data) = super::model_for(&[ex], super::nano_arch(), Ablation::default(), 3);
    (m, data.into_iter().next().unwrap())
}

/// Returns (checked, passed) over sampled coordinates with a non-zero analytic gradient.
pub fn check(which: Which, mode: OrderMode, samples: usize) -> (usize, usize) {
    let (mut m, ex) = fixture();
    let (_, grads) = loss(&m, &ex, which, mode);
    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    for id in m.params.ids() {
        if let Some(g) = grads.get(id) {
            coords.extend((0..g.data.len()).filter(|&i| g.data[i] != 0.0).map(|i| (id, i)));
        }
    }
    assert!(!coords.is_empty(), "{which:?} has no gradient");
    coords.shuffle(&mut ChaCha8Rng::seed_from_u64(which as u64));
    coords.truncate(samples);
    let mut passed = 0;
    for &(id, i) in &coords {
        let analytic = grads.get(id).unwrap().data[i];
        let orig = m.params.get(id).data[i];
        m.params.get_mut(id).data[i] = orig + EPS;
        let up = loss(&m, &ex, which, mode).0;
        m.params.get_mut(id).data[i] = orig - EPS;
        let down = loss(&m, &ex, which, mode).0;
        m.params.get_mut(id).data[i] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel < TOL {
            passed += 1;
        } else {
            eprintln!("{which:?} {}[{i}]: analytic {analytic:e} numeric {numeric:e}", m.params.name(id));
        }
    }
    (coords.len(), passed)
}

