//! Corpus metrics over whitespace-tokenised sentences: BLEU-4, ROUGE-L, chrF++ and CIDEr-D.
//!
//! Every metric accepts several references per hypothesis. BLEU and chrF++
//! reduce to additive per-example statistics, so shards can be scored
//! independently and merged.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

const BLEU_ORDER: usize = 4;
const CHAR_ORDER: usize = 6;
const WORD_ORDER: usize = 2;
const CHRF_BETA: f64 = 2.0;
const ROUGE_BETA: f64 = 1.2;
const CIDER_N: usize = 4;
const CIDER_SIGMA: f64 = 6.0;

fn ngram_counts<'a>(words: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; BLEU_ORDER],
    pub totals: [u64; BLEU_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn of(hyp: &str, refs: &[String]) -> Self {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let mut closest: Option<usize> = None;
        let mut max_ref: Vec<HashMap<Vec<&str>, usize>> = vec![HashMap::new(); BLEU_ORDER];
        for r in refs {
            let rw: Vec<&str> = r.split_whitespace().collect();
            closest = Some(match closest {
                None => rw.len(),
                Some(c) => {
                    let (dc, dr) = (c.abs_diff(h.len()), rw.len().abs_diff(h.len()));
                    if dr < dc || (dr == dc && rw.len() < c) {
                        rw.len()
                    } else {
                        c
                    }
                }
            });
            for (n, slot) in max_ref.iter_mut().enumerate() {
                for (g, c) in ngram_counts(&rw, n + 1) {
                    let e = slot.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
        }
        let mut s = Self { hyp_len: h.len() as u64, ref_len: closest.unwrap_or(0) as u64, ..Self::default() };
        for n in 0..BLEU_ORDER {
            s.totals[n] = h.len().saturating_sub(n) as u64;
            s.matches[n] = ngram_counts(&h, n + 1).into_iter().map(|(g, c)| c.min(max_ref[n].get(&g).copied().unwrap_or(0)) as u64).sum();
        }
        s
    }

    pub fn merge(&mut self, o: &Self) {
        for n in 0..BLEU_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    fn brevity_penalty(&self) -> f64 {
        if self.hyp_len >= self.ref_len {
            1.0
        } else if self.hyp_len == 0 {
            0.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// Unsmoothed BLEU-4 in [0, 100]; any empty n-gram precision gives 0.
    pub fn score(&self) -> f64 {
        let mut log_sum = 0.0;
        for n in 0..BLEU_ORDER {
            if self.matches[n] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[n] as f64 / self.totals[n] as f64).ln();
        }
        100.0 * self.brevity_penalty() * (log_sum / BLEU_ORDER as f64).exp()
    }

    /// Add-one smoothing on orders 2..4 and effective order for short hypotheses.
    pub fn smoothed_score(&self) -> f64 {
        let mut log_sum = 0.0;
        let mut order = 0;
        for n in 0..BLEU_ORDER {
            let (m, t) = if n > 0 { (self.matches[n] + 1, self.totals[n] + 1) } else { (self.matches[n], self.totals[n]) };
            if t == 0 {
                break;
            }
            order = n + 1;
            if m == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        }
        if order == 0 {
            return 0.0;
        }
        100.0 * self.brevity_penalty() * (log_sum / order as f64).exp()
    }
}

fn check_lengths(hyps: &[String], refs: &[Vec<String>]) {
    assert_eq!(hyps.len(), refs.len(), "one reference set per hypothesis");
    assert!(refs.iter().all(|r| !r.is_empty()), "every hypothesis needs a reference");
}

pub fn bleu_stats(hyps: &[String], refs: &[Vec<String>]) -> BleuStats {
    check_lengths(hyps, refs);
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.merge(&BleuStats::of(h, r));
    }
    total
}

/// Corpus BLEU-4, no smoothing.
pub fn bleu4(hyps: &[String], refs: &[Vec<String>]) -> f64 {
    bleu_stats(hyps, refs).score()
}

/// Sentence BLEU-4 with add-one smoothing, for traces.
pub fn sentence_bleu(hyp: &str, refs: &[String]) -> f64 {
    BleuStats::of(hyp, refs).smoothed_score()
}

fn lcs(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Sentence ROUGE-L in [0, 1]: best precision and best recall over references.
pub fn rouge_l_sentence(hyp: &str, refs: &[String]) -> f64 {
    let c: Vec<&str> = hyp.split(' ').collect();
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for reference in refs {
        let t: Vec<&str> = reference.split(' ').collect();
        let l = lcs(&t, &c) as f64;
        p = p.max(l / c.len() as f64);
        r = r.max(l / t.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean sentence ROUGE-L, ×100.
pub fn rouge_l(hyps: &[String], refs: &[Vec<String>]) -> f64 {
    check_lengths(hyps, refs);
    if hyps.is_empty() {
        return 0.0;
    }
    100.0 * hyps.iter().zip(refs).map(|(h, r)| rouge_l_sentence(h, r)).sum::<f64>() / hyps.len() as f64
}

const CHRF_ORDERS: usize = CHAR_ORDER + WORD_ORDER;

/// `[hyp, ref, match]` counts for six character orders then two word orders.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChrfStats(pub [[u64; 3]; CHRF_ORDERS]);

const PUNCT: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

/// Splits one leading or trailing punctuation mark off each word.
fn chrf_words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in s.split_whitespace() {
        let chars: Vec<char> = w.chars().collect();
        if chars.len() == 1 {
            out.push(w.to_string());
        } else if PUNCT.contains(chars[chars.len() - 1]) {
            out.push(chars[..chars.len() - 1].iter().collect());
            out.push(chars[chars.len() - 1].to_string());
        } else if PUNCT.contains(chars[0]) {
            out.push(chars[0].to_string());
            out.push(chars[1..].iter().collect());
        } else {
            out.push(w.to_string());
        }
    }
    out
}

fn chrf_ngrams(s: &str) -> Vec<HashMap<String, u64>> {
    let chars: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
    let mut out = Vec::with_capacity(CHRF_ORDERS);
    for n in 1..=CHAR_ORDER {
        let mut m = HashMap::new();
        if chars.len() >= n {
            for w in chars.windows(n) {
                *m.entry(w.iter().collect::<String>()).or_insert(0) += 1;
            }
        }
        out.push(m);
    }
    let words = chrf_words(s);
    for n in 1..=WORD_ORDER {
        let mut m = HashMap::new();
        if words.len() >= n {
            for w in words.windows(n) {
                *m.entry(w.join(" ")).or_insert(0) += 1;
            }
        }
        out.push(m);
    }
    out
}

impl ChrfStats {
    /// Statistics against the reference with the best sentence-level score.
    pub fn of(hyp: &str, refs: &[String]) -> Self {
        let h = chrf_ngrams(hyp);
        let mut best = (f64::NEG_INFINITY, Self::default());
        for r in refs {
            let rg = chrf_ngrams(r);
            let mut s = Self::default();
            for k in 0..CHRF_ORDERS {
                let mut hc = 0;
                let mut mc = 0;
                for (g, &c) in &h[k] {
                    hc += c;
                    mc += c.min(rg[k].get(g).copied().unwrap_or(0));
                }
                s.0[k] = [if rg[k].is_empty() { 0 } else { hc }, rg[k].values().sum(), mc];
            }
            let f = s.score();
            if f > best.0 {
                best = (f, s);
            }
        }
        best.1
    }

    pub fn merge(&mut self, o: &Self) {
        for k in 0..CHRF_ORDERS {
            for j in 0..3 {
                self.0[k][j] += o.0[k][j];
            }
        }
    }

    /// F-beta of precision and recall averaged over the orders present on both sides.
    pub fn score(&self) -> f64 {
        let (mut p, mut r, mut eff) = (0.0, 0.0, 0usize);
        for [nh, nr, nm] in self.0 {
            if nh > 0 && nr > 0 {
                p += nm as f64 / nh as f64;
                r += nm as f64 / nr as f64;
                eff += 1;
            }
        }
        if eff == 0 {
            return 0.0;
        }
        p /= eff as f64;
        r /= eff as f64;
        if p + r == 0.0 {
            return 0.0;
        }
        let b2 = CHRF_BETA * CHRF_BETA;
        100.0 * (1.0 + b2) * p * r / (b2 * p + r)
    }
}

pub fn chrf_pp(hyps: &[String], refs: &[Vec<String>]) -> f64 {
    check_lengths(hyps, refs);
    let mut total = ChrfStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.merge(&ChrfStats::of(h, r));
    }
    total.score()
}

type Counts<'a> = HashMap<Vec<&'a str>, f64>;

fn cider_counts(s: &str) -> Counts<'_> {
    let words: Vec<&str> = s.split_whitespace().collect();
    let mut out = HashMap::new();
    for n in 1..=CIDER_N {
        for (g, c) in ngram_counts(&words, n) {
            out.insert(g, c as f64);
        }
    }
    out
}

struct TfIdf<'a> {
    vec: Vec<HashMap<Vec<&'a str>, f64>>,
    norm: [f64; CIDER_N],
    length: f64,
}

fn tfidf<'a>(counts: &Counts<'a>, df: &HashMap<Vec<&'a str>, f64>, log_docs: f64) -> TfIdf<'a> {
    let mut v = TfIdf { vec: vec![HashMap::new(); CIDER_N], norm: [0.0; CIDER_N], length: 0.0 };
    for (g, &tf) in counts {
        let n = g.len() - 1;
        let w = tf * (log_docs - df.get(g).copied().unwrap_or(0.0).max(1.0).ln());
        v.vec[n].insert(g.clone(), w);
        v.norm[n] += w * w;
        if n == 1 {
            v.length += tf;
        }
    }
    for x in &mut v.norm {
        *x = x.sqrt();
    }
    v
}

fn cider_sim(h: &TfIdf, r: &TfIdf) -> [f64; CIDER_N] {
    let delta = h.length - r.length;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut val = [0.0; CIDER_N];
    for n in 0..CIDER_N {
        for (g, &wh) in &h.vec[n] {
            let wr = r.vec[n].get(g).copied().unwrap_or(0.0);
            val[n] += wh.min(wr) * wr;
        }
        if h.norm[n] != 0.0 && r.norm[n] != 0.0 {
            val[n] /= h.norm[n] * r.norm[n];
        }
        val[n] *= penalty;
    }
    val
}

/// Per-example CIDEr-D (×10, clipped, Gaussian length penalty).
///
/// Document frequencies come from the reference sets of this corpus, so a
/// single-example corpus has zero idf everywhere and scores 0.
pub fn cider_per_example(hyps: &[String], refs: &[Vec<String>]) -> Vec<f64> {
    check_lengths(hyps, refs);
    let ref_counts: Vec<Vec<Counts>> = refs.iter().map(|rs| rs.iter().map(|r| cider_counts(r)).collect()).collect();
    let mut df: HashMap<Vec<&str>, f64> = HashMap::new();
    for rs in &ref_counts {
        let set: HashSet<&Vec<&str>> = rs.iter().flat_map(|c| c.keys()).collect();
        for g in set {
            *df.entry(g.clone()).or_insert(0.0) += 1.0;
        }
    }
    let log_docs = (refs.len() as f64).ln();
    hyps.iter()
        .zip(&ref_counts)
        .map(|(h, rs)| {
            let hv = tfidf(&cider_counts(h), &df, log_docs);
            let mut acc = [0.0; CIDER_N];
            for r in rs {
                let s = cider_sim(&hv, &tfidf(r, &df, log_docs));
                for n in 0..CIDER_N {
                    acc[n] += s[n];
                }
            }
            acc.iter().sum::<f64>() / CIDER_N as f64 / rs.len() as f64 * 10.0
        })
        .collect()
}

pub fn cider(hyps: &[String], refs: &[Vec<String>]) -> f64 {
    if hyps.is_empty() {
        return 0.0;
    }
    cider_per_example(hyps, refs).iter().sum::<f64>() / hyps.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub chrf_pp: f64,
    pub cider: f64,
}

pub fn score_corpus(hyps: &[String], refs: &[Vec<String>]) -> CorpusScores {
    CorpusScores { bleu4: bleu4(hyps, refs), rouge_l: rouge_l(hyps, refs), chrf_pp: chrf_pp(hyps, refs), cider: cider(hyps, refs) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> String {
        x.to_string()
    }

    #[test]
    fn lcs_table() {
        let a = ["a", "b", "c", "b", "d", "a", "b"];
        let b = ["b", "d", "c", "a", "b", "a"];
        assert_eq!(lcs(&a, &b), 4);
    }

    #[test]
    fn identity_scores_full_marks() {
        let h = vec![s("the cat sat on the mat"), s("a dog ran in the park today")];
        let r: Vec<Vec<String>> = h.iter().map(|x| vec![x.clone()]).collect();
        assert_eq!(bleu4(&h, &r), 100.0);
        assert_eq!(rouge_l(&h, &r), 100.0);
        assert!((chrf_pp(&h, &r) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn no_four_gram_overlap_is_zero() {
        assert_eq!(bleu4(&[s("a b c d")], &[vec![s("d c b a")]]), 0.0);
    }

    #[test]
    fn empty_hypothesis() {
        assert_eq!(chrf_pp(&[s("")], &[vec![s("abc")]]), 0.0);
        assert_eq!(bleu4(&[s("")], &[vec![s("abc")]]), 0.0);
        assert_eq!(rouge_l(&[s("")], &[vec![s("abc")]]), 0.0);
    }

    #[test]
    fn closest_reference_prefers_shorter_on_ties() {
        let st = BleuStats::of("a b c d", &[s("a b c d e f"), s("a b")]);
        assert_eq!(st.ref_len, 2);
    }

    #[test]
    fn single_example_cider_is_zero() {
        assert_eq!(cider(&[s("a b c")], &[vec![s("a b c")]]), 0.0);
    }
}
