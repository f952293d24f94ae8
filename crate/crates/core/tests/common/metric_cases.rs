//! Frozen scores produced by the reference Python scorers (sacrebleu 2.6 with
//! `tokenize="none"` and no corpus smoothing, pycocoevalcap 1.2) on small fixed corpora.

pub struct Case {
    pub name: &'static str,
    pub hyps: &'static [&'static str],
    pub refs: &'static [&'static [&'static str]],
    pub bleu: f64,
    pub chrf: f64,
    pub rouge: f64,
    pub cider: f64,
    pub sentence_bleu: f64,
}

pub const CASES: &[Case] = &[
    Case {
        name: "cat",
        hyps: &["the cat sat on the mat"],
        refs: &[&["the cat is on the mat"]],
        bleu: 0.0,
        chrf: 66.36067072084818,
        rouge: 83.33333333333334,
        cider: 0.0,
        sentence_bleu: 48.54917717073236,
    },
    Case {
        name: "multi",
        hyps: &["the cat sat on the mat today", "john works at the big company in paris"],
        refs: &[&["the cat is on the mat", "a cat sat on a mat today"], &["john is employed by a company in paris"]],
        bleu: 0.0,
        chrf: 53.67340685691768,
        rouge: 64.00255754475704,
        cider: 3.209538661989181,
        sentence_bleu: 56.234132519034915,
    },
    Case {
        name: "punct",
        hyps: &["Alan Bean , born in Wheeler , Texas ."],
        refs: &[&["Alan Bean was born in Wheeler , Texas ."]],
        bleu: 66.06328636027612,
        chrf: 81.5573082379468,
        rouge: 88.88888888888889,
        cider: 0.0,
        sentence_bleu: 70.49141756270427,
    },
    Case {
        name: "oneoff",
        hyps: &["the quick brown fox jumps over the lazy dog"],
        refs: &[&["the quick brown fox leaps over the lazy dog"]],
        bleu: 59.694917920196445,
        chrf: 82.55049093195441,
        rouge: 88.88888888888889,
        cider: 0.0,
        sentence_bleu: 65.59965570884764,
    },
    Case {
        name: "cider3",
        hyps: &["a man rides a horse on the beach", "two dogs play in the snow", "a red car parked near the house"],
        refs: &[
            &["a man riding a horse on a beach", "a person rides a horse by the sea"],
            &["two dogs playing in snow"],
            &["a red car is parked next to a house", "red car near a white house"],
        ],
        bleu: 0.0,
        chrf: 55.97320539154654,
        rouge: 72.49290659403019,
        cider: 2.566253184223964,
        sentence_bleu: 45.96613576124595,
    },
    Case {
        name: "multi_overlap",
        hyps: &["the cat sat on the mat today", "john works for a company in paris since 2010"],
        refs: &[&["the cat is on the mat", "a cat sat on the mat today ."], &["john is employed by a company in paris since 2010"]],
        bleu: 72.41577342575832,
        chrf: 71.16665591631988,
        rouge: 78.64220277393929,
        cider: 5.7047062283937295,
        sentence_bleu: 90.36020036098445,
    },
];
