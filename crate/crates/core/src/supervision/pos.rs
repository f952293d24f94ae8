//! Part-of-speech tagging over a 12-tag coarse inventory.
//!
//! Taggers are pluggable through [`PosTagger`]; the built-in
//! [`LexiconTagger`] uses closed-class word lists and suffix rules, falling
//! back to `NOUN`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAGSET_ID: &str = "upos12";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Upos {
    Noun,
    Verb,
    Adj,
    Adv,
    Pron,
    Det,
    Adp,
    Num,
    Conj,
    Prt,
    Punct,
    X,
}

impl Upos {
    pub const ALL: [Upos; 12] = [
        Upos::Noun,
        Upos::Verb,
        Upos::Adj,
        Upos::Adv,
        Upos::Pron,
        Upos::Det,
        Upos::Adp,
        Upos::Num,
        Upos::Conj,
        Upos::Prt,
        Upos::Punct,
        Upos::X,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Upos> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Upos::Noun => "NOUN",
            Upos::Verb => "VERB",
            Upos::Adj => "ADJ",
            Upos::Adv => "ADV",
            Upos::Pron => "PRON",
            Upos::Det => "DET",
            Upos::Adp => "ADP",
            Upos::Num => "NUM",
            Upos::Conj => "CONJ",
            Upos::Prt => "PRT",
            Upos::Punct => "PUNCT",
            Upos::X => "X",
        }
    }

    /// Parses a coarse tag name or maps a Penn Treebank tag onto the coarse set.
    /// Unknown tags map to `X`.
    pub fn parse(tag: &str) -> Upos {
        if let Some(u) = Self::ALL.iter().find(|u| u.name() == tag) {
            return *u;
        }
        match tag {
            "." | "," | ":" | "``" | "''" | "-LRB-" | "-RRB-" | "#" | "$" => Upos::Punct,
            "CC" => Upos::Conj,
            "CD" => Upos::Num,
            "DT" | "PDT" | "WDT" => Upos::Det,
            "EX" | "PRP" | "PRP$" | "WP" | "WP$" => Upos::Pron,
            "IN" => Upos::Adp,
            "MD" => Upos::Verb,
            "POS" | "RP" | "TO" => Upos::Prt,
            t if t.starts_with("NN") => Upos::Noun,
            t if t.starts_with("VB") => Upos::Verb,
            t if t.starts_with("JJ") => Upos::Adj,
            t if t.starts_with("RB") || t == "WRB" => Upos::Adv,
            _ => Upos::X,
        }
    }

    pub fn is_noun_class(self) -> bool {
        matches!(self, Upos::Noun | Upos::Num)
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosSequence {
    pub tags: Vec<Upos>,
    pub tagset: String,
}

impl PosSequence {
    pub fn from_names(names: &[String]) -> Self {
        Self { tags: names.iter().map(|n| Upos::parse(n)).collect(), tagset: TAGSET_ID.into() }
    }

    pub fn names(&self) -> Vec<String> {
        self.tags.iter().map(|t| t.name().to_string()).collect()
    }
}

pub trait PosTagger: Send + Sync {
    fn id(&self) -> &str;
    fn tag(&self, tokens: &[String]) -> Vec<Upos>;
}

/// Lookup of taggers by id; always holds the built-in `lexicon` tagger.
pub struct TaggerRegistry {
    taggers: BTreeMap<String, Box<dyn PosTagger>>,
}

impl Default for TaggerRegistry {
    fn default() -> Self {
        let mut r = Self { taggers: BTreeMap::new() };
        r.register(Box::new(LexiconTagger));
        r
    }
}

impl TaggerRegistry {
    pub fn register(&mut self, tagger: Box<dyn PosTagger>) {
        self.taggers.insert(tagger.id().to_string(), tagger);
    }

    pub fn get(&self, id: &str) -> Result<&dyn PosTagger> {
        self.taggers.get(id).map(Box::as_ref).ok_or_else(|| Error::UnknownTagger(id.to_string()))
    }
}

/// Tags a tokenised reference. A pre-tagged sequence, when present, is passed through.
pub fn tag_pos(reference: &[String], tagger: &dyn PosTagger, pretagged: Option<&[String]>) -> PosSequence {
    match pretagged {
        Some(names) => PosSequence::from_names(names),
        None => PosSequence { tags: tagger.tag(reference), tagset: TAGSET_ID.into() },
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LexiconTagger;

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "every", "each", "some", "any", "no", "all", "both", "another",
    "either", "neither",
];
const PRONOUNS: &[&str] = &[
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us", "them", "his", "its", "their", "our", "my",
    "your", "who", "whom", "whose", "which", "what", "itself", "himself", "herself", "themselves", "there",
];
const ADPOSITIONS: &[&str] = &[
    "in", "on", "at", "of", "for", "with", "by", "from", "into", "about", "as", "after", "before", "during", "over",
    "under", "between", "through", "near", "since", "until", "within", "without", "against", "among", "via", "per",
    "across", "behind", "along", "around", "onto", "upon", "than", "like",
];
const CONJUNCTIONS: &[&str] = &["and", "or", "but", "nor", "yet", "while", "although", "because", "whereas", "if", "though"];
const PARTICLES: &[&str] = &["to", "not", "up", "off", "out", "s"];
const VERBS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does", "did", "will",
    "would", "can", "could", "shall", "should", "may", "might", "must", "born", "known", "made", "led", "run", "runs",
    "ran", "won", "grown", "written", "built", "began", "became", "become", "flew", "gave", "held", "includes",
    "plays", "serves", "leads", "belongs", "lies", "comes", "makes", "houses", "contains",
];
const ADVERBS: &[&str] = &[
    "also", "very", "too", "now", "then", "here", "still", "already", "often", "currently", "formerly", "later",
    "once", "where", "when", "how", "why", "again",
];
const ADJECTIVES: &[&str] = &[
    "new", "old", "large", "small", "big", "great", "first", "last", "main", "former", "national", "official", "high",
    "low", "long", "short", "young", "other", "same", "many", "several", "most", "full", "local", "major", "second",
    "third", "total",
];
const NUMBER_WORDS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve", "twenty",
    "hundred", "thousand", "million", "billion",
];
/// Nouns the suffix rules would otherwise misfile.
const NOUN_EXCEPTIONS: &[&str] = &[
    "capital", "hospital", "animal", "festival", "journal", "arsenal", "terminal", "canal", "general", "rival",
    "principal", "music", "logic", "republic", "clinic", "public", "island", "seed", "speed", "need", "red", "bed",
    "thing", "king", "ring", "wing", "spring", "building", "ceiling", "wedding", "meaning", "family", "italy", "july",
    "assembly", "county", "supply", "ally",
];

impl PosTagger for LexiconTagger {
    fn id(&self) -> &str {
        "lexicon"
    }

    fn tag(&self, tokens: &[String]) -> Vec<Upos> {
        tokens.iter().map(|t| tag_word(&t.to_lowercase())).collect()
    }
}

fn tag_word(w: &str) -> Upos {
    let has = |list: &[&str]| list.contains(&w);
    if !w.chars().any(char::is_alphanumeric) {
        return Upos::Punct;
    }
    if w.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') || has(NUMBER_WORDS) {
        return Upos::Num;
    }
    if has(NOUN_EXCEPTIONS) {
        return Upos::Noun;
    }
    for (list, tag) in [
        (DETERMINERS, Upos::Det),
        (PRONOUNS, Upos::Pron),
        (ADPOSITIONS, Upos::Adp),
        (CONJUNCTIONS, Upos::Conj),
        (PARTICLES, Upos::Prt),
        (VERBS, Upos::Verb),
        (ADVERBS, Upos::Adv),
        (ADJECTIVES, Upos::Adj),
    ] {
        if has(list) {
            return tag;
        }
    }
    let n = w.chars().count();
    if n > 4 && w.ends_with("ly") {
        return Upos::Adv;
    }
    if n > 4 && (w.ends_with("ed") || w.ends_with("ing")) {
        return Upos::Verb;
    }
    const ADJ_SUFFIXES: [&str; 10] = ["ous", "ful", "ive", "able", "ible", "al", "ic", "ish", "less", "ian"];
    if n > 4 && ADJ_SUFFIXES.iter().any(|s| w.ends_with(s)) {
        return Upos::Adj;
    }
    if w.chars().any(|c| c.is_ascii_digit()) {
        return Upos::Num;
    }
    Upos::Noun
}
