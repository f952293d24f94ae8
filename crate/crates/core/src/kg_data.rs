//! Knowledge graphs, examples, dataset ingestion, padding and linearisation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::supervision::{OrderLabel, Vocabulary};
use crate::text::{normalize_whitespace, tokenize};

/// Surface form used for padding slots of a [`PaddedGraph`].
pub const PLACEHOLDER: &str = "<placeholder>";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triplet {
    /// Builds a triplet from raw strings, normalising whitespace.
    pub fn new(head: &str, relation: &str, tail: &str) -> Result<Self> {
        let t = Self {
            head: normalize_whitespace(head),
            relation: normalize_whitespace(relation),
            tail: normalize_whitespace(tail),
        };
        if t.head.is_empty() || t.relation.is_empty() || t.tail.is_empty() {
            return Err(Error::InvalidRecord(format!("triplet ({head:?}, {relation:?}, {tail:?}) has an empty field")));
        }
        Ok(t)
    }

    pub fn placeholder() -> Self {
        Self { head: PLACEHOLDER.into(), relation: PLACEHOLDER.into(), tail: PLACEHOLDER.into() }
    }

    pub fn is_placeholder(&self) -> bool {
        self.head == PLACEHOLDER && self.relation == PLACEHOLDER && self.tail == PLACEHOLDER
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub id: String,
    pub triplets: Vec<Triplet>,
}

impl KnowledgeGraph {
    pub fn new(id: impl Into<String>, triplets: Vec<Triplet>) -> Result<Self> {
        let id = id.into();
        if triplets.is_empty() {
            return Err(Error::EmptyGraph(id));
        }
        Ok(Self { id, triplets })
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub graph: KnowledgeGraph,
    pub reference: String,
    /// Pre-tagged POS sequence, one tag name per reference token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_reference: Option<Vec<String>>,
}

impl Example {
    pub fn new(id: impl Into<String>, graph: KnowledgeGraph, reference: &str, pos_reference: Option<Vec<String>>) -> Result<Self> {
        let id = id.into();
        let reference = normalize_whitespace(reference);
        if reference.is_empty() {
            return Err(Error::InvalidRecord(format!("example {id}: empty reference text")));
        }
        if let Some(pos) = &pos_reference {
            let n = tokenize(&reference).len();
            if pos.len() != n {
                return Err(Error::InvalidRecord(format!(
                    "example {id}: {} POS tags for {n} reference tokens",
                    pos.len()
                )));
            }
        }
        Ok(Self { id, graph, reference, pos_reference })
    }

    pub fn reference_tokens(&self) -> Vec<String> {
        tokenize(&self.reference)
    }
}

/// What to do with graphs holding more triplets than the fixed order length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OversizePolicy {
    #[default]
    Reject,
    Truncate,
}

/// Applies `policy` to a graph that may exceed `max_len` triplets.
pub fn enforce_size(kg: &KnowledgeGraph, max_len: usize, policy: OversizePolicy) -> Result<KnowledgeGraph> {
    if kg.len() <= max_len {
        return Ok(kg.clone());
    }
    match policy {
        OversizePolicy::Reject => Err(Error::Oversize { id: kg.id.clone(), len: kg.len(), max: max_len }),
        OversizePolicy::Truncate => Ok(KnowledgeGraph { id: kg.id.clone(), triplets: kg.triplets[..max_len].to_vec() }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedGraph {
    pub triplets: Vec<Triplet>,
    pub mask: Vec<bool>,
    pub n_real: usize,
}

impl PaddedGraph {
    pub fn capacity(&self) -> usize {
        self.triplets.len()
    }

    /// The real triplets, placeholders dropped.
    pub fn real(&self) -> &[Triplet] {
        &self.triplets[..self.n_real]
    }
}

/// Pads `kg` with placeholder triplets up to exactly `n` slots.
pub fn pad_graph(kg: &KnowledgeGraph, n: usize) -> Result<PaddedGraph> {
    if kg.is_empty() {
        return Err(Error::EmptyGraph(kg.id.clone()));
    }
    if kg.len() > n {
        return Err(Error::Oversize { id: kg.id.clone(), len: kg.len(), max: n });
    }
    let mut triplets = kg.triplets.clone();
    triplets.resize(n, Triplet::placeholder());
    let mask = (0..n).map(|i| i < kg.len()).collect();
    Ok(PaddedGraph { triplets, mask, n_real: kg.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentPart {
    HeadMarker,
    Head,
    RelationMarker,
    Relation,
    TailMarker,
    Tail,
}

impl SegmentPart {
    pub fn is_marker(self) -> bool {
        matches!(self, SegmentPart::HeadMarker | SegmentPart::RelationMarker | SegmentPart::TailMarker)
    }
}

/// Where a linearised token came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenOrigin {
    pub triplet: usize,
    pub part: SegmentPart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedKG {
    /// Model input ids (vocabulary ids, or hashed out-of-vocabulary buckets).
    pub tokens: Vec<usize>,
    /// Lowercased surface token for every position.
    pub surfaces: Vec<String>,
    pub provenance: Vec<TokenOrigin>,
    pub order_used: OrderLabel,
}

impl LinearizedKG {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Positions a copy may point at: every non-marker token.
    pub fn copyable(&self, pos: usize) -> bool {
        !self.provenance[pos].part.is_marker()
    }

    /// Re-assembles `(head, relation, tail)` token strings per segment, in linearised order.
    pub fn segments(&self) -> Vec<(usize, [String; 3])> {
        let mut out: Vec<(usize, [Vec<&str>; 3])> = Vec::new();
        for (surface, origin) in self.surfaces.iter().zip(&self.provenance) {
            let slot = match origin.part {
                SegmentPart::HeadMarker => {
                    out.push((origin.triplet, [Vec::new(), Vec::new(), Vec::new()]));
                    continue;
                }
                SegmentPart::RelationMarker | SegmentPart::TailMarker => continue,
                SegmentPart::Head => 0,
                SegmentPart::Relation => 1,
                SegmentPart::Tail => 2,
            };
            if let Some(last) = out.last_mut() {
                last.1[slot].push(surface);
            }
        }
        out.into_iter().map(|(i, parts)| (i, parts.map(|p| p.join(" ")))).collect()
    }
}

/// Flattens `kg` into `<Head> h <Relation> r <Tail> t` segments in description order.
pub fn linearize(kg: &KnowledgeGraph, order: &OrderLabel, vocab: &Vocabulary) -> Result<LinearizedKG> {
    if order.n_real() != kg.len() {
        return Err(Error::InvalidOrder(format!(
            "order covers {} triplets but graph {} has {}",
            order.n_real(),
            kg.id,
            kg.len()
        )));
    }
    let listing = order.listing();
    let mut tokens = Vec::new();
    let mut surfaces = Vec::new();
    let mut provenance = Vec::new();
    let mut push = |surface: &str, id: usize, triplet: usize, part: SegmentPart| {
        tokens.push(id);
        surfaces.push(surface.to_string());
        provenance.push(TokenOrigin { triplet, part });
    };
    for &slot in &listing {
        let t = kg
            .triplets
            .get(slot)
            .filter(|t| !t.is_placeholder())
            .ok_or_else(|| Error::InvalidOrder(format!("order references placeholder slot {slot}")))?;
        let parts = [
            (crate::supervision::HEAD_MARKER, &t.head, SegmentPart::HeadMarker, SegmentPart::Head),
            (crate::supervision::RELATION_MARKER, &t.relation, SegmentPart::RelationMarker, SegmentPart::Relation),
            (crate::supervision::TAIL_MARKER, &t.tail, SegmentPart::TailMarker, SegmentPart::Tail),
        ];
        for (marker, text, marker_part, part) in parts {
            push(marker, vocab.marker_id(marker), slot, marker_part);
            for tok in tokenize(text) {
                push(&tok, vocab.input_id(&tok), slot, part);
            }
        }
    }
    Ok(LinearizedKG { tokens, surfaces, provenance, order_used: order.clone() })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    #[default]
    Jsonl,
    WebnlgJson,
    DartJson,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "webnlg-json" => Ok(Self::WebnlgJson),
            "dart-json" => Ok(Self::DartJson),
            other => Err(Error::Config(format!("unknown dataset format `{other}` (expected jsonl, webnlg-json or dart-json)"))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Jsonl => "jsonl",
            Self::WebnlgJson => "webnlg-json",
            Self::DartJson => "dart-json",
        })
    }
}

/// A per-record schema violation. `location` is a 1-based line number for
/// JSON-lines input and a 1-based record index for JSON documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub location: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedDataset {
    pub examples: Vec<Example>,
    pub errors: Vec<RecordError>,
}

/// Canonical record layout, one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub triples: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<String>>,
}

/// Reads a dataset file. Unreadable or structurally broken files are fatal;
/// individual bad records are collected in [`ParsedDataset::errors`].
pub fn parse_dataset(path: &Path, format: DatasetFormat) -> Result<ParsedDataset> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = to_canonical(&content, format).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        format: format.to_string(),
        message,
    })?;
    let mut out = ParsedDataset::default();
    for (location, record) in records {
        let record = match record {
            Ok(r) => r,
            Err(message) => {
                out.errors.push(RecordError { location, message });
                continue;
            }
        };
        match record_examples(&record, location) {
            Ok(mut exs) => out.examples.append(&mut exs),
            Err(e) => out.errors.push(RecordError { location, message: e.to_string() }),
        }
    }
    Ok(out)
}

/// Rewrites any supported format as canonical JSON lines (one record per graph).
pub fn convert_to_jsonl(content: &str, format: DatasetFormat) -> std::result::Result<String, String> {
    let mut out = String::new();
    for (location, rec) in to_canonical(content, format)? {
        let rec = rec.map_err(|m| format!("record {location}: {m}"))?;
        out.push_str(&serde_json::to_string(&rec).map_err(|e| e.to_string())?);
        out.push('\n');
    }
    Ok(out)
}

type CanonicalRecords = Vec<(usize, std::result::Result<CanonicalRecord, String>)>;

fn to_canonical(content: &str, format: DatasetFormat) -> std::result::Result<CanonicalRecords, String> {
    match format {
        DatasetFormat::Jsonl => Ok(content
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, serde_json::from_str::<CanonicalRecord>(l).map_err(|e| e.to_string())))
            .collect()),
        DatasetFormat::WebnlgJson => {
            let v: Value = serde_json::from_str(content).map_err(|e| e.to_string())?;
            let entries = v.get("entries").and_then(Value::as_array).ok_or("missing top-level `entries` array")?;
            Ok(entries.iter().enumerate().map(|(i, e)| (i + 1, webnlg_record(e))).collect())
        }
        DatasetFormat::DartJson => {
            let v: Value = serde_json::from_str(content).map_err(|e| e.to_string())?;
            let entries = v.as_array().ok_or("expected a top-level array")?;
            Ok(entries.iter().enumerate().map(|(i, e)| (i + 1, dart_record(e))).collect())
        }
    }
}

fn webnlg_entity(s: &str) -> String {
    s.trim_matches('"').replace('_', " ")
}

fn webnlg_record(entry: &Value) -> std::result::Result<CanonicalRecord, String> {
    // Each entry is a single-key object {"<eid>": {...}}.
    let (eid, body) = entry
        .as_object()
        .and_then(|o| o.iter().next())
        .ok_or("entry is not a single-key object")?;
    let triples = body
        .get("modifiedtripleset")
        .and_then(Value::as_array)
        .ok_or("missing `modifiedtripleset`")?
        .iter()
        .map(|t| {
            let f = |k: &str| t.get(k).and_then(Value::as_str).map(webnlg_entity).ok_or(format!("triple missing `{k}`"));
            Ok(vec![f("subject")?, f("property")?, f("object")?])
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let texts = body
        .get("lexicalisations")
        .and_then(Value::as_array)
        .ok_or("missing `lexicalisations`")?
        .iter()
        .filter_map(|l| l.get("lex").and_then(Value::as_str).map(str::to_string))
        .collect();
    Ok(CanonicalRecord { id: Some(format!("webnlg-{eid}")), triples, text: None, texts, pos: None })
}

fn dart_record(entry: &Value) -> std::result::Result<CanonicalRecord, String> {
    let triples = entry
        .get("tripleset")
        .and_then(Value::as_array)
        .ok_or("missing `tripleset`")?
        .iter()
        .map(|t| {
            t.as_array()
                .map(|a| a.iter().map(|x| x.as_str().unwrap_or_default().to_string()).collect::<Vec<_>>())
                .ok_or_else(|| "triple is not an array".to_string())
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let texts = entry
        .get("annotations")
        .and_then(Value::as_array)
        .ok_or("missing `annotations`")?
        .iter()
        .filter_map(|a| a.get("text").and_then(Value::as_str).map(str::to_string))
        .collect();
    Ok(CanonicalRecord { id: None, triples, text: None, texts, pos: None })
}

fn record_examples(rec: &CanonicalRecord, location: usize) -> Result<Vec<Example>> {
    let gid = rec.id.clone().unwrap_or_else(|| format!("g{location}"));
    let triplets = rec
        .triples
        .iter()
        .map(|t| match t.as_slice() {
            [h, r, tl] => Triplet::new(h, r, tl),
            _ => Err(Error::InvalidRecord(format!("triple with {} fields (expected 3)", t.len()))),
        })
        .collect::<Result<Vec<_>>>()?;
    let graph = KnowledgeGraph::new(gid.clone(), triplets)?;
    let mut texts: Vec<&String> = rec.text.iter().collect();
    texts.extend(&rec.texts);
    if texts.is_empty() {
        return Err(Error::InvalidRecord(format!("graph {gid}: no reference text")));
    }
    if rec.pos.is_some() && texts.len() > 1 {
        return Err(Error::InvalidRecord(format!("graph {gid}: `pos` given with multiple references")));
    }
    let single = texts.len() == 1;
    texts
        .into_iter()
        .enumerate()
        .map(|(k, text)| {
            let id = if single { gid.clone() } else { format!("{gid}#{k}") };
            Example::new(id, graph.clone(), text, rec.pos.clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supervision::build_vocab;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    pub(crate) fn awh_graph() -> KnowledgeGraph {
        KnowledgeGraph::new(
            "awh",
            vec![
                Triplet::new("AWH Engineering College", "COUNTRY", "India").unwrap(),
                Triplet::new("AWH Engineering College", "ESTABLISHED", "2001").unwrap(),
                Triplet::new("AWH Engineering College", "CITY", "Kuttikkattoor").unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn one_record_file_yields_one_example() {
        let f = write_tmp("{\"triples\":[[\"A\",\"REL\",\"B\"]],\"text\":\"A rel B .\"}\n");
        let ds = parse_dataset(f.path(), DatasetFormat::Jsonl).unwrap();
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.examples[0].graph.len(), 1);
        assert!(ds.errors.is_empty());
    }

    #[test]
    fn awh_record_has_three_triplets() {
        let f = write_tmp(concat!(
            r#"{"id":"awh","triples":[["AWH Engineering College","COUNTRY","India"],"#,
            r#"["AWH Engineering College","ESTABLISHED","2001"],["AWH Engineering College","CITY","Kuttikkattoor"]],"#,
            r#""text":"AWH Engineering College in Kuttikkattoor , India was established in 2001 ."}"#,
            "\n"
        ));
        let ds = parse_dataset(f.path(), DatasetFormat::Jsonl).unwrap();
        assert_eq!(ds.examples[0].graph.len(), 3);
    }

    #[test]
    fn empty_text_is_a_recorded_schema_error() {
        let f = write_tmp("{\"triples\":[[\"A\",\"R\",\"B\"]],\"text\":\"A r B\"}\n{\"triples\":[[\"A\",\"R\",\"B\"]],\"text\":\"  \"}\nnot json\n");
        let ds = parse_dataset(f.path(), DatasetFormat::Jsonl).unwrap();
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.errors.iter().map(|e| e.location).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn missing_file_is_fatal() {
        assert!(matches!(parse_dataset(Path::new("/nonexistent/x.jsonl"), DatasetFormat::Jsonl), Err(Error::Io { .. })));
    }

    #[test]
    fn webnlg_and_dart_converters() {
        let web = r#"{"entries":[{"1":{"lexicalisations":[{"lex":"Aarhus is in Denmark.","comment":"good"},{"lex":"Aarhus, Denmark."}],
            "modifiedtripleset":[{"subject":"Aarhus","property":"country","object":"Denmark"}]}}]}"#;
        let f = write_tmp(web);
        let ds = parse_dataset(f.path(), DatasetFormat::WebnlgJson).unwrap();
        assert_eq!(ds.examples.len(), 2);
        assert_eq!(ds.examples[1].id, "webnlg-1#1");
        assert_eq!(ds.examples[0].graph.id, "webnlg-1");

        let dart = r#"[{"tripleset":[["Mars_Hill_College","joined","1973"]],"annotations":[{"source":"x","text":"Mars Hill College joined in 1973."}]}]"#;
        let f = write_tmp(dart);
        let ds = parse_dataset(f.path(), DatasetFormat::DartJson).unwrap();
        assert_eq!(ds.examples[0].graph.triplets[0].head, "Mars_Hill_College");
        let jsonl = convert_to_jsonl(dart, DatasetFormat::DartJson).unwrap();
        assert_eq!(jsonl.lines().count(), 1);
    }

    #[test]
    fn pad_graph_masks() {
        let pg = pad_graph(&awh_graph(), 8).unwrap();
        assert_eq!(pg.mask, [true, true, true, false, false, false, false, false]);
        assert!(pg.triplets[3..].iter().all(Triplet::is_placeholder));
        let full = pad_graph(&awh_graph(), 3).unwrap();
        assert!(full.mask.iter().all(|&m| m));
        assert!(matches!(pad_graph(&awh_graph(), 2), Err(Error::Oversize { .. })));
        assert!(KnowledgeGraph::new("e", vec![]).is_err());
    }

    #[test]
    fn truncate_policy() {
        let kg = enforce_size(&awh_graph(), 2, OversizePolicy::Truncate).unwrap();
        assert_eq!(kg.len(), 2);
        assert!(enforce_size(&awh_graph(), 2, OversizePolicy::Reject).is_err());
    }

    #[test]
    fn linearize_awh_in_described_order() {
        let kg = awh_graph();
        let vocab = build_vocab(&[vec!["awh".to_string()]], 1, 100).unwrap();
        let order = OrderLabel::from_listing(&[2, 0, 1], 8).unwrap();
        let lin = linearize(&kg, &order, &vocab).unwrap();
        let head: Vec<&str> = lin.surfaces.iter().take(9).map(String::as_str).collect();
        assert_eq!(head, ["<Head>", "awh", "engineering", "college", "<Relation>", "city", "<Tail>", "kuttikkattoor", "<Head>"]);
        assert_eq!(lin.provenance[0].triplet, 2);
        assert_eq!(lin.segments().len(), 3);
    }

    #[test]
    fn linearize_single_triplet() {
        let kg = KnowledgeGraph::new("one", vec![Triplet::new("A", "r", "B").unwrap()]).unwrap();
        let vocab = build_vocab(&[vec!["a".to_string()]], 1, 100).unwrap();
        let lin = linearize(&kg, &OrderLabel::identity(1, 4), &vocab).unwrap();
        assert_eq!(lin.surfaces, ["<Head>", "a", "<Relation>", "r", "<Tail>", "b"]);
        assert_eq!(lin.tokens[0], vocab.marker_id(crate::supervision::HEAD_MARKER));
    }

    #[test]
    fn linearize_rejects_mismatched_order() {
        let vocab = build_vocab(&[vec!["a".to_string()]], 1, 100).unwrap();
        assert!(matches!(linearize(&awh_graph(), &OrderLabel::identity(4, 8), &vocab), Err(Error::InvalidOrder(_))));
    }
}
