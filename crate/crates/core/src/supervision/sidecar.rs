//! Preprocessed supervision files.
//!
//! Layout (JSON lines, UTF-8, `\n` line endings):
//!
//! ```text
//! {"format":"kgtext-supervision","version":1,"tagger":"lexicon","tagset":"upos12","order_length":8,"examples":2}
//! {"id":"...","graph_id":"...","tokens":[...],"order_ranks":[1,2,0,null,...],"order_listing":[2,0,1],"copy_labels":[...],"pos":[...]}
//! ...
//! ```
//!
//! `order_ranks` holds the description rank per padded slot (`null` for
//! placeholders); `order_listing` holds slot indices in description order.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{extract_gt_order, generate_copy_labels, tag_pos, OrderLabel, PosTagger};
use crate::error::{Error, Result};
use crate::kg_data::Example;

pub const SIDECAR_FORMAT: &str = "kgtext-supervision";
pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarHeader {
    pub format: String,
    pub version: u32,
    pub tagger: String,
    pub tagset: String,
    pub order_length: usize,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionRecord {
    pub id: String,
    pub graph_id: String,
    pub tokens: Vec<String>,
    pub order_ranks: Vec<Option<usize>>,
    pub order_listing: Vec<usize>,
    pub copy_labels: Vec<u8>,
    pub pos: Vec<String>,
}

impl SupervisionRecord {
    pub fn order(&self) -> Result<OrderLabel> {
        OrderLabel::new(self.order_ranks.clone())
    }
}

/// Derives all labels for one example.
pub fn supervise(example: &Example, order_length: usize, tagger: &dyn PosTagger) -> SupervisionRecord {
    let tokens = example.reference_tokens();
    let order = extract_gt_order(&example.graph, &tokens, order_length);
    let copy = generate_copy_labels(&example.graph, &tokens);
    let pos = tag_pos(&tokens, tagger, example.pos_reference.as_deref());
    SupervisionRecord {
        id: example.id.clone(),
        graph_id: example.graph.id.clone(),
        order_ranks: order.ranks().to_vec(),
        order_listing: order.listing(),
        copy_labels: copy.labels,
        pos: pos.names(),
        tokens,
    }
}

pub fn write_sidecar(path: &Path, header: &SidecarHeader, records: &[SupervisionRecord]) -> Result<()> {
    let mut buf = Vec::new();
    serde_json::to_writer(&mut buf, header)?;
    buf.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<(SidecarHeader, Vec<SupervisionRecord>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let bad = |m: String| Error::Format { path: path.to_path_buf(), format: SIDECAR_FORMAT.into(), message: m };
    let first = lines.next().ok_or_else(|| bad("empty file".into()))?.map_err(|e| Error::io(path, e))?;
    let header: SidecarHeader = serde_json::from_str(&first).map_err(|e| bad(e.to_string()))?;
    if header.format != SIDECAR_FORMAT {
        return Err(bad(format!("unexpected format tag `{}`", header.format)));
    }
    if header.version != SIDECAR_VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    let mut records = Vec::with_capacity(header.examples);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        records.push(serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 2)))?);
    }
    if records.len() != header.examples {
        return Err(bad(format!("header announces {} examples, found {}", header.examples, records.len())));
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg_data::{KnowledgeGraph, Triplet};
    use crate::supervision::LexiconTagger;

    #[test]
    fn write_then_read() {
        let kg = KnowledgeGraph::new("g", vec![Triplet::new("Alan Bean", "occupation", "Test pilot").unwrap()]).unwrap();
        let ex = Example::new("g", kg, "Alan Bean was a test pilot .", None).unwrap();
        let rec = supervise(&ex, 4, &LexiconTagger);
        assert_eq!(rec.copy_labels, [1, 1, 0, 0, 1, 1, 0]);
        let header = SidecarHeader {
            format: SIDECAR_FORMAT.into(),
            version: SIDECAR_VERSION,
            tagger: "lexicon".into(),
            tagset: super::super::TAGSET_ID.into(),
            order_length: 4,
            examples: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.sup.jsonl");
        write_sidecar(&p, &header, std::slice::from_ref(&rec)).unwrap();
        let (h, recs) = read_sidecar(&p).unwrap();
        assert_eq!(h, header);
        assert_eq!(recs, vec![rec]);
    }
}
