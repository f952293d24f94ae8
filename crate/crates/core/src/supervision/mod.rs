//! Training labels derived from (graph, reference) pairs: description
//! order, 0-1 copy labels, POS sequences, plus the shared vocabulary.

mod copy_labels;
mod order;
mod pos;
mod sidecar;
mod vocab;

pub use copy_labels::{find_mentions, generate_copy_labels, CopyLabelSequence, MentionSpan};
pub use order::{extract_gt_order, OrderLabel};
pub use pos::{tag_pos, LexiconTagger, PosSequence, PosTagger, TaggerRegistry, Upos, TAGSET_ID};
pub use sidecar::{read_sidecar, supervise, write_sidecar, SidecarHeader, SupervisionRecord, SIDECAR_FORMAT, SIDECAR_VERSION};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, HEAD_MARKER, PAD, PLACEHOLDER_ID, RELATION_MARKER, SPECIALS, TAIL_MARKER, UNK};
