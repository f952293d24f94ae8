use std::fmt;

use serde::{Deserialize, Serialize};

use super::copy_labels::find_mentions;
use crate::error::{Error, Result};
use crate::kg_data::KnowledgeGraph;
use crate::text::tokenize;

/// Description order of a padded graph.
///
/// Two views of the same permutation are exposed:
/// * `ranks()`: entry `i` is the description rank of slot `i`, `None` for
///   placeholder slots (the pad class);
/// * `listing()`: slot indices in the order they are described, which is
///   the convention used in reports (`2,0,1` means slot 2 is described first).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderLabel {
    ranks: Vec<Option<usize>>,
}

impl OrderLabel {
    /// Validates per-slot ranks: real slots first, forming a permutation.
    pub fn new(ranks: Vec<Option<usize>>) -> Result<Self> {
        let n_real = ranks.iter().take_while(|r| r.is_some()).count();
        if ranks[n_real..].iter().any(Option::is_some) {
            return Err(Error::InvalidOrder("real slot after a placeholder slot".into()));
        }
        let mut seen = vec![false; n_real];
        for r in ranks.iter().flatten() {
            if *r >= n_real || std::mem::replace(&mut seen[*r], true) {
                return Err(Error::InvalidOrder(format!("ranks {ranks:?} are not a permutation of 0..{n_real}")));
            }
        }
        Ok(Self { ranks })
    }

    pub fn from_ranks(real_ranks: &[usize], capacity: usize) -> Result<Self> {
        if real_ranks.len() > capacity {
            return Err(Error::InvalidOrder(format!("{} ranks exceed capacity {capacity}", real_ranks.len())));
        }
        let mut ranks: Vec<Option<usize>> = real_ranks.iter().map(|&r| Some(r)).collect();
        ranks.resize(capacity, None);
        Self::new(ranks)
    }

    pub fn from_listing(listing: &[usize], capacity: usize) -> Result<Self> {
        let mut ranks = vec![usize::MAX; listing.len()];
        for (rank, &slot) in listing.iter().enumerate() {
            if slot >= listing.len() {
                return Err(Error::InvalidOrder(format!("listing {listing:?} references slot {slot}")));
            }
            ranks[slot] = rank;
        }
        if ranks.contains(&usize::MAX) {
            return Err(Error::InvalidOrder(format!("listing {listing:?} repeats a slot")));
        }
        Self::from_ranks(&ranks, capacity)
    }

    pub fn identity(n_real: usize, capacity: usize) -> Self {
        let ranks: Vec<usize> = (0..n_real).collect();
        Self::from_ranks(&ranks, capacity.max(n_real)).expect("identity is a permutation")
    }

    pub fn ranks(&self) -> &[Option<usize>] {
        &self.ranks
    }

    /// Ranks of the real slots only.
    pub fn real_ranks(&self) -> Vec<usize> {
        self.ranks.iter().flatten().copied().collect()
    }

    pub fn listing(&self) -> Vec<usize> {
        let real = self.real_ranks();
        let mut listing = vec![0; real.len()];
        for (slot, &rank) in real.iter().enumerate() {
            listing[rank] = slot;
        }
        listing
    }

    pub fn n_real(&self) -> usize {
        self.ranks.iter().filter(|r| r.is_some()).count()
    }

    pub fn capacity(&self) -> usize {
        self.ranks.len()
    }
}

impl fmt::Display for OrderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.listing().iter().map(usize::to_string).collect();
        f.write_str(&s.join(","))
    }
}

/// Ground-truth description order of `kg` in the tokenised `reference`.
///
/// A triplet counts as described at the position where the last of its
/// mentioned entities first appears, i.e. once both head and tail have been
/// seen (or the one that is mentioned at all). Ties keep input order;
/// triplets with no mention follow all mentioned ones, in input order.
pub fn extract_gt_order(kg: &KnowledgeGraph, reference: &[String], capacity: usize) -> OrderLabel {
    let first = |surface: &str| find_mentions(&tokenize(surface), reference).first().copied();
    let keys: Vec<Option<usize>> = kg
        .triplets
        .iter()
        .map(|t| match (first(&t.head), first(&t.tail)) {
            (Some(h), Some(tl)) => Some(h.max(tl)),
            (a, b) => a.or(b),
        })
        .collect();
    let mut slots: Vec<usize> = (0..kg.len()).collect();
    // None sorts after every Some because of the (is_none, key) pairing.
    slots.sort_by_key(|&i| (keys[i].is_none(), keys[i], i));
    OrderLabel::from_listing(&slots, capacity.max(kg.len())).expect("sorted slots form a permutation")
}
