//! Naive reference recommenders: uniform random and most-frequent-successor
//! (bigram), used for calibration and for the recommendation-overlap metric.

use std::collections::BTreeMap;

use crate::corpus::{reconstruct_sessions, SplitExample};
use crate::error::{Error, Result};
use crate::metrics::RecommendationList;
use crate::numeric::Rng;

/// Successor-frequency table with a popularity fallback ranking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BigramTable {
    successors: BTreeMap<usize, BTreeMap<usize, u64>>,
    /// Every train item, most popular first (ties: ascending index).
    popularity_rank: Vec<usize>,
}

impl BigramTable {
    pub fn successor_counts(&self, item: usize) -> Option<&BTreeMap<usize, u64>> {
        self.successors.get(&item)
    }

    pub fn popularity_rank(&self) -> &[usize] {
        &self.popularity_rank
    }
}

/// K distinct uniform item indices.
pub fn random_recommend(n_items: usize, k: usize, rng: &mut Rng) -> Result<RecommendationList> {
    if k > n_items {
        return Err(Error::InvalidArgument(format!(
            "cannot recommend {k} distinct items out of {n_items}"
        )));
    }
    Ok(RecommendationList::new(0, rng.sample_distinct(n_items, k)))
}

/// Count successor transitions over the full train sessions — reconstructed
/// from the examples so each source transition is counted exactly once, not
/// once per prefix that repeats it.
pub fn build_bigram(train: &[SplitExample]) -> Result<BigramTable> {
    if train.is_empty() {
        return Err(Error::Dataset("bigram table needs a non-empty train split".into()));
    }
    let mut successors: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
    let mut occurrences: BTreeMap<usize, u64> = BTreeMap::new();
    for session in reconstruct_sessions(train) {
        for window in session.windows(2) {
            *successors
                .entry(window[0])
                .or_default()
                .entry(window[1])
                .or_insert(0) += 1;
        }
        for &item in &session {
            *occurrences.entry(item).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(usize, u64)> = occurrences.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(BigramTable {
        successors,
        popularity_rank: ranked.into_iter().map(|(item, _)| item).collect(),
    })
}

/// Successors of `last_item` by descending count (ties: ascending index),
/// padded to K from the popularity ranking without duplicates.
pub fn bigram_recommend(table: &BigramTable, last_item: usize, k: usize) -> RecommendationList {
    let mut items: Vec<usize> = match table.successors.get(&last_item) {
        Some(counts) => {
            let mut ranked: Vec<(usize, u64)> = counts.iter().map(|(&j, &c)| (j, c)).collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.into_iter().map(|(j, _)| j).collect()
        }
        None => Vec::new(),
    };
    items.truncate(k);
    for &p in &table.popularity_rank {
        if items.len() == k {
            break;
        }
        if !items.contains(&p) {
            items.push(p);
        }
    }
    RecommendationList::new(0, items)
}
