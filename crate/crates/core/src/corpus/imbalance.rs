//! Popularity-imbalance modification: delete a random fraction of the most
//! popular items before preprocessing.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::RawEvent;
use crate::error::{Error, Result};
use crate::numeric::rng::Rng;

/// Partition `n` ranked things into four contiguous quartiles; remainders go
/// to the earlier (more popular) quartiles. Used both here and by the
/// quartile-representation metric so the two always agree.
pub fn quartile_sizes(n: usize) -> [usize; 4] {
    let base = n / 4;
    let rem = n % 4;
    [
        base + usize::from(rem > 0),
        base + usize::from(rem > 1),
        base + usize::from(rem > 2),
        base,
    ]
}

/// Items ranked by descending event count, ties broken by ascending raw key.
fn popularity_ranking(events: &[RawEvent]) -> Vec<(&str, u64)> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for event in events {
        *counts.entry(event.item_key.as_str()).or_insert(0) += 1;
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
}

/// The raw keys of ⌊ratio · |Q1|⌋ items drawn uniformly without replacement
/// from the top popularity quartile.
pub fn removed_item_set(
    events: &[RawEvent],
    removal_ratio: f64,
    seed: u64,
) -> Result<BTreeSet<String>> {
    if !(0.0..=1.0).contains(&removal_ratio) {
        return Err(Error::InvalidArgument(format!(
            "removal ratio must lie in [0, 1], got {removal_ratio}"
        )));
    }
    let ranked = popularity_ranking(events);
    let q1 = &ranked[..quartile_sizes(ranked.len())[0]];
    let k = (removal_ratio * q1.len() as f64).floor() as usize;
    let mut rng = Rng::derive(seed, "imbalance", &[]);
    Ok(rng
        .sample_distinct(q1.len(), k)
        .into_iter()
        .map(|i| q1[i].0.to_string())
        .collect())
}

/// Drop every event of the removed items, preserving the order (and all
/// fields) of the survivors.
pub fn imbalance(events: &[RawEvent], removal_ratio: f64, seed: u64) -> Result<Vec<RawEvent>> {
    let removed = removed_item_set(events, removal_ratio, seed)?;
    Ok(events
        .iter()
        .filter(|e| !removed.contains(&e.item_key))
        .cloned()
        .collect())
}
