//! Clickstream ingestion, the preprocessing pipeline, and the on-disk
//! dataset bundle.
//!
//! The bundle keeps train examples grouped by source session, sessions in
//! chronological order, and in-session examples in prefix order (a prefix of
//! length 1 starts a new group). Several consumers — bigram counting and
//! train-subset selection — reconstruct full sessions from that layout via
//! [`reconstruct_sessions`].

pub mod bundle;
pub mod imbalance;
pub mod ingest;
pub mod preprocess;
pub mod subset;

pub use bundle::{load_bundle, save_bundle};
pub use imbalance::{imbalance, quartile_sizes, removed_item_set};
pub use ingest::{ingest, ingest_lines, parse_line, Ingested, SourceFormat};
pub use preprocess::{preprocess, PreprocessOptions};
pub use subset::subset_fraction;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One well-formed clickstream row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawEvent {
    pub session_key: String,
    /// Milliseconds since the Unix epoch, UTC.
    pub timestamp_ms: i64,
    pub item_key: String,
}

/// Bijection between raw item keys and dense indices, plus train-split
/// popularity counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemVocab {
    raw_to_index: BTreeMap<String, usize>,
    index_to_raw: Vec<String>,
    train_popularity: Vec<u64>,
}

impl ItemVocab {
    pub fn new() -> Self {
        ItemVocab::default()
    }

    /// Index of `raw`, inserting it with zero popularity if unseen.
    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.raw_to_index.get(raw) {
            return i;
        }
        let i = self.index_to_raw.len();
        self.raw_to_index.insert(raw.to_string(), i);
        self.index_to_raw.push(raw.to_string());
        self.train_popularity.push(0);
        i
    }

    pub fn index_of(&self, raw: &str) -> Option<usize> {
        self.raw_to_index.get(raw).copied()
    }

    pub fn raw(&self, index: usize) -> &str {
        &self.index_to_raw[index]
    }

    pub fn len(&self) -> usize {
        self.index_to_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_raw.is_empty()
    }

    pub fn popularity(&self, index: usize) -> u64 {
        self.train_popularity[index]
    }

    pub fn popularities(&self) -> &[u64] {
        &self.train_popularity
    }

    pub fn add_popularity(&mut self, index: usize, count: u64) {
        self.train_popularity[index] += count;
    }

    /// Digest of the ordered raw keys; checkpoints carry it so a model is
    /// never evaluated against a differently indexed catalog.
    pub fn fingerprint(&self) -> String {
        let mut joined = String::new();
        for raw in &self.index_to_raw {
            joined.push_str(raw);
            joined.push('\n');
        }
        bundle::sha256_hex(joined.as_bytes())
    }

    /// Push a pre-assigned entry; used by the bundle loader.
    pub fn push_entry(&mut self, raw: &str, popularity: u64) -> crate::Result<usize> {
        if self.raw_to_index.contains_key(raw) {
            return Err(crate::Error::Format(format!("duplicate vocab key `{raw}`")));
        }
        let i = self.index_to_raw.len();
        self.raw_to_index.insert(raw.to_string(), i);
        self.index_to_raw.push(raw.to_string());
        self.train_popularity.push(popularity);
        Ok(i)
    }
}

/// A preprocessed session: dense item indices in click order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub id: u64,
    pub items: Vec<usize>,
    pub start_time_ms: i64,
}

/// One (prefix, target) training or evaluation example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitExample {
    pub prefix: Vec<usize>,
    pub target: usize,
}

/// How a bundle was produced; enough to re-run the preparation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    /// Human-readable pipeline steps, in application order.
    pub filters: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub vocab: ItemVocab,
    pub train: Vec<SplitExample>,
    pub test: Vec<SplitExample>,
    pub provenance: Provenance,
}

impl DatasetBundle {
    pub fn n_items(&self) -> usize {
        self.vocab.len()
    }
}

/// Expand a session into its L−1 (prefix, target) examples.
pub fn split_session(items: &[usize]) -> Vec<SplitExample> {
    (1..items.len())
        .map(|k| SplitExample {
            prefix: items[..k].to_vec(),
            target: items[k],
        })
        .collect()
}

/// Rebuild full sessions from a grouped example list (a prefix of length 1
/// starts a new session; the last example of a group is prefix + target).
pub fn reconstruct_sessions(examples: &[SplitExample]) -> Vec<Vec<usize>> {
    let mut sessions: Vec<Vec<usize>> = Vec::new();
    for ex in examples {
        if ex.prefix.len() == 1 {
            sessions.push(ex.prefix.clone());
        }
        if let Some(current) = sessions.last_mut() {
            current.push(ex.target);
        }
    }
    sessions
}
