//! The preprocessing pipeline: grouping, filtering, temporal split, and
//! sequence splitting.
//!
//! Filters run to a fixpoint: dropping rare items can shorten sessions below
//! two clicks, and dropping those sessions can push other items below the
//! support threshold, so both rules repeat until neither fires. Item support
//! is counted over all surviving sessions before the train/test split;
//! popularity (used by ARP and the quartile metrics) is counted over train
//! sessions only.

use std::collections::BTreeMap;

use crate::corpus::{
    split_session, DatasetBundle, ItemVocab, Provenance, RawEvent, SplitExample,
};
use crate::error::{Error, Result};

pub const DAY_MS: i64 = 86_400_000;

#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub min_item_support: u64,
    /// Test window measured back from the end of the last day.
    pub test_window_ms: i64,
    pub source_label: String,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            min_item_support: 5,
            test_window_ms: DAY_MS,
            source_label: "unknown".to_string(),
        }
    }
}

struct SessionBuf {
    items: Vec<usize>,
    times: Vec<i64>,
}

impl SessionBuf {
    fn start(&self) -> i64 {
        self.times[0]
    }

    fn end(&self) -> i64 {
        *self.times.last().expect("non-empty session")
    }
}

pub fn preprocess(events: &[RawEvent], opts: &PreprocessOptions) -> Result<DatasetBundle> {
    if events.is_empty() {
        return Err(Error::Dataset("no events to preprocess".into()));
    }

    // Temporary dense item ids, scoped to this function.
    let mut tmp_keys: Vec<String> = Vec::new();
    let mut tmp_index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut session_order: BTreeMap<&str, usize> = BTreeMap::new();
    let mut raw_sessions: Vec<Vec<(i64, usize)>> = Vec::new();

    for event in events {
        let item = match tmp_index.get(event.item_key.as_str()) {
            Some(&i) => i,
            None => {
                let i = tmp_keys.len();
                tmp_keys.push(event.item_key.clone());
                // Key borrows from `events`, which outlives this scope.
                tmp_index.insert(event.item_key.as_str(), i);
                i
            }
        };
        let slot = match session_order.get(event.session_key.as_str()) {
            Some(&s) => s,
            None => {
                let s = raw_sessions.len();
                session_order.insert(event.session_key.as_str(), s);
                raw_sessions.push(Vec::new());
                s
            }
        };
        raw_sessions[slot].push((event.timestamp_ms, item));
    }

    let n_input_sessions = raw_sessions.len();
    let mut sessions: Vec<SessionBuf> = raw_sessions
        .into_iter()
        .map(|mut evs| {
            // Stable by timestamp: equal times keep file order.
            evs.sort_by_key(|&(ts, _)| ts);
            SessionBuf {
                items: evs.iter().map(|&(_, item)| item).collect(),
                times: evs.iter().map(|&(ts, _)| ts).collect(),
            }
        })
        .collect();

    // Fixpoint of: drop sessions shorter than 2, drop items with support
    // below the threshold.
    loop {
        let sessions_before = sessions.len();
        sessions.retain(|s| s.items.len() >= 2);

        let mut support = vec![0u64; tmp_keys.len()];
        for s in &sessions {
            for &item in &s.items {
                support[item] += 1;
            }
        }
        let mut items_dropped = false;
        for s in &mut sessions {
            if s.items.iter().any(|&i| support[i] < opts.min_item_support) {
                items_dropped = true;
                let kept: Vec<(usize, i64)> = s
                    .items
                    .iter()
                    .zip(&s.times)
                    .filter(|(&i, _)| support[i] >= opts.min_item_support)
                    .map(|(&i, &t)| (i, t))
                    .collect();
                s.items = kept.iter().map(|&(i, _)| i).collect();
                s.times = kept.iter().map(|&(_, t)| t).collect();
            }
        }
        if sessions.len() == sessions_before && !items_dropped {
            break;
        }
    }

    if sessions.is_empty() {
        return Err(Error::Dataset(format!(
            "all {n_input_sessions} sessions were filtered out ({} events, min support {})",
            events.len(),
            opts.min_item_support
        )));
    }

    // Last-day boundary: midnight UTC of the maximum event date; the test
    // window reaches back from the end of that day.
    let max_ts = sessions.iter().map(|s| s.end()).max().expect("non-empty");
    let split_end = max_ts.div_euclid(DAY_MS) * DAY_MS + DAY_MS;
    let test_cut = split_end - opts.test_window_ms;

    let (mut test_sessions, mut train_sessions): (Vec<SessionBuf>, Vec<SessionBuf>) =
        sessions.into_iter().partition(|s| s.end() >= test_cut);
    if train_sessions.is_empty() {
        return Err(Error::Dataset(
            "no training sessions before the test window".into(),
        ));
    }
    train_sessions.sort_by_key(SessionBuf::start);
    test_sessions.sort_by_key(SessionBuf::start);

    // Vocabulary and popularity come from the train split alone.
    let mut vocab = ItemVocab::new();
    for s in &train_sessions {
        for &item in &s.items {
            let idx = vocab.intern(&tmp_keys[item]);
            vocab.add_popularity(idx, 1);
        }
    }

    let mut train: Vec<SplitExample> = Vec::new();
    for s in &train_sessions {
        let mapped: Vec<usize> = s
            .items
            .iter()
            .map(|&i| vocab.index_of(&tmp_keys[i]).expect("train item interned"))
            .collect();
        train.extend(split_session(&mapped));
    }

    let mut test: Vec<SplitExample> = Vec::new();
    for s in &test_sessions {
        let mapped: Vec<usize> = s
            .items
            .iter()
            .filter_map(|&i| vocab.index_of(&tmp_keys[i]))
            .collect();
        if mapped.len() >= 2 {
            test.extend(split_session(&mapped));
        }
    }

    Ok(DatasetBundle {
        vocab,
        train,
        test,
        provenance: Provenance {
            source: opts.source_label.clone(),
            filters: vec![
                format!("min_item_support={}", opts.min_item_support),
                format!("test_window_ms={}", opts.test_window_ms),
            ],
            seed: 0,
        },
    })
}
