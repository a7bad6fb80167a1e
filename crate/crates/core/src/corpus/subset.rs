//! Recency-based train subsetting (e.g. keeping 1/64 of the sessions).

use crate::corpus::{reconstruct_sessions, split_session, DatasetBundle, ItemVocab};
use crate::error::{Error, Result};

/// Keep the newest ⌊S / denominator⌋ train sessions, rebuild the vocabulary
/// and popularity counts from them, and re-filter the test split against the
/// shrunken vocabulary. Relies on the bundle invariant that train sessions
/// are stored oldest-first.
pub fn subset_fraction(bundle: &DatasetBundle, denominator: usize) -> Result<DatasetBundle> {
    if denominator == 0 {
        return Err(Error::InvalidArgument(
            "subset denominator must be at least 1".into(),
        ));
    }
    if denominator == 1 {
        return Ok(bundle.clone());
    }

    let sessions = reconstruct_sessions(&bundle.train);
    let keep = sessions.len() / denominator;
    if keep == 0 {
        return Err(Error::Dataset(format!(
            "1/{denominator} of {} train sessions is empty",
            sessions.len()
        )));
    }
    let kept = &sessions[sessions.len() - keep..];

    let mut vocab = ItemVocab::new();
    for session in kept {
        for &old in session {
            let idx = vocab.intern(bundle.vocab.raw(old));
            vocab.add_popularity(idx, 1);
        }
    }

    let mut train = Vec::new();
    for session in kept {
        let mapped: Vec<usize> = session
            .iter()
            .map(|&old| vocab.index_of(bundle.vocab.raw(old)).expect("interned above"))
            .collect();
        train.extend(split_session(&mapped));
    }

    let mut test = Vec::new();
    for session in reconstruct_sessions(&bundle.test) {
        let mapped: Vec<usize> = session
            .iter()
            .filter_map(|&old| vocab.index_of(bundle.vocab.raw(old)))
            .collect();
        if mapped.len() >= 2 {
            test.extend(split_session(&mapped));
        }
    }

    let mut provenance = bundle.provenance.clone();
    provenance
        .filters
        .push(format!("subset_denominator={denominator}"));
    Ok(DatasetBundle {
        vocab,
        train,
        test,
        provenance,
    })
}
