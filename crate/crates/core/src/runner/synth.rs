//! Seeded synthetic clickstream generator: first-order Markov sessions with
//! a planted dominant successor per item and a linear popularity skew,
//! pushed through the standard preprocessing path.

use crate::corpus::preprocess::{preprocess, PreprocessOptions, DAY_MS};
use crate::corpus::{DatasetBundle, RawEvent};
use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Sessions are spread uniformly over this many days, so the last-day split
/// yields roughly a tenth of them as test data.
pub const SYNTH_DAYS: i64 = 10;

/// Restart distribution weights: item i gets 1 + (n − i)/n, a gentle 2:1
/// popularity skew from the first item to the last.
fn skew_weights(n_items: usize) -> Vec<f64> {
    (0..n_items)
        .map(|i| 1.0 + (n_items - i) as f64 / n_items as f64)
        .collect()
}

fn draw_weighted(weights: &[f64], total: f64, rng: &mut Rng) -> usize {
    let mut ticket = rng.next_f64() * total;
    for (i, &w) in weights.iter().enumerate() {
        if ticket < w {
            return i;
        }
        ticket -= w;
    }
    weights.len() - 1
}

/// Generate `n_sessions` sessions over `n_items` items: each step follows
/// the planted successor (i+1 mod n) with probability `markov_sharpness`,
/// otherwise restarts from the skew distribution.
pub fn synth_corpus(
    n_items: usize,
    n_sessions: usize,
    markov_sharpness: f64,
    seed: u64,
) -> Result<DatasetBundle> {
    if n_items < 10 {
        return Err(Error::InvalidArgument(format!(
            "synthetic corpus needs ≥ 10 items, got {n_items}"
        )));
    }
    if n_sessions == 0 {
        return Err(Error::InvalidArgument("synthetic corpus needs ≥ 1 session".into()));
    }
    if !(0.0..=1.0).contains(&markov_sharpness) {
        return Err(Error::InvalidArgument(format!(
            "markov_sharpness must lie in [0, 1], got {markov_sharpness}"
        )));
    }

    let weights = skew_weights(n_items);
    let total: f64 = weights.iter().sum();
    let span = SYNTH_DAYS * DAY_MS;
    let mut events = Vec::new();
    for s in 0..n_sessions {
        let mut rng = Rng::derive(seed, "synth", &[s as u64]);
        let len = 2 + rng.next_below(8); // uniform in 2..=9
        let start = s as i64 * span / n_sessions as i64;
        let mut item = draw_weighted(&weights, total, &mut rng);
        for pos in 0..len {
            events.push(RawEvent {
                session_key: format!("s{s}"),
                timestamp_ms: start + pos as i64 * 1000,
                item_key: format!("i{item:05}"),
            });
            if pos + 1 < len {
                item = if rng.next_f64() < markov_sharpness {
                    (item + 1) % n_items
                } else {
                    draw_weighted(&weights, total, &mut rng)
                };
            }
        }
    }

    let opts = PreprocessOptions {
        // Keep the planted catalog intact: every observed item survives.
        min_item_support: 1,
        test_window_ms: DAY_MS,
        source_label: format!(
            "synthetic(n_items={n_items},n_sessions={n_sessions},sharpness={markov_sharpness},seed={seed})"
        ),
    };
    let mut bundle = preprocess(&events, &opts)?;
    bundle.provenance.seed = seed;
    Ok(bundle)
}
