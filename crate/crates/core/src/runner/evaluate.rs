//! Frozen-model evaluation: greedy top-K recommendations for every example
//! of a split, folded into a [`MetricsReport`].
//!
//! Recommendation generation fans out across threads; all per-example
//! randomness comes from derived streams keyed by example index, so the
//! report is identical regardless of scheduling.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::baselines::{bigram_recommend, build_bigram, random_recommend};
use crate::corpus::{DatasetBundle, SplitExample};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::metrics::{
    arp, coverage, hit_rate, iou_vs_bigram, nn_cosine_histogram, quartile_representation,
    rbf_statistic, MetricsReport, RecommendationList,
};
use crate::numeric::{load_checkpoint, ParamSet, Rng, Tape, Tensor};
use crate::srgnn::{self, GgnnWeights, ModelConfig, ReadoutWeights};

/// Evaluation conventions for the embedding-geometry statistics; recorded
/// here once so every report is comparable.
pub const EVAL_RBF_TAU: f64 = 2.0;
pub const EVAL_RBF_PAIR_BUDGET: usize = 4096;
pub const EVAL_HISTOGRAM_BINS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn examples<'a>(&self, bundle: &'a DatasetBundle) -> &'a [SplitExample] {
        match self {
            Split::Train => &bundle.train,
            Split::Test => &bundle.test,
        }
    }
}

/// What produces the recommendations.
#[derive(Clone, Debug)]
pub enum ModelSource {
    Random { seed: u64 },
    Bigram,
    Checkpoint(PathBuf),
}

/// A checkpoint restored for inference.
pub struct LoadedModel {
    pub params: ParamSet,
    pub config: ModelConfig,
    pub vocab_fingerprint: String,
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let (params, meta) = load_checkpoint(path)?;
    let field = |name: &str| {
        meta.get(name)
            .cloned()
            .ok_or_else(|| Error::Format(format!("checkpoint meta is missing `{name}`")))
    };
    let config = ModelConfig {
        d: serde_json::from_value(field("d")?)
            .map_err(|e| Error::Format(format!("checkpoint meta d: {e}")))?,
        propagation_steps: serde_json::from_value(field("propagation_steps")?)
            .map_err(|e| Error::Format(format!("checkpoint meta propagation_steps: {e}")))?,
        spherical: serde_json::from_value(field("spherical")?)
            .map_err(|e| Error::Format(format!("checkpoint meta spherical: {e}")))?,
        score_scale: serde_json::from_value(field("score_scale")?)
            .map_err(|e| Error::Format(format!("checkpoint meta score_scale: {e}")))?,
    };
    let vocab_fingerprint = field("vocab_fingerprint")?
        .as_str()
        .ok_or_else(|| Error::Format("checkpoint meta vocab_fingerprint is not a string".into()))?
        .to_string();
    Ok(LoadedModel {
        params,
        config,
        vocab_fingerprint,
    })
}

fn unit_rows(table: &Tensor) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = (0..table.rows())
        .map(|i| {
            let row = table.row(i);
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|x| x / norm).collect()
            } else {
                row.to_vec()
            }
        })
        .collect();
    Tensor::from_rows(&rows)
}

/// One greedy forward pass; `table` is pre-normalized when spherical, so the
/// in-tape work stays per-session sized plus a single catalog matmul.
fn model_recommend(
    model: &LoadedModel,
    table: &Tensor,
    prefix: &[usize],
    k: usize,
) -> Result<RecommendationList> {
    let mut tape = Tape::new();
    let table_var = tape.constant(table.clone())?;
    let gw = GgnnWeights::load(&mut tape, &model.params)?;
    let rw = ReadoutWeights::load(&mut tape, &model.params)?;
    let graph = build_graph(prefix);
    let states0 = tape.gather_rows(table_var, &graph.nodes)?;
    let states = srgnn::ggnn_forward(&mut tape, &graph, states0, &gw, model.config.propagation_steps)?;
    let s = srgnn::readout(&mut tape, states, &graph, &rw)?;
    let s_used = if model.config.spherical {
        tape.normalize_rows(s)?
    } else {
        s
    };
    let logits = tape.matmul(s_used, false, table_var, true)?;
    let scaled = tape.affine(logits, model.config.score_scale, 0.0)?;
    let probs = tape.softmax_rows(scaled)?;
    Ok(srgnn::recommend(tape.value(probs).data(), k))
}

/// Evaluate a model source over one split of a bundle.
pub fn evaluate(
    source: &ModelSource,
    bundle: &DatasetBundle,
    split: Split,
    k: usize,
) -> Result<MetricsReport> {
    let examples = split.examples(bundle);
    if examples.is_empty() {
        return Err(Error::Dataset(format!(
            "the {} split has no examples to evaluate",
            split.as_str()
        )));
    }
    let n_items = bundle.vocab.len();
    if k > n_items {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the catalog of {n_items} items"
        )));
    }

    let bigram_table = build_bigram(&bundle.train)?;
    let bigram_recs: Vec<RecommendationList> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rec = bigram_recommend(&bigram_table, *ex.prefix.last().unwrap(), k);
            rec.example_id = i as u64;
            rec
        })
        .collect();

    let (recs, table): (Vec<RecommendationList>, Option<Tensor>) = match source {
        ModelSource::Random { seed } => {
            let recs = examples
                .par_iter()
                .enumerate()
                .map(|(i, _)| {
                    let mut rng = Rng::derive(*seed, "random-eval", &[i as u64]);
                    let mut rec = random_recommend(n_items, k, &mut rng)?;
                    rec.example_id = i as u64;
                    Ok(rec)
                })
                .collect::<Result<Vec<_>>>()?;
            (recs, None)
        }
        ModelSource::Bigram => (bigram_recs.clone(), None),
        ModelSource::Checkpoint(path) => {
            let model = load_model(path)?;
            if model.vocab_fingerprint != bundle.vocab.fingerprint() {
                return Err(Error::VocabMismatch(format!(
                    "checkpoint {} was trained on a different catalog",
                    path.display()
                )));
            }
            let raw_table = model.params.value(srgnn::names::EMBED)?.clone();
            if raw_table.rows() != n_items {
                return Err(Error::VocabMismatch(format!(
                    "checkpoint has {} item embeddings, bundle has {n_items}",
                    raw_table.rows()
                )));
            }
            let scoring_table = if model.config.spherical {
                unit_rows(&raw_table)?
            } else {
                raw_table.clone()
            };
            let recs = examples
                .par_iter()
                .enumerate()
                .map(|(i, ex)| {
                    let mut rec = model_recommend(&model, &scoring_table, &ex.prefix, k)?;
                    rec.example_id = i as u64;
                    Ok(rec)
                })
                .collect::<Result<Vec<_>>>()?;
            (recs, Some(raw_table))
        }
    };

    let targets: Vec<usize> = examples.iter().map(|e| e.target).collect();
    let (rbf, histogram) = match &table {
        Some(t) => {
            let mut rng = Rng::derive(0, "rbf-eval", &[]);
            (
                Some(rbf_statistic(t, EVAL_RBF_TAU, EVAL_RBF_PAIR_BUDGET, &mut rng)?),
                nn_cosine_histogram(t, EVAL_HISTOGRAM_BINS)?,
            )
        }
        None => (None, Vec::new()),
    };
    Ok(MetricsReport {
        split: split.as_str().to_string(),
        k,
        hit_rate: hit_rate(&recs, &targets)?,
        coverage: coverage(&recs, n_items),
        arp: arp(&recs, &bundle.vocab),
        iou_vs_bigram: iou_vs_bigram(&recs, &bigram_recs)?,
        quartile_representation: quartile_representation(&recs, &bundle.vocab),
        rbf_statistic: rbf,
        nn_cosine_histogram: histogram,
    })
}
