//! The training loop: seeded shuffling, per-batch graph construction, a
//! single batched scoring pass, the shared weighted binary cross-entropy,
//! optional stochastic densification / target redistribution / uniformity
//! regularization, and Adam updates.

use std::path::Path;
use std::time::Instant;

use crate::corpus::{load_bundle, DatasetBundle};
use crate::error::{Error, Result};
use crate::graph::{build_graph, SessionGraph};
use crate::numeric::{save_checkpoint, AdamConfig, ParamSet, Rng, Tape, Tensor};
use crate::runner::config::{ExperimentConfig, Variant};
use crate::runner::evaluate::{evaluate, ModelSource, Split};
use crate::runner::RunRecord;
use crate::srgnn::{self, GgnnWeights, ModelConfig, ReadoutWeights};
use crate::stochastic;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RECORD_FILE: &str = "run.json";

pub fn model_config(cfg: &ExperimentConfig) -> ModelConfig {
    ModelConfig {
        d: cfg.d,
        propagation_steps: 1,
        spherical: cfg.spherical,
        score_scale: ModelConfig::default_score_scale(cfg.spherical),
    }
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = Rng::derive(seed, "shuffle", &[epoch as u64]);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.next_below(i + 1));
    }
    idx
}

fn normalized_table(params: &ParamSet) -> Result<Tensor> {
    let table = params.value(srgnn::names::EMBED)?;
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

/// Which stochastic features are live for this run. Disabled features build
/// the exact same tape as the vanilla model, so their losses stay bit-equal.
struct Features {
    densify: bool,
    fakes: bool,
    uniformity: bool,
}

impl Features {
    fn of(cfg: &ExperimentConfig) -> Features {
        let noisy = cfg.variant == Variant::Noisy;
        Features {
            densify: noisy && cfg.kappa.is_finite(),
            fakes: noisy && cfg.alpha > 0.0 && cfg.p_count > 0,
            uniformity: noisy && cfg.lambda > 0.0,
        }
    }

    fn samples_embeddings(&self) -> bool {
        self.densify || self.fakes
    }
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    cfg: &ExperimentConfig,
    mcfg: &ModelConfig,
    bundle: &DatasetBundle,
    params: &mut ParamSet,
    chunk: &[usize],
    epoch: usize,
    batch_no: usize,
    lr: f64,
    features: &Features,
) -> Result<f64> {
    // Plain snapshot of the current unit embeddings for the sampling ops;
    // the draws are constants on the tape (no gradient flows through them).
    let sample_table = if features.samples_embeddings() {
        Some(normalized_table(params)?)
    } else {
        None
    };

    let mut tape = Tape::new();
    let table = tape.param(params, srgnn::names::EMBED)?;
    let gw = GgnnWeights::load(&mut tape, params)?;
    let rw = ReadoutWeights::load(&mut tape, params)?;

    let graphs: Vec<SessionGraph> = chunk
        .iter()
        .map(|&i| build_graph(&bundle.train[i].prefix))
        .collect();

    // One catalog-sized gather for the whole batch.
    let embed_all = if features.densify {
        None
    } else {
        let all_nodes: Vec<usize> = graphs
            .iter()
            .flat_map(|g| g.nodes.iter().copied())
            .collect();
        Some(srgnn::embed(&mut tape, table, &all_nodes, mcfg.spherical)?)
    };

    let mut session_vecs = Vec::with_capacity(chunk.len());
    let mut offset = 0;
    for (&ex_idx, graph) in chunk.iter().zip(&graphs) {
        let states0 = match embed_all {
            Some(embedded) => {
                let span: Vec<usize> = (offset..offset + graph.n_nodes()).collect();
                offset += graph.n_nodes();
                tape.gather_rows(embedded, &span)?
            }
            None => {
                let snapshot = sample_table.as_ref().expect("densify snapshot");
                let centers: Vec<Vec<f64>> = graph
                    .nodes
                    .iter()
                    .map(|&j| snapshot.row(j).to_vec())
                    .collect();
                let mut rng = Rng::derive(cfg.seed, "densify", &[epoch as u64, ex_idx as u64]);
                let dense = stochastic::densify_prefix(&centers, cfg.kappa, &mut rng)?;
                tape.constant(Tensor::from_rows(&dense)?)?
            }
        };
        let states = srgnn::ggnn_forward(&mut tape, graph, states0, &gw, mcfg.propagation_steps)?;
        session_vecs.push(srgnn::readout(&mut tape, states, graph, &rw)?);
    }
    let stacked = tape.concat_rows(&session_vecs)?;
    let probs = srgnn::score_items(&mut tape, stacked, table, mcfg.spherical, mcfg.score_scale)?;

    let mut target_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(chunk.len());
    for &ex_idx in chunk {
        let target = bundle.train[ex_idx].target;
        if features.fakes {
            let snapshot = sample_table.as_ref().expect("fake-target snapshot");
            let fake_cfg = stochastic::FakeTargetConfig {
                alpha: cfg.alpha,
                beta: cfg.beta,
                p_count: cfg.p_count,
                kappa: cfg.kappa.min(f64::MAX), // finite weighting even when densify is off
            };
            let mut rng = Rng::derive(cfg.seed, "fake", &[epoch as u64, ex_idx as u64]);
            let soft = stochastic::sample_fake_targets(target, snapshot, &fake_cfg, &mut rng)?;
            target_rows.push(soft.entries().to_vec());
        } else {
            target_rows.push(vec![(target, 1.0)]);
        }
    }
    let rec = srgnn::weighted_bce_loss(&mut tape, probs, &target_rows)?;
    let loss = if features.uniformity {
        let unit_table = tape.normalize_rows(table)?;
        let mut rng = Rng::derive(cfg.seed, "unif", &[epoch as u64, batch_no as u64]);
        let unif =
            stochastic::uniformity_loss(&mut tape, unit_table, cfg.tau, cfg.pair_budget, &mut rng)?;
        stochastic::total_loss(&mut tape, rec, unif, cfg.lambda)?
    } else {
        rec
    };

    let value = tape.value(loss).data()[0];
    tape.backward(loss, params)?;
    params.adam_step(&AdamConfig {
        lr,
        ..AdamConfig::default()
    });
    Ok(value)
}

/// Run the epoch loop on a loaded bundle; returns the trained parameters and
/// the mean train loss per epoch.
pub fn fit(cfg: &ExperimentConfig, bundle: &DatasetBundle) -> Result<(ParamSet, Vec<f64>)> {
    let mcfg = model_config(cfg);
    let mut params = srgnn::init_params(&mcfg, bundle.vocab.len(), cfg.seed)?;
    let features = Features::of(cfg);
    let n_train = bundle.train.len();
    let mut lr = cfg.lr;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(n_train, cfg.seed, epoch);
        let mut weighted_sum = 0.0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let loss = train_batch(
                cfg, &mcfg, bundle, &mut params, chunk, epoch, batch_no, lr, &features,
            )
            .map_err(|e| Error::Train {
                epoch,
                batch: batch_no,
                msg: e.to_string(),
            })?;
            weighted_sum += loss * chunk.len() as f64;
        }
        epoch_losses.push(weighted_sum / n_train as f64);
        lr *= cfg.lr_decay;
    }
    Ok((params, epoch_losses))
}

fn checkpoint_meta(cfg: &ExperimentConfig, mcfg: &ModelConfig, bundle: &DatasetBundle) -> serde_json::Value {
    serde_json::json!({
        "d": mcfg.d,
        "propagation_steps": mcfg.propagation_steps,
        "spherical": mcfg.spherical,
        "score_scale": mcfg.score_scale,
        "n_items": bundle.vocab.len(),
        "vocab_fingerprint": bundle.vocab.fingerprint(),
        "config": cfg,
    })
}

/// Create `{out_dir}/{config-hash}-{timestamp}[-n]`, never reusing a
/// directory from an earlier run.
fn create_run_dir(cfg: &ExperimentConfig) -> Result<std::path::PathBuf> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let base = Path::new(&cfg.out_dir);
    for attempt in 0..1000u32 {
        let name = if attempt == 0 {
            format!("{}-{stamp}", cfg.config_hash())
        } else {
            format!("{}-{stamp}-{attempt}", cfg.config_hash())
        };
        let dir = base.join(name);
        match std::fs::create_dir_all(base)
            .and_then(|_| std::fs::create_dir(&dir))
        {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(dir.display().to_string(), e)),
        }
    }
    Err(Error::Config("could not allocate a fresh run directory".into()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Full experiment: train (when the variant has parameters), checkpoint,
/// evaluate both splits, and persist the run record plus CSV reports under a
/// fresh run directory.
pub fn train(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let bundle = load_bundle(Path::new(&cfg.dataset))?;
    let run_dir = create_run_dir(cfg)?;

    let (epoch_losses, checkpoint_path, source) = if cfg.variant.is_trained() {
        let (params, losses) = fit(cfg, &bundle)?;
        let path = run_dir.join(CHECKPOINT_FILE);
        save_checkpoint(&path, &params, &checkpoint_meta(cfg, &model_config(cfg), &bundle))?;
        (losses, Some(path.clone()), ModelSource::Checkpoint(path))
    } else {
        let source = match cfg.variant {
            Variant::Random => ModelSource::Random { seed: cfg.seed },
            _ => ModelSource::Bigram,
        };
        (Vec::new(), None, source)
    };

    let train_metrics = evaluate(&source, &bundle, Split::Train, cfg.k)?;
    let test_metrics = evaluate(&source, &bundle, Split::Test, cfg.k)?;
    let record = RunRecord {
        config: cfg.clone(),
        epoch_losses,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        train_metrics,
        test_metrics,
        checkpoint_path: checkpoint_path.map(|p| p.display().to_string()),
        run_dir: run_dir.display().to_string(),
    };

    write_text(&run_dir.join(RECORD_FILE), &record.to_json()?)?;
    for (metrics, label) in [(&record.train_metrics, "train"), (&record.test_metrics, "test")] {
        write_text(&run_dir.join(format!("{label}_metrics.csv")), &metrics.to_metrics_csv())?;
        if !metrics.nn_cosine_histogram.is_empty() {
            write_text(
                &run_dir.join(format!("{label}_nn_histogram.csv")),
                &metrics.histogram_csv(),
            )?;
        }
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::synth::synth_corpus;

    fn toy_config(dataset: &str, out_dir: &str) -> ExperimentConfig {
        ExperimentConfig {
            dataset: dataset.to_string(),
            out_dir: out_dir.to_string(),
            variant: Variant::Srgnn,
            d: 16,
            epochs: 2,
            batch_size: 16,
            k: 10,
            seed: 3,
            ..ExperimentConfig::default()
        }
    }

    fn toy_bundle() -> DatasetBundle {
        synth_corpus(20, 150, 0.85, 7).unwrap()
    }

    #[test]
    fn loss_decreases_and_fit_is_deterministic() {
        let bundle = toy_bundle();
        let cfg = ExperimentConfig {
            dataset: "unused".into(),
            variant: Variant::Srgnn,
            d: 16,
            epochs: 3,
            seed: 5,
            ..ExperimentConfig::default()
        };
        let (_, losses) = fit(&cfg, &bundle).unwrap();
        assert_eq!(losses.len(), 3);
        assert!(
            losses[2] < losses[0],
            "no learning signal: {losses:?}"
        );
        let (_, again) = fit(&cfg, &bundle).unwrap();
        assert_eq!(losses, again); // bit-equal on the same platform

        let zero = ExperimentConfig { epochs: 0, ..cfg };
        let (params, none) = fit(&zero, &bundle).unwrap();
        assert!(none.is_empty());
        assert_eq!(params.step, 0);
    }

    #[test]
    fn disabled_noisy_features_reproduce_spherical_srgnn_losses() {
        let bundle = toy_bundle();
        let spherical = ExperimentConfig {
            dataset: "unused".into(),
            variant: Variant::Srgnn,
            spherical: true,
            d: 12,
            epochs: 2,
            seed: 11,
            ..ExperimentConfig::default()
        };
        let disabled = ExperimentConfig {
            variant: Variant::Noisy,
            kappa: f64::INFINITY, // densification off
            alpha: 0.0,           // no redistributed mass
            p_count: 0,           // no fake draws
            lambda: 0.0,          // no uniformity term
            ..spherical.clone()
        };
        let (_, base) = fit(&spherical, &bundle).unwrap();
        let (_, noisy) = fit(&disabled, &bundle).unwrap();
        assert_eq!(base, noisy, "per-epoch losses must be bit-equal");
    }

    #[test]
    fn full_run_writes_record_checkpoint_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let bundle_path = dir.path().join("bundle.txt");
        crate::corpus::save_bundle(&bundle_path, &toy_bundle()).unwrap();
        let out = dir.path().join("runs");
        let cfg = toy_config(bundle_path.to_str().unwrap(), out.to_str().unwrap());

        let record = train(&cfg).unwrap();
        assert_eq!(record.epoch_losses.len(), 2);
        assert_eq!(record.train_metrics.split, "train");
        assert_eq!(record.test_metrics.split, "test");
        assert!(record.train_metrics.rbf_statistic.is_some());

        let run_dir = Path::new(&record.run_dir);
        assert!(run_dir.join(RECORD_FILE).exists());
        assert!(run_dir.join(CHECKPOINT_FILE).exists());
        assert!(run_dir.join("train_metrics.csv").exists());
        assert!(run_dir.join("test_nn_histogram.csv").exists());

        let loaded = RunRecord::load(&run_dir.join(RECORD_FILE)).unwrap();
        assert_eq!(loaded.config, record.config);
        assert_eq!(loaded.epoch_losses, record.epoch_losses);

        // The persisted checkpoint re-evaluates to the recorded metrics.
        let source = ModelSource::Checkpoint(run_dir.join(CHECKPOINT_FILE));
        let bundle = load_bundle(&bundle_path).unwrap();
        let re = evaluate(&source, &bundle, Split::Test, cfg.k).unwrap();
        assert_eq!(re, record.test_metrics);
    }

    #[test]
    fn baseline_variants_skip_training() {
        let dir = tempfile::tempdir().unwrap();
        let bundle_path = dir.path().join("bundle.txt");
        crate::corpus::save_bundle(&bundle_path, &toy_bundle()).unwrap();
        let mut cfg = toy_config(
            bundle_path.to_str().unwrap(),
            dir.path().join("runs").to_str().unwrap(),
        );
        cfg.variant = Variant::Bigram;
        let record = train(&cfg).unwrap();
        assert!(record.epoch_losses.is_empty());
        assert!(record.checkpoint_path.is_none());
        assert_eq!(record.train_metrics.iou_vs_bigram, 1.0);
    }

    #[test]
    fn vocabulary_mismatch_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let bundle_path = dir.path().join("bundle.txt");
        crate::corpus::save_bundle(&bundle_path, &toy_bundle()).unwrap();
        let cfg = toy_config(
            bundle_path.to_str().unwrap(),
            dir.path().join("runs").to_str().unwrap(),
        );
        let record = train(&cfg).unwrap();

        // A bundle over a different catalog must be rejected.
        let other = synth_corpus(25, 150, 0.85, 7).unwrap();
        let source =
            ModelSource::Checkpoint(Path::new(&record.checkpoint_path.unwrap()).to_path_buf());
        let err = evaluate(&source, &other, Split::Test, 10).unwrap_err();
        assert!(matches!(err, Error::VocabMismatch(_)), "{err}");
    }
}
