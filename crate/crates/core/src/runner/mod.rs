//! Experiment orchestration: configuration, the synthetic corpus generator,
//! the training loop, frozen-model evaluation, and run records.

pub mod config;
pub mod evaluate;
pub mod synth;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub use config::{ExperimentConfig, Variant};
pub use evaluate::{evaluate, load_model, LoadedModel, ModelSource, Split};
pub use synth::synth_corpus;
pub use train::{fit, train, CHECKPOINT_FILE, RECORD_FILE};

/// Everything needed to inspect or re-run one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub epoch_losses: Vec<f64>,
    pub wall_clock_secs: f64,
    pub train_metrics: MetricsReport,
    pub test_metrics: MetricsReport,
    pub checkpoint_path: Option<String>,
    pub run_dir: String,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("run record serialization: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunRecord> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Merge run records into one comparison table, two rows per run (train and
/// test), metric columns side by side.
pub fn comparison_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "variant,dataset,seed,split,k,hit_rate,coverage,arp,iou_vs_bigram,\
         q1,q2,q3,q4,rbf_statistic,final_train_loss,wall_clock_secs\n",
    );
    for record in records {
        for metrics in [&record.train_metrics, &record.test_metrics] {
            let rbf = metrics
                .rbf_statistic
                .map(|v| v.to_string())
                .unwrap_or_default();
            let final_loss = record
                .epoch_losses
                .last()
                .map(|v| v.to_string())
                .unwrap_or_default();
            let q = metrics.quartile_representation;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                record.config.variant,
                record.config.dataset,
                record.config.seed,
                metrics.split,
                metrics.k,
                metrics.hit_rate,
                metrics.coverage,
                metrics.arp,
                metrics.iou_vs_bigram,
                q[0],
                q[1],
                q[2],
                q[3],
                rbf,
                final_loss,
                record.wall_clock_secs,
            ));
        }
    }
    out
}
