use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps taken in this epoch.
    pub steps: usize,
    pub samples: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
}

/// Everything a training run reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub label: String,
    pub arch: String,
    pub dataset: String,
    pub seed: u64,
    pub start_step: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub sparsity: f64,
    /// Training FLOPs relative to a dense run of the same length.
    pub relative_flops: f64,
    pub epochs: Vec<EpochMetrics>,
    pub final_test_loss: Option<f64>,
    pub final_test_acc: Option<f64>,
}

/// Column order of [`MetricsRecord::write_csv`].
pub const METRICS_CSV_COLUMNS: [&str; 14] = [
    "label",
    "arch",
    "dataset",
    "seed",
    "sparsity",
    "weight_decay",
    "epoch",
    "steps",
    "samples",
    "lr",
    "train_loss",
    "train_acc",
    "test_loss",
    "test_acc",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricsRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// One row per epoch; see [`METRICS_CSV_COLUMNS`].
    pub fn write_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(METRICS_CSV_COLUMNS)?;
        for r in records {
            for e in &r.epochs {
                w.write_record([
                    r.label.clone(),
                    r.arch.clone(),
                    r.dataset.clone(),
                    r.seed.to_string(),
                    r.sparsity.to_string(),
                    r.weight_decay.to_string(),
                    e.epoch.to_string(),
                    e.steps.to_string(),
                    e.samples.to_string(),
                    e.lr.to_string(),
                    e.train_loss.to_string(),
                    e.train_acc.to_string(),
                    opt(e.test_loss),
                    opt(e.test_acc),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}
