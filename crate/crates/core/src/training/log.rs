use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence translation loss over the epoch's batches.
    pub forward_loss: f64,
    /// Mean per-sentence reconstruction loss, for joint objectives.
    pub backward_loss: Option<f64>,
    /// Dev loss, or dev BLEU when selecting by BLEU.
    pub dev_metric: f64,
    pub seconds: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

pub const LOG_HEADER: &str = "epoch\tforward_loss\tbackward_loss\tdev_metric\tseconds";

impl TrainingLog {
    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.seconds).sum()
    }

    /// Tab-separated rows under [`LOG_HEADER`]; a missing backward loss is `-`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            let backward = r
                .backward_loss
                .map_or_else(|| "-".to_string(), |b| format!("{b:.6}"));
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{}\t{:.6}\t{:.3}",
                r.epoch, r.forward_loss, backward, r.dev_metric, r.seconds
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}
