//! Per-step training log with per-epoch aggregates, serialized as JSON lines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub rate_bpp: f64,
    pub distortion: f64,
    pub total_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub steps: u64,
    pub mean_rate_bpp: f64,
    pub mean_distortion: f64,
    pub mean_total_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn push_step(&mut self, rec: StepRecord) -> Result<()> {
        if ![rec.rate_bpp, rec.distortion, rec.total_loss]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}: rate={} distortion={} total={}",
                rec.step, rec.rate_bpp, rec.distortion, rec.total_loss
            )));
        }
        if let Some(last) = self.steps.last() {
            if rec.step <= last.step {
                return Err(Error::Argument("step indices must increase".into()));
            }
        }
        self.steps.push(rec);
        Ok(())
    }

    pub fn close_epoch(&mut self, epoch: u64, first_step: usize) {
        let slice = &self.steps[first_step..];
        if slice.is_empty() {
            return;
        }
        let n = slice.len() as f64;
        self.epochs.push(EpochRecord {
            epoch,
            steps: slice.len() as u64,
            mean_rate_bpp: slice.iter().map(|s| s.rate_bpp).sum::<f64>() / n,
            mean_distortion: slice.iter().map(|s| s.distortion).sum::<f64>() / n,
            mean_total_loss: slice.iter().map(|s| s.total_loss).sum::<f64>() / n,
        });
    }

    /// Trailing moving average of the total loss.
    pub fn smoothed_total(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        self.steps
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let lo = i.saturating_sub(w - 1);
                let s: f64 = self.steps[lo..=i].iter().map(|r| r.total_loss).sum();
                s / (i - lo + 1) as f64
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).unwrap());
            out.push('\n');
        }
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, self.to_jsonl().as_bytes())
    }
}
