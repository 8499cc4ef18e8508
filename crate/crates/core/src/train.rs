//! Settings and bookkeeping shared by every training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{apply_bn_update, BnStats, BnUpdate};
use crate::rng::Stream;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 512,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive and finite, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Shuffles `rows` and cuts them into batches of `batch` rows. A trailing
/// single row is folded into the previous batch so batch-norm always sees
/// at least two rows.
pub fn shuffled_batches(rows: &[usize], batch: usize, stream: &mut Stream) -> Vec<Vec<usize>> {
    let mut order = rows.to_vec();
    order.shuffle(stream);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(tail);
    }
    batches
}

pub fn commit_bn_updates(stats: &mut [BnStats<f32>], updates: Vec<BnUpdate>, momentum: f64) {
    for u in updates {
        apply_bn_update(&mut stats[u.slot], &u, momentum);
    }
}

/// Applies `f` to consecutive row chunks of `x` and stacks the results.
/// Used for eval-mode passes, whose outputs do not depend on the chunking.
pub fn map_row_chunks(
    x: &Matrix<f32>,
    chunk: usize,
    out_width: usize,
    mut f: impl FnMut(Matrix<f32>) -> Result<Matrix<f32>>,
) -> Result<Matrix<f32>> {
    let mut parts = Vec::new();
    let mut start = 0;
    while start < x.rows() {
        let end = (start + chunk.max(1)).min(x.rows());
        parts.push(f(x.row_range(start, end))?);
        start = end;
    }
    if parts.is_empty() {
        return Ok(Matrix::zeros(0, out_width));
    }
    Matrix::vstack(&parts.iter().collect::<Vec<_>>())
}

/// One row of a training-history CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn push(&mut self, epoch: usize, split: &str, loss: f64, accuracy: Option<f64>) {
        self.rows.push(HistoryRow {
            epoch,
            split: split.to_string(),
            loss,
            accuracy,
        });
    }

    /// Loss per epoch for one split, in epoch order.
    pub fn losses(&self, split: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.split == split).map(|r| r.loss).collect()
    }

    pub fn last(&self, split: &str) -> Option<&HistoryRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }

    /// `epoch,split,loss,accuracy`; accuracy is empty when not measured.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,accuracy\n");
        for r in &self.rows {
            let acc = r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{},{:.8},{}\n", r.epoch, r.split, r.loss, acc));
        }
        out
    }
}
