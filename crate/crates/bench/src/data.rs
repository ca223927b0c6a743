//! Datasets: seeded synthetic tasks, CSV ingestion and the train/test
//! split.

use std::path::Path;

use paramcorrupt::{Batch, Targets, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Fraction of examples held out for testing.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Two isotropic blobs centred at `(−2, 0)` and `(2, 0)`.
    Gaussians,
    /// Two interleaving half circles.
    Moons,
    /// Four corner blobs labelled by the sign product.
    Xor,
}

/// A classification task split into train and test examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub test: Batch,
    pub classes: usize,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.train.inputs.row_width()
    }

    /// Splits `all` by a seeded shuffle: the first `⌈0.2·n⌉` shuffled
    /// examples form the test set.
    pub fn split(all: Batch, classes: usize, seed: u64) -> Result<Self> {
        let n = all.len();
        if n < 2 {
            return Err(BenchError::Data(format!("need at least 2 examples to split, got {n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = ((n as f64 * TEST_FRACTION).ceil() as usize).clamp(1, n - 1);
        Ok(Self {
            test: all.select(&order[..n_test]),
            train: all.select(&order[n_test..]),
            classes,
        })
    }
}

/// Generates `count` balanced two-class examples with Gaussian noise of
/// standard deviation `noise`, then splits them 80/20.
pub fn synth_dataset(kind: SynthKind, count: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if count < 2 {
        return Err(BenchError::Config(format!("synthetic count must be >= 2, got {count}")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(BenchError::Config(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let per_class = count.div_ceil(2);
    for i in 0..count {
        let class = i % 2;
        let (x, y) = match kind {
            SynthKind::Gaussians => (if class == 0 { -2.0 } else { 2.0 }, 0.0),
            SynthKind::Moons => {
                let j = i / 2;
                let t = std::f64::consts::PI * j as f64 / (per_class.max(2) - 1) as f64;
                if class == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                }
            }
            SynthKind::Xor => {
                // Corners cycle so both classes see both of their corners.
                let corner = (i / 2) % 2;
                let sx = if corner == 0 { 1.0 } else { -1.0 };
                let sy = if class == 0 { sx } else { -sx };
                (sx, sy)
            }
        };
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        rows.push(vec![x + noise * nx, y + noise * ny]);
        labels.push(class);
    }
    let all = Batch::new(Tensor::from_rows(&rows)?, Targets::Classes(labels))?;
    Dataset::split(all, 2, seed)
}

/// Reads a CSV file with a header row; every column but the last is a
/// feature and the last column is an integer class label.
pub fn load_csv(path: &Path) -> Result<Batch> {
    let text = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
    parse_csv(&text).map_err(|e| match e {
        BenchError::Data(m) => BenchError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_csv(bytes: &[u8]) -> Result<Batch> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let width = reader
        .headers()
        .map_err(|e| BenchError::Data(format!("unreadable header: {e}")))?
        .len();
    if width == 0 {
        return Err(BenchError::Data("no data rows".into()));
    }
    if width < 2 {
        return Err(BenchError::Data(
            "need at least one feature column and a label column".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| BenchError::Data(format!("line {line}: {e}")))?;
        let offset = record.position().map_or(0, |p| p.byte());
        if record.len() != width {
            return Err(BenchError::Data(format!(
                "line {line} (byte {offset}): expected {width} columns, got {}",
                record.len()
            )));
        }
        let mut features = Vec::with_capacity(width - 1);
        for (col, cell) in record.iter().take(width - 1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                BenchError::Data(format!(
                    "line {line} (byte {offset}), column {}: non-numeric cell {cell:?}",
                    col + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(BenchError::Data(format!(
                    "line {line} (byte {offset}), column {}: non-finite value",
                    col + 1
                )));
            }
            features.push(v);
        }
        let label_cell = record[width - 1].trim();
        let label: usize = label_cell.parse().map_err(|_| {
            BenchError::Data(format!(
                "line {line} (byte {offset}), column {width}: label {label_cell:?} is not a class index"
            ))
        })?;
        rows.push(features);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(BenchError::Data("no data rows".into()));
    }
    Ok(Batch::new(Tensor::from_rows(&rows)?, Targets::Classes(labels))?)
}

/// Number of classes implied by the labels (largest index + 1).
pub fn class_count(batch: &Batch) -> usize {
    match &batch.targets {
        Targets::Classes(c) => c.iter().max().map_or(0, |m| m + 1),
        Targets::Values(t) => t.row_width(),
    }
}
