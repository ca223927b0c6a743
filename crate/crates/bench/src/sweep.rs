//! Corruption sweeps and per-layer probes over a trained model.

use std::ops::Range;
use std::path::Path;

use paramcorrupt::constraints::ConstraintSet;
use paramcorrupt::corruption::sampling::{sample, NoiseKind};
use paramcorrupt::corruption::{gradient_corruption, multi_step_corrupt, MultiStepConfig};
use paramcorrupt::quantize::quantize_model;
use paramcorrupt::{Batch, Model, ParamPartition};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_norm, Grouping, LayerProbeSpec, Metric, SweepSpec};
use crate::error::{BenchError, Result};

/// One result of a sweep: a metric before and after one corruption.
///
/// CSV columns, in order: `method, setting, value, seed, metric, clean,
/// corrupted, error`. `corrupted` is empty and `error` holds the message
/// when the probe failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// Full description of the cell, e.g. `eps=0.05;p=inf;n=all;K=4;alpha=0.01875`.
    pub setting: String,
    /// The swept quantity: ε, σ, b or bits.
    pub value: f64,
    pub seed: u64,
    pub metric: String,
    pub clean: f64,
    pub corrupted: Option<f64>,
    pub error: Option<String>,
}

fn fmt_n(n: Option<usize>) -> String {
    n.map_or_else(|| "all".to_string(), |n| n.to_string())
}

/// A single (method, setting) cell, expanded from a sweep entry.
#[derive(Debug, Clone)]
struct Cell<'a> {
    spec: &'a SweepSpec,
    order: (usize, usize),
    value: f64,
    setting: String,
}

fn expand(spec: &SweepSpec, index: usize, data_len: usize) -> Vec<Cell<'_>> {
    let cell = |j: usize, value: f64, setting: String| Cell {
        spec,
        order: (index, j),
        value,
        setting,
    };
    match spec {
        SweepSpec::MultiStep {
            epsilon,
            p,
            n,
            steps,
            alpha,
            batch_size,
        } => epsilon
            .iter()
            .enumerate()
            .map(|(j, &eps)| {
                let k = steps.unwrap_or_else(|| data_len.div_ceil((*batch_size).max(1)).max(1));
                let a = alpha.unwrap_or(1.5 * eps / k as f64);
                cell(j, eps, format!("eps={eps};p={p};n={};K={k};alpha={a}", fmt_n(*n)))
            })
            .collect(),
        SweepSpec::Gradient { epsilon, p, n } => epsilon
            .iter()
            .enumerate()
            .map(|(j, &eps)| cell(j, eps, format!("eps={eps};p={p};n={}", fmt_n(*n))))
            .collect(),
        SweepSpec::Gaussian { sigma } => sigma
            .iter()
            .enumerate()
            .map(|(j, &s)| cell(j, s, format!("sigma={s}")))
            .collect(),
        SweepSpec::Uniform { bound } => bound
            .iter()
            .enumerate()
            .map(|(j, &b)| cell(j, b, format!("b={b}")))
            .collect(),
        SweepSpec::Quantize { bits } => bits
            .iter()
            .enumerate()
            .map(|(j, &b)| cell(j, f64::from(b), format!("bits={b}")))
            .collect(),
    }
}

/// Applies one corruption cell to `model`.
fn corrupt(cell: &Cell, model: &Model, partition: &ParamPartition, data: &Batch, seed: u64) -> Result<Model> {
    let params = model.params();
    let net = model.network();
    let k = partition.k();
    let shifted = |a: Vec<f64>| model.apply_corruption(&a, partition).map_err(BenchError::from);
    match cell.spec {
        SweepSpec::MultiStep {
            p,
            n,
            steps,
            alpha,
            batch_size,
            ..
        } => {
            let eps = cell.value;
            if eps == 0.0 {
                return Ok(model.clone());
            }
            let set = ConstraintSet::new(parse_norm(p)?, eps, *n)?;
            let k_steps = steps.unwrap_or_else(|| data.len().div_ceil((*batch_size).max(1)).max(1));
            let cfg = MultiStepConfig {
                steps: Some(k_steps),
                alpha: alpha.unwrap_or(1.5 * eps / k_steps as f64),
                batch_size: *batch_size,
                seed,
            };
            let trace = multi_step_corrupt(net, params, data, &set, &cfg, partition)?;
            shifted(trace.final_a)
        }
        SweepSpec::Gradient { p, n, .. } => {
            let eps = cell.value;
            if eps == 0.0 {
                return Ok(model.clone());
            }
            let set = ConstraintSet::new(parse_norm(p)?, eps, *n)?;
            shifted(gradient_corruption(net, params, data, &set, partition)?.a)
        }
        SweepSpec::Gaussian { .. } => {
            let noise = NoiseKind::Gaussian { sigma: cell.value };
            shifted(sample(noise, k, 1, seed)?.remove(0))
        }
        SweepSpec::Uniform { .. } => {
            let noise = NoiseKind::Uniform { bound: cell.value };
            shifted(sample(noise, k, 1, seed)?.remove(0))
        }
        SweepSpec::Quantize { .. } => Ok(quantize_model(model, cell.value as u32, Some(partition))?),
    }
}

pub fn metric_value(model: &Model, data: &Batch, metric: Metric) -> Result<f64> {
    Ok(match metric {
        Metric::Loss => model.loss(data)?,
        Metric::Accuracy => model.accuracy(data)?,
    })
}

/// Runs every (method, setting, seed) cell on `data` (the test split) and
/// returns one row per cell and metric, sorted by sweep entry, grid
/// position, seed and metric. A failing cell yields error rows and the
/// sweep continues.
pub fn run_probe_sweep(
    model: &Model,
    partition: &ParamPartition,
    sweeps: &[SweepSpec],
    data: &Batch,
    seeds: &[u64],
    metrics: &[Metric],
) -> Result<Vec<ReportRow>> {
    if partition.total() != model.params().len() {
        return Err(BenchError::Config("partition does not match the model".into()));
    }
    let clean: Vec<f64> = metrics
        .iter()
        .map(|&m| metric_value(model, data, m))
        .collect::<Result<_>>()?;
    let cells: Vec<Cell> = sweeps
        .iter()
        .enumerate()
        .flat_map(|(i, s)| expand(s, i, data.len()))
        .collect();
    let jobs: Vec<(&Cell, u64)> = cells.iter().flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let mut results: Vec<((usize, usize), u64, Vec<ReportRow>)> = jobs
        .par_iter()
        .map(|&(cell, seed)| {
            // Each cell works on its own copy of the model.
            let local = model.clone();
            let outcome = corrupt(cell, &local, partition, data, seed).and_then(|m| {
                metrics
                    .iter()
                    .map(|&metric| metric_value(&m, data, metric))
                    .collect::<Result<Vec<f64>>>()
            });
            let rows = metrics
                .iter()
                .enumerate()
                .map(|(i, metric)| {
                    let (corrupted, error) = match &outcome {
                        Ok(v) => (Some(v[i]), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    ReportRow {
                        method: cell.spec.method().to_string(),
                        setting: cell.setting.clone(),
                        value: cell.value,
                        seed,
                        metric: metric.name().to_string(),
                        clean: clean[i],
                        corrupted,
                        error,
                    }
                })
                .collect();
            (cell.order, seed, rows)
        })
        .collect();
    results.sort_by_key(|r| (r.0, r.1));
    Ok(results.into_iter().flat_map(|r| r.2).collect())
}

pub fn write_rows_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::Data(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| BenchError::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| BenchError::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| BenchError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// Loss change when corruption is restricted to one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProbeRow {
    pub group: String,
    pub start: usize,
    pub end: usize,
    pub params: usize,
    pub clean_loss: f64,
    pub corrupted_loss: f64,
    pub delta_loss: f64,
}

/// Named parameter groups for a grouping scheme.
pub fn parameter_groups(model: &Model, grouping: Grouping) -> Vec<(String, Range<usize>)> {
    let net = model.network();
    match grouping {
        Grouping::All => vec![("all".into(), 0..net.param_count())],
        Grouping::Layer => net
            .layer_ranges()
            .into_iter()
            .enumerate()
            .map(|(l, r)| (format!("layer{l}"), r))
            .collect(),
        Grouping::Tensor => net
            .tensor_ranges()
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    format!("layer{}.{}", i / 2, if i % 2 == 0 { "weight" } else { "bias" }),
                    r,
                )
            })
            .collect(),
    }
}

/// Multi-step corruption restricted to each group in turn.
pub fn layer_probe(
    model: &Model,
    groups: &[(String, Range<usize>)],
    spec: &LayerProbeSpec,
    data: &Batch,
    seed: u64,
) -> Result<Vec<LayerProbeRow>> {
    let total = model.params().len();
    let set = ConstraintSet::new(parse_norm(&spec.p)?, spec.epsilon, spec.n)?;
    let clean_loss = model.loss(data)?;
    let alpha = spec.alpha.unwrap_or(1.5 * spec.epsilon / spec.steps.max(1) as f64);
    groups
        .iter()
        .map(|(name, range)| {
            if range.is_empty() {
                return Err(BenchError::Config(format!("parameter group {name} is empty")));
            }
            let partition = ParamPartition::from_ranges(total, std::slice::from_ref(range))?;
            let corrupted = if spec.epsilon == 0.0 {
                model.clone()
            } else {
                let cfg = MultiStepConfig {
                    steps: Some(spec.steps),
                    alpha,
                    batch_size: spec.batch_size,
                    seed,
                };
                let trace = multi_step_corrupt(model.network(), model.params(), data, &set, &cfg, &partition)?;
                model.apply_corruption(&trace.final_a, &partition)?
            };
            let corrupted_loss = corrupted.loss(data)?;
            Ok(LayerProbeRow {
                group: name.clone(),
                start: range.start,
                end: range.end,
                params: range.len(),
                clean_loss,
                corrupted_loss,
                delta_loss: corrupted_loss - clean_loss,
            })
        })
        .collect()
}
