//! Group-wise uniform signed-integer weight quantization.
//!
//! A group `W` (one weight matrix or bias vector) is mapped onto the grid
//! `w₀ · {−(2^{n−1}−1), …, 2^{n−1}−1}` with `w₀ = max|W| / (2^{n−1} − 1)`.
//! Halves round away from zero.

use crate::error::{invalid, Result};
use crate::nn::Model;
use crate::partition::ParamPartition;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGroup {
    pub values: Vec<f64>,
    /// Grid spacing `w₀`; zero for an all-zero group.
    pub scale: f64,
    /// Integer level of each element.
    pub levels: Vec<i64>,
}

/// Largest level magnitude `2^{n−1} − 1` for `bits`.
pub fn max_level(bits: u32) -> Result<i64> {
    if !(2..=53).contains(&bits) {
        return Err(invalid(format!("bit width must lie in 2..=53, got {bits}")));
    }
    Ok((1i64 << (bits - 1)) - 1)
}

/// Quantizes one group. Elements attaining `max|W|` are reproduced exactly,
/// which makes the map idempotent.
pub fn quantize_group(values: &[f64], bits: u32) -> Result<QuantizedGroup> {
    let top = max_level(bits)?;
    if values.is_empty() {
        return Err(invalid("cannot quantize an empty group"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("cannot quantize non-finite weights"));
    }
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Ok(QuantizedGroup {
            values: values.to_vec(),
            scale: 0.0,
            levels: vec![0; values.len()],
        });
    }
    let scale = max_abs / top as f64;
    let mut out = Vec::with_capacity(values.len());
    let mut levels = Vec::with_capacity(values.len());
    for &v in values {
        if v.abs() == max_abs {
            out.push(v);
            levels.push(top * v.signum() as i64);
            continue;
        }
        let level = round_level(v * top as f64 / max_abs);
        // The outermost level is pinned to max|W| itself so a second pass
        // sees the same scale.
        out.push(if level.abs() == top as f64 {
            max_abs.copysign(v)
        } else {
            level * scale
        });
        levels.push(level as i64);
    }
    Ok(QuantizedGroup {
        values: out,
        scale,
        levels,
    })
}

/// Rounds half away from zero, treating ratios within a few ulps of a half
/// as exact halves so decimal inputs like `0.45 / (0.9 / 7)` land on the
/// intended level.
fn round_level(r: f64) -> f64 {
    let floor = r.abs().floor();
    let frac = r.abs() - floor;
    if (frac - 0.5).abs() <= 4.0 * f64::EPSILON * r.abs().max(1.0) {
        return (floor + 1.0).copysign(r);
    }
    r.round()
}

/// Quantizes every weight matrix and bias vector of `model` independently.
/// With a partition, frozen coordinates keep their original values.
pub fn quantize_model(model: &Model, bits: u32, partition: Option<&ParamPartition>) -> Result<Model> {
    max_level(bits)?;
    let original = model.params();
    let mut params = original.to_vec();
    for range in model.network().tensor_ranges() {
        let q = quantize_group(&original[range.clone()], bits)?;
        params[range].copy_from_slice(&q.values);
    }
    if let Some(part) = partition {
        crate::error::check_len("partition mask", original.len(), part.total())?;
        for (i, &corruptible) in part.mask().iter().enumerate() {
            if !corruptible {
                params[i] = original[i];
            }
        }
    }
    Model::new(model.network().clone(), params)
}
