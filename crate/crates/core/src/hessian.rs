//! Hutchinson estimation of the Hessian trace.
//!
//! The Hessian is never formed. Each probe `z` has independent ±1 entries
//! and contributes `zᵀHz`, where `Hz` comes from a central difference of the
//! gradient: `(∇L(w + hz) − ∇L(w − hz)) / 2h` with `h = 1e-4`.

use rand::Rng;

use crate::error::{check_len, invalid, Error, Result};
use crate::partition::ParamPartition;
use crate::rng::{streams, substream};
use crate::surface::LossSurface;
use crate::tensor::Batch;

/// Finite-difference step for Hessian-vector products.
pub const HVP_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEstimate {
    pub trace: f64,
    /// Standard error of the probe mean (0 for a single probe).
    pub std_err: f64,
    pub probes: usize,
}

/// `H v` restricted to the corruptible coordinates.
pub fn hessian_vector_product<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    batch: &Batch,
    partition: &ParamPartition,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_len("probe vector", partition.k(), v.len())?;
    let step: Vec<f64> = v.iter().map(|x| x * HVP_STEP).collect();
    let neg: Vec<f64> = step.iter().map(|x| -x).collect();
    let (lp, gp) = surface.loss_grad(&partition.perturbed(params, &step)?, batch)?;
    let (lm, gm) = surface.loss_grad(&partition.perturbed(params, &neg)?, batch)?;
    if !lp.is_finite() || !lm.is_finite() {
        return Err(Error::Numerical("non-finite loss in Hessian-vector product".into()));
    }
    let gp = partition.gather(&gp);
    let gm = partition.gather(&gm);
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * HVP_STEP)).collect())
}

/// Estimates `tr(H)` over the corruptible coordinates with `probes`
/// Rademacher probes.
pub fn hessian_trace_estimate<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    batch: &Batch,
    partition: &ParamPartition,
    probes: usize,
    seed: u64,
) -> Result<TraceEstimate> {
    if probes == 0 {
        return Err(invalid("hutchinson estimator needs at least one probe"));
    }
    partition.validate_for(surface.dim())?;
    let mut rng = substream(seed, streams::HUTCHINSON);
    let mut samples = Vec::with_capacity(probes);
    for _ in 0..probes {
        let z: Vec<f64> = (0..partition.k())
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let hz = hessian_vector_product(surface, params, batch, partition, &z)?;
        samples.push(z.iter().zip(&hz).map(|(a, b)| a * b).sum::<f64>());
    }
    let (mean, std_err) = mean_and_std_err(&samples);
    if !mean.is_finite() {
        return Err(Error::Numerical("non-finite trace estimate".into()));
    }
    Ok(TraceEstimate {
        trace: mean,
        std_err,
        probes,
    })
}

/// Sample mean and standard error of the mean.
pub(crate) fn mean_and_std_err(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
