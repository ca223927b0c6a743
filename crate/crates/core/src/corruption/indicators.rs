//! Loss-change indicators: the expected change under random sphere
//! corruption (`Δ_ave`) and the worst-case change (`Δ_max`).

use rayon::prelude::*;

use super::sampling::{map_samples, NoiseKind};
use super::{gradient_corruption, multi_step_corrupt, MultiStepConfig};
use crate::constraints::{ConstraintSet, NormOrder};
use crate::error::{invalid, Result};
use crate::hessian::mean_and_std_err;
use crate::partition::ParamPartition;
use crate::surface::LossSurface;
use crate::tensor::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatorKind {
    /// Monte Carlo mean over sphere corruptions.
    DeltaAveMonteCarlo,
    /// `tr(H) ε² / 2k`.
    DeltaAvePredicted,
    /// Observed change after multi-step corruption.
    DeltaMaxMultiStep,
    /// First-order value `ε‖h‖_{p/(p−1)}`.
    DeltaMaxFirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorEstimate {
    pub kind: IndicatorKind,
    /// Signed mean loss change.
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
    /// The gradient vanished and the estimate fell back to 0.
    pub degenerate: bool,
}

/// `tr(H) ε² / (2k)`: the second-order prediction of `Δ_ave` on the sphere
/// of radius `ε`.
pub fn predict_delta_ave(trace: f64, k: usize, eps: f64) -> Result<f64> {
    if k == 0 {
        return Err(invalid("predict_delta_ave needs k >= 1"));
    }
    Ok(trace * eps * eps / (2.0 * k as f64))
}

/// Monte Carlo estimate of `E[L(w + a) − L(w)]` for `a` uniform on the L2
/// sphere of radius `eps` in the corruptible subspace.
pub fn estimate_delta_ave<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    batch: &Batch,
    eps: f64,
    samples: usize,
    seed: u64,
    partition: &ParamPartition,
) -> Result<IndicatorEstimate> {
    partition.validate_for(surface.dim())?;
    if samples < 2 {
        return Err(invalid("Monte Carlo estimate needs at least 2 samples"));
    }
    if eps == 0.0 {
        return Ok(IndicatorEstimate {
            kind: IndicatorKind::DeltaAveMonteCarlo,
            mean: 0.0,
            std_err: 0.0,
            samples,
            degenerate: false,
        });
    }
    let base = surface.loss(params, batch)?;
    let changes = map_samples(NoiseKind::Sphere { radius: eps }, partition.k(), samples, seed, |a| {
        partition
            .perturbed(params, a)
            .and_then(|w| surface.loss(&w, batch))
            .map(|l| l - base)
    })?;
    let changes: Vec<f64> = changes.into_par_iter().collect::<Result<_>>()?;
    let (mean, std_err) = mean_and_std_err(&changes);
    Ok(IndicatorEstimate {
        kind: IndicatorKind::DeltaAveMonteCarlo,
        mean,
        std_err,
        samples,
        degenerate: false,
    })
}

/// How `Δ_max` is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaMaxMethod {
    /// Closed-form first-order value; `ε‖g‖₂` on the dense L2 ball.
    FirstOrder,
    /// Empirical lower bound from a multi-step corruption run.
    MultiStep(MultiStepConfig),
}

pub fn estimate_delta_max<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    data: &Batch,
    set: &ConstraintSet,
    method: DeltaMaxMethod,
    partition: &ParamPartition,
) -> Result<IndicatorEstimate> {
    let zero = |kind| IndicatorEstimate {
        kind,
        mean: 0.0,
        std_err: 0.0,
        samples: 1,
        degenerate: false,
    };
    match method {
        DeltaMaxMethod::FirstOrder => {
            if set.epsilon == 0.0 {
                return Ok(zero(IndicatorKind::DeltaMaxFirstOrder));
            }
            let r = gradient_corruption(surface, params, data, set, partition)?;
            Ok(IndicatorEstimate {
                mean: r.first_order_gain,
                degenerate: r.degenerate,
                ..zero(IndicatorKind::DeltaMaxFirstOrder)
            })
        }
        DeltaMaxMethod::MultiStep(cfg) => {
            if set.epsilon == 0.0 {
                return Ok(zero(IndicatorKind::DeltaMaxMultiStep));
            }
            let trace = multi_step_corrupt(surface, params, data, set, &cfg, partition)?;
            let base = surface.loss(params, data)?;
            let corrupted = surface.loss(&partition.perturbed(params, &trace.final_a)?, data)?;
            Ok(IndicatorEstimate {
                mean: corrupted - base,
                degenerate: trace.steps.iter().all(|s| s.skipped),
                ..zero(IndicatorKind::DeltaMaxMultiStep)
            })
        }
    }
}

/// Convenience for the dense L2 sphere used by the random-corruption
/// analysis.
pub fn l2_ball(eps: f64) -> Result<ConstraintSet> {
    ConstraintSet::ball(NormOrder::L2, eps)
}
