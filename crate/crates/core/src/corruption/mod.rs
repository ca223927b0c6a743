//! Parameter-corruption generators and the analysis built on them.
//!
//! * [`gradient_corruption`]: one-shot maximizer of the first-order loss
//!   change `aᵀg` over the constraint set.
//! * [`multi_step_corrupt`]: projected ascent `a_k = Π_S(a_{k−1} + u_k)`
//!   over cycling batches.
//! * [`sampling`]: random sphere, Gaussian and uniform corruptions.
//! * [`eta`], [`indicators`], [`bounds`]: loss-change indicators, the
//!   alignment statistic and the closed-form bounds.

pub mod bounds;
pub mod eta;
pub mod indicators;
pub mod sampling;

use rand::seq::SliceRandom;

use crate::constraints::{constrained_argmax, norm, project, step_update, ConstraintSet};
use crate::error::{check_len, invalid, Error, Result};
use crate::partition::ParamPartition;
use crate::rng::{streams, substream};
use crate::surface::LossSurface;
use crate::tensor::Batch;

/// Slack used when checking norm invariants of generated corruptions.
pub const NORM_SLACK: f64 = 1e-9;

/// Result of [`gradient_corruption`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCorruption {
    /// Corruption over the corruptible coordinates (length `k`).
    pub a: Vec<f64>,
    /// First-order loss change `aᵀg = ε‖h‖_{p/(p−1)}`.
    pub first_order_gain: f64,
    /// The masked gradient vanished on its top-`n` support; `a` is zero.
    pub degenerate: bool,
}

/// Closed-form corruption maximizing `aᵀg` over `set`, where `g` is the
/// gradient at `params` restricted to the corruptible coordinates.
pub fn gradient_corruption<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    batch: &Batch,
    set: &ConstraintSet,
    partition: &ParamPartition,
) -> Result<GradientCorruption> {
    partition.validate_for(surface.dim())?;
    let (_, grad) = surface.loss_grad(params, batch)?;
    let g = partition.gather(&grad);
    match constrained_argmax(&g, set) {
        Ok(r) => Ok(GradientCorruption {
            a: r.a,
            first_order_gain: r.value,
            degenerate: false,
        }),
        Err(Error::DegenerateGradient) => Ok(GradientCorruption {
            a: vec![0.0; partition.k()],
            first_order_gain: 0.0,
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}

/// One projected ascent step `Π_S(a + u)` with `u = step_update(g, α, p)`.
/// Returns `None` when the gradient is degenerate.
pub(crate) fn ascent_step(a: &[f64], g: &[f64], alpha: f64, set: &ConstraintSet) -> Result<Option<Vec<f64>>> {
    match step_update(g, alpha, set.p) {
        Ok(u) => {
            let moved: Vec<f64> = a.iter().zip(&u).map(|(x, y)| x + y).collect();
            project(&moved, set).map(Some)
        }
        Err(Error::DegenerateGradient) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Settings of a multi-step corruption run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiStepConfig {
    /// Number of steps `K`; `None` runs one pass over the data,
    /// `⌈|D| / |B|⌉` steps.
    pub steps: Option<usize>,
    /// Step size `α = ‖u_k‖_p`.
    pub alpha: f64,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// `a_k` after projection.
    pub a: Vec<f64>,
    /// `L(w + a_k; B_k)`.
    pub loss: f64,
    pub batch_index: usize,
    /// The gradient was degenerate; `a_k = a_{k−1}`.
    pub skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceWarning {
    /// `Kα < ε`: the boundary of `S` may be unreachable.
    StepBudgetBelowRadius,
    /// Step `k` (1-based) had a degenerate gradient and was skipped.
    DegenerateStep(usize),
}

/// Record of a multi-step corruption run.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionTrace {
    pub steps: Vec<TraceStep>,
    /// `a_K`.
    pub final_a: Vec<f64>,
    pub set: ConstraintSet,
    pub alpha: f64,
    pub warnings: Vec<TraceWarning>,
}

impl CorruptionTrace {
    pub fn k_steps(&self) -> usize {
        self.steps.len()
    }

    /// Sum of the step norms actually taken: `α` times the non-skipped
    /// steps.
    pub fn step_norm_sum(&self) -> f64 {
        self.alpha * self.steps.iter().filter(|s| !s.skipped).count() as f64
    }

    /// Checks `‖a_k‖_p ≤ ε` for every step and `‖a_K‖_p ≤ Σ‖u_k‖_p ≤ Kα`.
    pub fn check_invariants(&self) -> Result<()> {
        for (k, step) in self.steps.iter().enumerate() {
            let r = norm(&step.a, self.set.p);
            if r > self.set.epsilon + NORM_SLACK {
                return Err(Error::Numerical(format!(
                    "step {}: ‖a‖ = {r} exceeds radius {}",
                    k + 1,
                    self.set.epsilon
                )));
            }
            if let Some(n) = self.set.n {
                if crate::constraints::nnz(&step.a) > n {
                    return Err(Error::Numerical(format!("step {}: too many nonzeros", k + 1)));
                }
            }
        }
        let r = norm(&self.final_a, self.set.p);
        let budget = self.alpha * self.steps.len() as f64;
        if r > self.step_norm_sum() + NORM_SLACK || r > budget + NORM_SLACK {
            return Err(Error::Numerical(format!(
                "‖a_K‖ = {r} exceeds accumulated step norm {}",
                self.step_norm_sum()
            )));
        }
        Ok(())
    }
}

/// Batches visited by a probe: seeded shuffles of `data`, one per pass,
/// concatenated until `steps` batches are produced.
fn probe_batches(data: &Batch, batch_size: usize, steps: usize, seed: u64) -> Vec<Batch> {
    if data.is_empty() {
        return vec![data.clone(); steps];
    }
    let mut rng = substream(seed, streams::PROBE_ORDER);
    let mut out = Vec::with_capacity(steps);
    while out.len() < steps {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for b in data.chunks(&order, batch_size) {
            if out.len() == steps {
                break;
            }
            out.push(b);
        }
    }
    out
}

/// Multi-step adversarial corruption.
///
/// Starting from `a_0 = 0`, each step takes the gradient at `w + a_{k−1}`
/// on the next batch, moves by `u_k = step_update(g, α, p)` and projects
/// back onto `set` (which must use `p ∈ {2, ∞}`).
pub fn multi_step_corrupt<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    data: &Batch,
    set: &ConstraintSet,
    cfg: &MultiStepConfig,
    partition: &ParamPartition,
) -> Result<CorruptionTrace> {
    partition.validate_for(surface.dim())?;
    check_len("parameter vector", surface.dim(), params.len())?;
    if cfg.batch_size == 0 {
        return Err(invalid("batch size must be >= 1"));
    }
    if !(cfg.alpha > 0.0) || !cfg.alpha.is_finite() {
        return Err(invalid(format!("step size must be > 0, got {}", cfg.alpha)));
    }
    let steps = match cfg.steps {
        Some(0) => return Err(invalid("multi-step corruption needs K >= 1")),
        Some(k) => k,
        None if data.is_empty() => return Err(invalid("K must be given for data-free surfaces")),
        None => data.len().div_ceil(cfg.batch_size),
    };
    let k = partition.k();
    set.budget(k)?;

    let mut warnings = Vec::new();
    if (steps as f64) * cfg.alpha < set.epsilon {
        warnings.push(TraceWarning::StepBudgetBelowRadius);
    }

    let batches = probe_batches(data, cfg.batch_size, steps, cfg.seed);
    let mut a = vec![0.0; k];
    let mut point = params.to_vec();
    let mut grad = vec![0.0; surface.dim()];
    let mut trace_steps = Vec::with_capacity(steps);
    for (i, batch) in batches.iter().enumerate() {
        partition.perturb_into(&mut point, params, &a);
        surface.loss_grad_into(&point, batch, &mut grad)?;
        let g = partition.gather(&grad);
        let skipped = match ascent_step(&a, &g, cfg.alpha, set)? {
            Some(next) => {
                a = next;
                false
            }
            None => {
                warnings.push(TraceWarning::DegenerateStep(i + 1));
                true
            }
        };
        partition.perturb_into(&mut point, params, &a);
        let loss = surface.loss(&point, batch)?;
        trace_steps.push(TraceStep {
            a: a.clone(),
            loss,
            batch_index: i,
            skipped,
        });
    }
    Ok(CorruptionTrace {
        steps: trace_steps,
        final_a: a,
        set: *set,
        alpha: cfg.alpha,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::NormOrder;
    use crate::surface::Quadratic;

    fn half_norm_sq() -> Quadratic {
        Quadratic::diagonal(&[1.0, 1.0], vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn gradient_corruption_on_half_norm_squared() {
        let set = ConstraintSet::ball(NormOrder::L2, 0.1).unwrap();
        let r = gradient_corruption(
            &half_norm_sq(),
            &[3.0, 4.0],
            &Batch::empty(),
            &set,
            &ParamPartition::all(2),
        )
        .unwrap();
        assert!((r.a[0] - 0.06).abs() < 1e-15 && (r.a[1] - 0.08).abs() < 1e-15);
        assert!((r.first_order_gain - 0.5).abs() < 1e-14);
        assert!(!r.degenerate);
    }

    #[test]
    fn gradient_corruption_at_stationary_point() {
        let set = ConstraintSet::ball(NormOrder::L2, 0.1).unwrap();
        let r = gradient_corruption(
            &half_norm_sq(),
            &[0.0, 0.0],
            &Batch::empty(),
            &set,
            &ParamPartition::all(2),
        )
        .unwrap();
        assert!(r.degenerate);
        assert_eq!(r.a, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_corruption_respects_mask() {
        let set = ConstraintSet::ball(NormOrder::L2, 1.0).unwrap();
        let part = ParamPartition::from_mask(vec![false, true]);
        let r = gradient_corruption(&half_norm_sq(), &[3.0, 4.0], &Batch::empty(), &set, &part).unwrap();
        assert_eq!(r.a, vec![1.0]);
        assert_eq!(part.scatter(&r.a), vec![0.0, 1.0]);
    }

    #[test]
    fn single_linf_step_matches_gradient_corruption() {
        let q = Quadratic::new(vec![2.0, 0.3, 0.3, 1.0], vec![0.5, -1.0]).unwrap();
        let w = [0.2, 0.4];
        let set = ConstraintSet::ball(NormOrder::Infinity, 0.05).unwrap();
        let part = ParamPartition::all(2);
        let cfg = MultiStepConfig {
            steps: Some(1),
            alpha: 0.08,
            batch_size: 1,
            seed: 0,
        };
        let trace = multi_step_corrupt(&q, &w, &Batch::empty(), &set, &cfg, &part).unwrap();
        let one_shot = gradient_corruption(&q, &w, &Batch::empty(), &set, &part).unwrap();
        assert_eq!(trace.final_a, one_shot.a);
    }

    #[test]
    fn zero_radius_stays_at_origin() {
        let q = Quadratic::new(vec![2.0, 0.3, 0.3, 1.0], vec![0.5, -1.0]).unwrap();
        let w = [0.2, 0.4];
        let baseline = q.loss(&w, &Batch::empty()).unwrap();
        let set = ConstraintSet::ball(NormOrder::L2, 0.0).unwrap();
        let cfg = MultiStepConfig {
            steps: Some(5),
            alpha: 0.1,
            batch_size: 1,
            seed: 0,
        };
        let trace = multi_step_corrupt(&q, &w, &Batch::empty(), &set, &cfg, &ParamPartition::all(2)).unwrap();
        assert_eq!(trace.final_a, vec![0.0, 0.0]);
        assert!(trace.steps.iter().all(|s| s.loss == baseline));
    }

    #[test]
    fn small_steps_beat_single_step_on_convex_quadratic() {
        let q = Quadratic::new(vec![4.0, 1.5, 1.5, 1.0], vec![1.0, 0.2]).unwrap();
        let w = [0.0, 0.0];
        let eps = 0.5;
        let set = ConstraintSet::ball(NormOrder::L2, eps).unwrap();
        let part = ParamPartition::all(2);
        let base = q.loss(&w, &Batch::empty()).unwrap();
        let single = gradient_corruption(&q, &w, &Batch::empty(), &set, &part).unwrap();
        let single_change = q
            .loss(&part.perturbed(&w, &single.a).unwrap(), &Batch::empty())
            .unwrap()
            - base;
        let cfg = MultiStepConfig {
            steps: Some(50),
            alpha: 1.5 * eps / 50.0,
            batch_size: 1,
            seed: 0,
        };
        let trace = multi_step_corrupt(&q, &w, &Batch::empty(), &set, &cfg, &part).unwrap();
        let multi_change = trace.steps.last().unwrap().loss - base;
        assert!(multi_change >= single_change, "{multi_change} < {single_change}");
        trace.check_invariants().unwrap();
    }

    #[test]
    fn budget_warning_and_degenerate_steps_recorded() {
        let q = Quadratic::diagonal(&[1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let set = ConstraintSet::ball(NormOrder::L2, 1.0).unwrap();
        let cfg = MultiStepConfig {
            steps: Some(2),
            alpha: 0.1,
            batch_size: 1,
            seed: 0,
        };
        let trace = multi_step_corrupt(&q, &[0.0, 0.0], &Batch::empty(), &set, &cfg, &ParamPartition::all(2)).unwrap();
        assert!(trace.warnings.contains(&TraceWarning::StepBudgetBelowRadius));
        assert!(trace.warnings.contains(&TraceWarning::DegenerateStep(1)));
        assert!(trace.steps.iter().all(|s| s.skipped));
    }

    #[test]
    fn one_pass_default_step_count() {
        use crate::nn::{Activation, Head, Network};
        use crate::tensor::{Targets, Tensor};
        let net = Network::mlp(&[2, 3, 2], Activation::Tanh, Head::SoftmaxCrossEntropy).unwrap();
        let params = net.init_params(1);
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 7.0]).collect();
        let data = Batch::new(
            Tensor::from_rows(&rows).unwrap(),
            Targets::Classes((0..10).map(|i| i % 2).collect()),
        )
        .unwrap();
        let set = ConstraintSet::ball(NormOrder::Infinity, 0.01).unwrap();
        let cfg = MultiStepConfig {
            steps: None,
            alpha: 0.005,
            batch_size: 3,
            seed: 4,
        };
        let trace = multi_step_corrupt(
            &net,
            &params,
            &data,
            &set,
            &cfg,
            &ParamPartition::all(net.param_count()),
        )
        .unwrap();
        assert_eq!(trace.k_steps(), 4);
        trace.check_invariants().unwrap();
    }
}
