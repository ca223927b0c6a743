//! Adversarial parameter defense.
//!
//! The defended objective on a batch `B` averages the loss over the `K + 1`
//! points of a virtual multi-step corruption,
//!
//! ```text
//! (1 / (K + 1)) Σ_{k=0}^{K} L(w + a_k, θ; B),   a_0 = 0,  a_k = Π_S(a_{k−1} + u_k)
//! ```
//!
//! where `u_k` is the fixed-size ascent step at `w + a_{k−1}` on the same
//! batch. The gradient at `w + a_{k−1}` serves both the objective and the
//! next corruption step, so a defended step costs `K + 1` forward/backward
//! passes and keeps two gradient-sized buffers: the running sum and the
//! current gradient.
//!
//! Also provided: gradient-corruption training (ACRT, with SAM as the
//! `alpha_mix = 1` case), adversarial weight perturbation with FGSM inputs
//! (AWP), and the SGD training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::constraints::{constrained_argmax, norm, ConstraintSet, NormOrder};
use crate::corruption::ascent_step;
use crate::error::{check_len, invalid, Error, Result};
use crate::hessian::hessian_vector_product;
use crate::nn::{Model, Network};
use crate::partition::ParamPartition;
use crate::rng::{streams, substream};
use crate::surface::LossSurface;
use crate::tensor::{Batch, Targets};

/// Which defended objective a training step minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// Average loss over the `K + 1` multi-step corruption points.
    MultiStepAvg,
    /// `(1 − α_mix) L(w) + α_mix L(w + â)` with the gradient corruption
    /// `â`; `substitutive` swaps in `L(w) + α_mix âᵀ∇L(w)`.
    Acrt { alpha_mix: f64, substitutive: bool },
    /// ACRT with `alpha_mix = 1`.
    Sam,
    /// FGSM-perturbed inputs plus `inner_steps` of projected ascent on the
    /// parameters.
    Awp { inner_steps: usize, input_eps: f64 },
}

/// Starting point `a_0` of the virtual corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorruptionInit {
    #[default]
    Zero,
    /// Random point with `‖a_0‖_p = ε`: uniform on the L2 sphere for
    /// `p = 2`, uniform in the cube rescaled to the cube surface for
    /// `p = ∞`.
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseConfig {
    /// Corruption steps `K` per training step.
    pub steps: usize,
    /// Step size `α`; `None` uses `1.5 ε / K`.
    pub alpha: Option<f64>,
    pub set: ConstraintSet,
    /// Epochs before this index train without defense.
    pub start_epoch: usize,
    /// Corruptible coordinates; `None` means all parameters.
    pub partition: Option<ParamPartition>,
    pub variant: Variant,
    pub init: CorruptionInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigWarning {
    /// `Kα < ε`.
    StepBudgetBelowRadius,
}

impl DefenseConfig {
    /// Multi-step average defense over the dense `ℓp` ball.
    pub fn multi_step(steps: usize, p: NormOrder, epsilon: f64) -> Result<Self> {
        Ok(Self {
            steps,
            alpha: None,
            set: ConstraintSet::ball(p, epsilon)?,
            start_epoch: 0,
            partition: None,
            variant: Variant::MultiStepAvg,
            init: CorruptionInit::Zero,
        })
    }

    /// `α`, defaulting to `1.5 ε / K`.
    pub fn step_size(&self) -> f64 {
        let k = match self.variant {
            Variant::Awp { inner_steps, .. } => inner_steps,
            _ => self.steps,
        };
        self.alpha.unwrap_or_else(|| 1.5 * self.set.epsilon / k.max(1) as f64)
    }

    pub fn partition_for(&self, total: usize) -> ParamPartition {
        self.partition.clone().unwrap_or_else(|| ParamPartition::all(total))
    }

    pub fn validate(&self, total: usize) -> Result<Vec<ConfigWarning>> {
        self.partition_for(total).validate_for(total)?;
        let mut warnings = Vec::new();
        match self.variant {
            Variant::Acrt { alpha_mix, .. } if !(0.0..=1.0).contains(&alpha_mix) => {
                return Err(invalid(format!("alpha_mix must lie in [0, 1], got {alpha_mix}")));
            }
            Variant::Awp { inner_steps: 0, .. } => {
                return Err(invalid("AWP needs inner_steps >= 1"));
            }
            Variant::Awp { input_eps, .. } if !(input_eps >= 0.0) => {
                return Err(invalid("AWP input_eps must be >= 0"));
            }
            _ => {}
        }
        let alpha = self.step_size();
        if self.set.epsilon > 0.0 && !(alpha > 0.0) {
            return Err(invalid(format!("step size must be > 0, got {alpha}")));
        }
        if matches!(self.variant, Variant::MultiStepAvg)
            && self.steps > 0
            && alpha * (self.steps as f64) < self.set.epsilon
        {
            warnings.push(ConfigWarning::StepBudgetBelowRadius);
        }
        Ok(warnings)
    }
}

/// Objective value and gradient of one defended step.
#[derive(Debug, Clone, PartialEq)]
pub struct DefenseStep {
    pub objective: f64,
    /// Gradient with respect to all parameters (`w` and `θ`).
    pub grad: Vec<f64>,
    /// Loss at the uncorrupted point.
    pub clean_loss: f64,
    /// Last virtual corruption generated.
    pub final_a: Vec<f64>,
    /// Steps whose gradient was degenerate (so `a_k = a_{k−1}`).
    pub skipped_steps: usize,
}

fn random_boundary_point(set: &ConstraintSet, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if set.epsilon == 0.0 {
        return Ok(vec![0.0; k]);
    }
    let mut a: Vec<f64> = match set.p {
        NormOrder::Infinity => (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        _ => (0..k).map(|_| rng.sample(StandardNormal)).collect(),
    };
    let r = norm(&a, set.p);
    if r == 0.0 {
        return Ok(vec![0.0; k]);
    }
    a.iter_mut().for_each(|v| *v *= set.epsilon / r);
    crate::constraints::project(&a, set)
}

/// Average loss over the `K + 1` virtual corruption points and its
/// gradient with the corruptions held fixed.
pub fn defense_objective_grad<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    batch: &Batch,
    cfg: &DefenseConfig,
) -> Result<DefenseStep> {
    defense_objective_grad_with(surface, params, batch, cfg, None, |_, _| {})
}

/// [`defense_objective_grad`] with an optional generator for random
/// initialization and an observer called with every `(k, a_k)`.
pub fn defense_objective_grad_with<S, F>(
    surface: &S,
    params: &[f64],
    batch: &Batch,
    cfg: &DefenseConfig,
    init_rng: Option<&mut ChaCha8Rng>,
    mut observe: F,
) -> Result<DefenseStep>
where
    S: LossSurface + ?Sized,
    F: FnMut(usize, &[f64]),
{
    if batch.is_empty() && surface.input_gradient(params, batch).is_ok_and(|g| g.is_some()) {
        return Err(invalid("defense step needs a nonempty batch"));
    }
    let dim = surface.dim();
    check_len("parameter vector", dim, params.len())?;
    let partition = cfg.partition_for(dim);
    partition.validate_for(dim)?;
    let steps = cfg.steps;
    let alpha = cfg.step_size();

    let mut a = match (cfg.init, init_rng) {
        (CorruptionInit::Boundary, Some(rng)) if steps > 0 => random_boundary_point(&cfg.set, partition.k(), rng)?,
        _ => vec![0.0; partition.k()],
    };

    let mut sum = vec![0.0; dim];
    let mut current = vec![0.0; dim];
    let mut point = params.to_vec();
    let mut objective = 0.0;
    let mut clean_loss = 0.0;
    let mut skipped_steps = 0;
    for k in 0..=steps {
        observe(k, &a);
        partition.perturb_into(&mut point, params, &a);
        let loss = surface.loss_grad_into(&point, batch, &mut current)?;
        if k == 0 {
            clean_loss = loss;
            objective = loss;
            sum.copy_from_slice(&current);
        } else {
            objective += loss;
            sum.iter_mut().zip(&current).for_each(|(s, c)| *s += c);
        }
        if k < steps {
            let g = partition.gather(&current);
            match ascent_step(&a, &g, alpha, &cfg.set)? {
                Some(next) => a = next,
                None => skipped_steps += 1,
            }
        }
    }
    let scale = (steps + 1) as f64;
    sum.iter_mut().for_each(|s| *s /= scale);
    Ok(DefenseStep {
        objective: objective / scale,
        grad: sum,
        clean_loss,
        final_a: a,
        skipped_steps,
    })
}

/// Gradient-corruption objective `(1 − α_mix) L(w) + α_mix L(w + â)`, or
/// the substitutive `L(w) + α_mix âᵀ∇L(w)` whose gradient
/// `∇L(w) + α_mix H â` uses a finite-difference Hessian-vector product.
#[allow(clippy::too_many_arguments)]
pub fn acrt_objective_grad<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    batch: &Batch,
    set: &ConstraintSet,
    partition: &ParamPartition,
    alpha_mix: f64,
    substitutive: bool,
) -> Result<DefenseStep> {
    if !(0.0..=1.0).contains(&alpha_mix) {
        return Err(invalid(format!("alpha_mix must lie in [0, 1], got {alpha_mix}")));
    }
    partition.validate_for(surface.dim())?;
    let (clean, g0) = surface.loss_grad(params, batch)?;
    let plain = |final_a| DefenseStep {
        objective: clean,
        grad: g0.clone(),
        clean_loss: clean,
        final_a,
        skipped_steps: 0,
    };
    if alpha_mix == 0.0 || set.epsilon == 0.0 {
        return Ok(plain(vec![0.0; partition.k()]));
    }
    let hat = match constrained_argmax(&partition.gather(&g0), set) {
        Ok(r) => r,
        Err(Error::DegenerateGradient) => {
            return Ok(DefenseStep {
                skipped_steps: 1,
                ..plain(vec![0.0; partition.k()])
            })
        }
        Err(e) => return Err(e),
    };
    if substitutive {
        let hv = hessian_vector_product(surface, params, batch, partition, &hat.a)?;
        let mut grad = g0.clone();
        for (&i, h) in partition.indices().iter().zip(&hv) {
            grad[i] += alpha_mix * h;
        }
        return Ok(DefenseStep {
            objective: clean + alpha_mix * hat.value,
            grad,
            clean_loss: clean,
            final_a: hat.a,
            skipped_steps: 0,
        });
    }
    let (corrupted, g1) = surface.loss_grad(&partition.perturbed(params, &hat.a)?, batch)?;
    let keep = 1.0 - alpha_mix;
    let grad = g0.iter().zip(&g1).map(|(a, b)| keep * a + alpha_mix * b).collect();
    Ok(DefenseStep {
        objective: keep * clean + alpha_mix * corrupted,
        grad,
        clean_loss: clean,
        final_a: hat.a,
        skipped_steps: 0,
    })
}

/// Single-step sign attack on the inputs:
/// `x′ = x + input_eps · sgn(∇ₓL)`. Surfaces without inputs return the
/// batch unchanged.
pub fn fgsm_batch<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    batch: &Batch,
    input_eps: f64,
) -> Result<Batch> {
    if !(input_eps >= 0.0) || !input_eps.is_finite() {
        return Err(invalid(format!("input_eps must be >= 0, got {input_eps}")));
    }
    if input_eps == 0.0 || batch.is_empty() {
        return Ok(batch.clone());
    }
    let Some(dx) = surface.input_gradient(params, batch)? else {
        return Ok(batch.clone());
    };
    let mut out = batch.clone();
    for (x, d) in out.inputs.values_mut().iter_mut().zip(dx.values()) {
        if *d != 0.0 {
            *x += input_eps * d.signum();
        }
    }
    Ok(out)
}

/// Adversarial weight perturbation: FGSM inputs, then `inner_steps` of
/// projected ascent on the parameters over the perturbed batch; the
/// objective and gradient are taken at `w + a`.
#[allow(clippy::too_many_arguments)]
pub fn awp_objective_grad<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    batch: &Batch,
    set: &ConstraintSet,
    partition: &ParamPartition,
    inner_steps: usize,
    input_eps: f64,
    alpha: f64,
) -> Result<DefenseStep> {
    if inner_steps == 0 {
        return Err(invalid("AWP needs inner_steps >= 1"));
    }
    partition.validate_for(surface.dim())?;
    let adversarial = fgsm_batch(surface, params, batch, input_eps)?;
    let clean_loss = surface.loss(params, batch)?;
    let mut a = vec![0.0; partition.k()];
    let mut point = params.to_vec();
    let mut grad = vec![0.0; surface.dim()];
    let mut skipped = 0;
    if set.epsilon > 0.0 {
        for _ in 0..inner_steps {
            partition.perturb_into(&mut point, params, &a);
            surface.loss_grad_into(&point, &adversarial, &mut grad)?;
            match ascent_step(&a, &partition.gather(&grad), alpha, set)? {
                Some(next) => a = next,
                None => skipped += 1,
            }
        }
    }
    partition.perturb_into(&mut point, params, &a);
    let objective = surface.loss_grad_into(&point, &adversarial, &mut grad)?;
    Ok(DefenseStep {
        objective,
        grad,
        clean_loss,
        final_a: a,
        skipped_steps: skipped,
    })
}

/// Plain SGD with optional momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn plain(lr: f64) -> Self {
        Self {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: SgdConfig,
    /// `None` trains the undefended baseline.
    pub defense: Option<DefenseConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean clean batch loss seen during the epoch.
    pub clean_loss: f64,
    /// Mean minimized objective (equals `clean_loss` without defense).
    pub objective: f64,
    /// Training-set accuracy after the epoch, for classification heads.
    pub accuracy: Option<f64>,
    pub defense_active: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    /// Wall-clock seconds; excluded from equality.
    pub wall_time_secs: f64,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs && self.steps == other.steps
    }
}

fn objective_for_epoch<S: LossSurface + ?Sized>(
    surface: &S,
    params: &[f64],
    batch: &Batch,
    defense: Option<&DefenseConfig>,
    active: bool,
    init_rng: &mut ChaCha8Rng,
) -> Result<DefenseStep> {
    let Some(cfg) = defense.filter(|_| active) else {
        let (loss, grad) = surface.loss_grad(params, batch)?;
        return Ok(DefenseStep {
            objective: loss,
            grad,
            clean_loss: loss,
            final_a: Vec::new(),
            skipped_steps: 0,
        });
    };
    let partition = cfg.partition_for(surface.dim());
    match cfg.variant {
        Variant::MultiStepAvg => defense_objective_grad_with(surface, params, batch, cfg, Some(init_rng), |_, _| {}),
        Variant::Acrt {
            alpha_mix,
            substitutive,
        } => acrt_objective_grad(surface, params, batch, &cfg.set, &partition, alpha_mix, substitutive),
        Variant::Sam => acrt_objective_grad(surface, params, batch, &cfg.set, &partition, 1.0, false),
        Variant::Awp { inner_steps, input_eps } => awp_objective_grad(
            surface,
            params,
            batch,
            &cfg.set,
            &partition,
            inner_steps,
            input_eps,
            cfg.step_size(),
        ),
    }
}

/// Trains `network` from `init` on `data` with SGD, minimizing the defended
/// objective from `defense.start_epoch` on. Deterministic given the seed.
pub fn train(network: &Network, init: &[f64], data: &Batch, cfg: &TrainConfig) -> Result<(Vec<f64>, TrainReport)> {
    train_surface(network, init, data, cfg, |params| match &data.targets {
        Targets::Classes(_) => network.accuracy(params, data).map(Some),
        Targets::Values(_) => Ok(None),
    })
}

/// [`train`] on a [`Model`], returning the trained model.
pub fn train_model(model: &Model, data: &Batch, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    let (params, report) = train(model.network(), model.params(), data, cfg)?;
    Ok((Model::new(model.network().clone(), params)?, report))
}

/// Generic training loop; `accuracy` is evaluated after each epoch.
pub fn train_surface<S, A>(
    surface: &S,
    init: &[f64],
    data: &Batch,
    cfg: &TrainConfig,
    accuracy: A,
) -> Result<(Vec<f64>, TrainReport)>
where
    S: LossSurface + ?Sized,
    A: Fn(&[f64]) -> Result<Option<f64>>,
{
    if cfg.epochs == 0 {
        return Err(invalid("training needs epochs >= 1"));
    }
    if cfg.batch_size == 0 || data.is_empty() {
        return Err(invalid("training needs a nonempty dataset and batch size >= 1"));
    }
    check_len("parameter vector", surface.dim(), init.len())?;
    if let Some(d) = &cfg.defense {
        d.validate(surface.dim())?;
    }
    let started = Instant::now();
    let mut order_rng = substream(cfg.seed, streams::DATA_ORDER);
    let mut init_rng = substream(cfg.seed, streams::CORRUPTION_INIT);
    let opt = cfg.optimizer;
    let mut params = init.to_vec();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut total_steps = 0;

    for epoch in 0..cfg.epochs {
        let active = cfg.defense.as_ref().is_some_and(|d| epoch >= d.start_epoch);
        order.shuffle(&mut order_rng);
        let mut clean_sum = 0.0;
        let mut objective_sum = 0.0;
        let batches = data.chunks(&order, cfg.batch_size);
        for (step, batch) in batches.iter().enumerate() {
            let out = objective_for_epoch(surface, &params, batch, cfg.defense.as_ref(), active, &mut init_rng)
                .map_err(|e| match e {
                    Error::Numerical(_) => Error::Diverged {
                        epoch,
                        step,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
            if !out.objective.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: out.objective,
                });
            }
            clean_sum += out.clean_loss;
            objective_sum += out.objective;
            for ((w, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&out.grad) {
                let d = g + opt.weight_decay * *w;
                *v = opt.momentum * *v + d;
                *w -= opt.lr * *v;
            }
            total_steps += 1;
        }
        let n = batches.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            clean_loss: clean_sum / n,
            objective: objective_sum / n,
            accuracy: accuracy(&params)?,
            defense_active: active,
        });
    }
    Ok((
        params,
        TrainReport {
            epochs,
            steps: total_steps,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    ))
}
