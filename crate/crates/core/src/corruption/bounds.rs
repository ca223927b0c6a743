//! Closed-form bounds: the accuracy of the first-order worst-case estimate
//! on quadratics, and the computable pieces of the PAC-Bayes bound.

use crate::constraints::{beta_p, constrained_argmax, g_exponent, norm, BetaForm, ConstraintSet, NormOrder};
use crate::error::{invalid, Error, Result};
use crate::surface::{LossSurface, Quadratic};
use crate::tensor::Batch;

/// Comparison of the true worst-case loss change on a quadratic with the
/// gradient-based corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundReport {
    /// `Δ_max`: largest loss change over `S`, found by the grid oracle.
    pub delta_max: f64,
    /// Maximizer found by the oracle (`a*`).
    pub oracle_argmax: Vec<f64>,
    /// Loss change of the gradient-based corruption `â`.
    pub delta_hat: f64,
    /// First-order estimate `gᵀâ = ε‖h‖_{p/(p−1)}`.
    pub first_order: f64,
    /// `Δ_max / Δ(â)` with the true loss change of `â`.
    pub loss_ratio: f64,
    /// `Δ_max / (ε‖h‖_q)`: error of the first-order estimate.
    pub estimate_ratio: f64,
    /// `(estimate_ratio − 1) · G / (L n^{g(p)} √k ε)`; 0 when `L = 0`.
    pub big_o_constant: f64,
    /// Largest Hessian eigenvalue `L`.
    pub lipschitz: f64,
    /// `G = ‖g‖₂`.
    pub gradient_norm: f64,
}

/// Evaluates the first-order error bound on `L(w + a)` for a quadratic.
///
/// `Δ_max` is found by brute force: for every support of size at most `n`,
/// directions are swept over an angular grid of spacing `resolution` and
/// scaled onto the `p`-sphere of radius `ε`, then the best grid point is
/// refined by a shrinking pattern search. The gradient-based corruption is
/// itself a candidate. Only `k ≤ 3` is supported.
pub fn error_bound_ratio(
    quadratic: &Quadratic,
    w: &[f64],
    set: &ConstraintSet,
    resolution: f64,
) -> Result<ErrorBoundReport> {
    let k = quadratic.dim();
    if k == 0 || k > 3 {
        return Err(invalid(format!("grid oracle supports 1 <= k <= 3, got {k}")));
    }
    if !(resolution > 0.0 && resolution < 1.0) {
        return Err(invalid("oracle resolution must lie in (0, 1)"));
    }
    if !(set.epsilon > 0.0) {
        return Err(invalid("error bound needs eps > 0"));
    }
    let n = set.budget(k)?;
    let empty = Batch::empty();
    let base = quadratic.loss(w, &empty)?;
    let (_, g) = quadratic.loss_grad(w, &empty)?;
    let gradient_norm = norm(&g, NormOrder::L2);
    if gradient_norm == 0.0 {
        return Err(Error::DegenerateGradient);
    }
    let change = |a: &[f64]| -> f64 {
        let shifted: Vec<f64> = w.iter().zip(a).map(|(x, y)| x + y).collect();
        quadratic.loss(&shifted, &empty).expect("lengths match") - base
    };

    let hat = constrained_argmax(
        &g,
        &ConstraintSet {
            boundary_only: true,
            ..*set
        },
    )?;
    let delta_hat = change(&hat.a);
    let first_order = hat.value;

    // â is feasible, so it is a candidate alongside the grid points.
    let mut best = (delta_hat, hat.a.clone());
    for support in supports(k, n) {
        let (value, a) = oracle_on_support(&support, k, set, resolution, &change);
        if value > best.0 {
            best = (value, a);
        }
    }
    let (delta_max, oracle_argmax) = best;

    let loss_ratio = delta_max / delta_hat;
    let estimate_ratio = delta_max / first_order;
    let lipschitz = quadratic.spectral_norm();
    let big_o_constant = if lipschitz == 0.0 {
        0.0
    } else {
        let scale = lipschitz * (n as f64).powf(g_exponent(set.p)?) * (k as f64).sqrt() * set.epsilon / gradient_norm;
        (estimate_ratio - 1.0) / scale
    };
    Ok(ErrorBoundReport {
        delta_max,
        oracle_argmax,
        delta_hat,
        first_order,
        loss_ratio,
        estimate_ratio,
        big_o_constant,
        lipschitz,
        gradient_norm,
    })
}

/// All coordinate subsets of size `1..=n`.
fn supports(k: usize, n: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << k))
        .filter(|m| (m.count_ones() as usize) <= n)
        .map(|m| (0..k).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

/// Direction on the unit sphere of dimension `d ∈ {1, 2, 3}` from angles.
fn direction(d: usize, angles: &[f64], sign: f64) -> Vec<f64> {
    match d {
        1 => vec![sign],
        2 => vec![angles[0].cos(), angles[0].sin()],
        _ => {
            let (theta, phi) = (angles[0], angles[1]);
            vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
        }
    }
}

fn oracle_on_support<F: Fn(&[f64]) -> f64>(
    support: &[usize],
    k: usize,
    set: &ConstraintSet,
    resolution: f64,
    change: &F,
) -> (f64, Vec<f64>) {
    let d = support.len();
    let embed = |dir: &[f64]| -> Vec<f64> {
        let r = norm(dir, set.p);
        let mut a = vec![0.0; k];
        for (&i, &x) in support.iter().zip(dir) {
            a[i] = set.epsilon * x / r;
        }
        a
    };
    let eval = |angles: &[f64], sign: f64| -> (f64, Vec<f64>) {
        let a = embed(&direction(d, angles, sign));
        (change(&a), a)
    };

    use std::f64::consts::PI;
    let mut best = (f64::NEG_INFINITY, Vec::new(), Vec::new());
    match d {
        1 => {
            for sign in [1.0, -1.0] {
                let (v, a) = eval(&[], sign);
                if v > best.0 {
                    best = (v, a, Vec::new());
                }
            }
            return (best.0, best.1);
        }
        2 => {
            let steps = (2.0 * PI / resolution).ceil() as usize;
            for i in 0..steps {
                let t = i as f64 * resolution;
                let (v, a) = eval(&[t], 1.0);
                if v > best.0 {
                    best = (v, a, vec![t]);
                }
            }
        }
        _ => {
            let n_theta = (PI / resolution).ceil() as usize;
            let n_phi = (2.0 * PI / resolution).ceil() as usize;
            for i in 0..=n_theta {
                let theta = (i as f64 * resolution).min(PI);
                for j in 0..n_phi {
                    let phi = j as f64 * resolution;
                    let (v, a) = eval(&[theta, phi], 1.0);
                    if v > best.0 {
                        best = (v, a, vec![theta, phi]);
                    }
                }
            }
        }
    }
    // Shrinking pattern search around the best grid point.
    let (mut value, mut a, mut angles) = best;
    if set.p == NormOrder::Infinity {
        // Box vertices, where a convex quadratic attains its maximum.
        for signs in 0u32..(1 << d) {
            let dir: Vec<f64> = (0..d).map(|i| if signs & (1 << i) != 0 { -1.0 } else { 1.0 }).collect();
            let cand = embed(&dir);
            let v = change(&cand);
            if v > value {
                value = v;
                a = cand;
            }
        }
    }
    let mut step = resolution;
    while step > 1e-13 {
        let mut improved = false;
        for dim in 0..angles.len() {
            for delta in [step, -step] {
                let mut trial = angles.clone();
                trial[dim] += delta;
                let (v, cand) = eval(&trial, 1.0);
                if v > value {
                    value = v;
                    a = cand;
                    angles = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (value, a)
}

/// Which constraint the PAC-Bayes constant is evaluated for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PacBayesConstraint {
    /// The L2 sphere `‖a‖₂ = ε`.
    Sphere,
    /// The ball `‖a‖_p ≤ ε`, through `β_p = max{1, k^{1/p − 1/2}}`.
    Lp(NormOrder),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacBayesInput {
    /// `‖w‖₂`.
    pub w_norm: f64,
    pub k: usize,
    pub eps: f64,
    /// Prior standard deviation.
    pub sigma: f64,
    pub dataset_size: usize,
    pub delta: f64,
    pub constraint: PacBayesConstraint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacBayesBound {
    /// `C` (sphere) or `C₁` (general `p`).
    pub c: f64,
    /// `sqrt((C + ln(|D|/δ)) / (2(|D| − 1)))`, excluding the `o(ε²)`
    /// remainder.
    pub r: f64,
    /// `β_p` used (1 for the sphere).
    pub beta: f64,
}

/// Computable part of the PAC-Bayes generalization bound.
///
/// `C₁ = (ε² + β²‖w‖²) / (2β²σ²) − k/2 + (k/2) ln(kσ²β²/ε²)`, which reduces
/// to the sphere constant `C` at `β = 1`.
pub fn pac_bayes_bound(input: &PacBayesInput) -> Result<PacBayesBound> {
    let PacBayesInput {
        w_norm,
        k,
        eps,
        sigma,
        dataset_size,
        delta,
        constraint,
    } = *input;
    if !(sigma > 0.0) || !(eps > 0.0) {
        return Err(invalid("sigma and eps must be positive"));
    }
    if dataset_size < 2 {
        return Err(invalid("dataset size must be >= 2"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    if k == 0 || !(w_norm >= 0.0) {
        return Err(invalid("need k >= 1 and a nonnegative weight norm"));
    }
    let beta = match constraint {
        PacBayesConstraint::Sphere => 1.0,
        PacBayesConstraint::Lp(p) => beta_p(p, k, BetaForm::LpOverL2)?,
    };
    let kf = k as f64;
    let b2 = beta * beta;
    let c = (eps * eps + b2 * w_norm * w_norm) / (2.0 * b2 * sigma * sigma) - kf / 2.0
        + kf / 2.0 * (kf * sigma * sigma * b2 / (eps * eps)).ln();
    let m = dataset_size as f64;
    let inner = (c + (m / delta).ln()) / (2.0 * (m - 1.0));
    Ok(PacBayesBound {
        c,
        r: inner.max(0.0).sqrt(),
        beta,
    })
}
