//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL
//! line; the test fails if any criterion fails.
//!
//! Run with `cargo test -p paramcorrupt-bench --test acceptance`.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use paramcorrupt::constraints::{constrained_argmax, nnz, norm, project};
use paramcorrupt::corruption::bounds::error_bound_ratio;
use paramcorrupt::corruption::eta::{eta_cdf, eta_pdf};
use paramcorrupt::corruption::indicators::estimate_delta_ave;
use paramcorrupt::corruption::{multi_step_corrupt, MultiStepConfig, NORM_SLACK};
use paramcorrupt::defense::{defense_objective_grad_with, train, train_model, DefenseConfig, SgdConfig, TrainConfig};
use paramcorrupt::hessian::hessian_trace_estimate;
use paramcorrupt::quantize::{quantize_group, quantize_model};
use paramcorrupt::special::integrate;
use paramcorrupt::{
    Activation, Batch, ConstraintSet, Head, LossSurface, Model, Network, NormOrder, ParamPartition, Quadratic, Targets,
    Tensor,
};
use paramcorrupt_bench::cli::{eta_samples, ks_statistic};
use paramcorrupt_bench::data::{synth_dataset, Dataset, SynthKind};
use paramcorrupt_bench::stats::two_sample_t;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1. Pooled t statistic on the published summary numbers.
fn t_values() -> Outcome {
    let a = two_sample_t(96.34, 0.076, 94.46, 0.164, 3).map_err(err)?;
    let b = two_sample_t(30.62, 0.167, 30.64, 0.015, 3).map_err(err)?;
    ensure((a.t - 18.01).abs() <= 0.01, format!("t = {}", a.t))?;
    ensure((b.t + 0.21).abs() <= 0.01, format!("t = {}", b.t))?;
    ensure(a.df == 4 && a.significant && !b.significant, "significance")?;
    Ok(format!(
        "t = {:.4} (significant), t = {:.4} (not significant)",
        a.t, b.t
    ))
}

// 2. η against its exact distribution.
fn eta_distribution() -> Outcome {
    let etas = eta_samples(3, 1_000_000, 11).map_err(err)?;
    let ks3 = ks_statistic(&etas, |x| x);
    ensure(ks3 < 0.005, format!("k = 3 KS {ks3}"))?;
    let mut details = vec![format!("KS(k=3) {ks3:.5}")];
    for k in [5, 20, 100] {
        let etas = eta_samples(k, 100_000, 12).map_err(err)?;
        let gap = ks_statistic(&etas, |x| eta_cdf(x, k).unwrap());
        ensure(gap < 0.01, format!("k = {k} sup gap {gap}"))?;
        details.push(format!("gap(k={k}) {gap:.5}"));
    }
    let mut worst: f64 = 0.0;
    for k in [2, 3, 5, 10, 50] {
        // x = sin t removes the endpoint singularity at k = 2.
        let q = integrate(
            |t| eta_pdf(t.sin().min(1.0), k).unwrap() * t.cos(),
            0.0,
            std::f64::consts::FRAC_PI_2,
            1e-13,
            1e-13,
        )
        .map_err(err)?;
        worst = worst.max((q.value - 1.0).abs());
        ensure((q.value - 1.0).abs() <= 1e-8, format!("k = {k}: ∫pdf = {}", q.value))?;
    }
    details.push(format!("max |∫pdf − 1| {worst:.1e}"));
    Ok(details.join(", "))
}

// 3. Average loss change and Hutchinson trace at the minimum of a quadratic.
fn delta_ave_prediction() -> Outcome {
    let q = Quadratic::diagonal(&[1.0, 2.0, 3.0], vec![0.0; 3]).map_err(err)?;
    let w = [0.0; 3];
    let all = ParamPartition::all(3);
    let est = estimate_delta_ave(&q, &w, &Batch::empty(), 0.1, 200_000, 3, &all).map_err(err)?;
    let z = (est.mean - 0.01).abs() / est.std_err;
    ensure(z <= 3.0, format!("Δ_ave {} is {z:.2} SE from 0.01", est.mean))?;
    let tr = hessian_trace_estimate(&q, &w, &Batch::empty(), &all, 500, 4).map_err(err)?;
    let rel = (tr.trace - 6.0).abs() / 6.0;
    ensure(rel < 0.01, format!("trace {}", tr.trace))?;
    Ok(format!("Δ_ave {:.6} ({z:.2} SE), trace {:.6}", est.mean, tr.trace))
}

fn random_set(rng: &mut ChaCha8Rng, k: usize, orders: &[NormOrder]) -> ConstraintSet {
    let p = orders[rng.random_range(0..orders.len())];
    let eps = rng.random_range(0.01..2.0);
    let n = if rng.random_bool(0.5) {
        Some(rng.random_range(1..=k))
    } else {
        None
    };
    ConstraintSet::new(p, eps, n).unwrap()
}

/// Random point of `set`: a random support, direction and radius.
fn feasible_point(rng: &mut ChaCha8Rng, k: usize, set: &ConstraintSet) -> Vec<f64> {
    let budget = set.n.unwrap_or(k).min(k);
    let size = rng.random_range(1..=budget);
    let mut idx: Vec<usize> = (0..k).collect();
    for i in 0..size {
        let j = rng.random_range(i..k);
        idx.swap(i, j);
    }
    let mut a = vec![0.0; k];
    for &i in &idx[..size] {
        a[i] = rng.random_range(-1.0..1.0);
    }
    let r = norm(&a, set.p);
    if r == 0.0 {
        return a;
    }
    // Half of the points sit on the boundary.
    let radius = if rng.random_bool(0.5) {
        set.epsilon
    } else {
        set.epsilon * rng.random::<f64>()
    };
    a.iter_mut().for_each(|v| *v *= radius / r);
    a
}

// 4. Closed-form argmax and projection against brute force.
fn closed_forms() -> Outcome {
    let orders = [
        NormOrder::Finite(1.0),
        NormOrder::Finite(1.5),
        NormOrder::L2,
        NormOrder::Finite(3.0),
        NormOrder::Infinity,
    ];
    let argmax_failures: Vec<String> = (0..1000u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let k = rng.random_range(1..=8);
            let set = random_set(&mut rng, k, &orders);
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let best = constrained_argmax(&v, &set).ok()?;
            let dot = |a: &[f64]| a.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>();
            if norm(&best.a, set.p) > set.epsilon * (1.0 + 1e-12) || nnz(&best.a) > set.n.unwrap_or(k) {
                return Some(format!("instance {i}: argmax infeasible"));
            }
            if (dot(&best.a) - best.value).abs() > 1e-9 * best.value.max(1.0) {
                return Some(format!("instance {i}: value mismatch"));
            }
            (0..100_000)
                .map(|_| feasible_point(&mut rng, k, &set))
                .find(|a| dot(a) > best.value + 1e-9)
                .map(|a| format!("instance {i}: {a:?} beats the argmax"))
        })
        .collect();
    ensure(argmax_failures.is_empty(), argmax_failures.join("; "))?;

    let mut worst = f64::INFINITY;
    for i in 0..60u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + i);
        let k = 1 + (i % 3) as usize;
        let set = random_set(&mut rng, k, &[NormOrder::L2, NormOrder::Infinity]);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = project(&x, &set).map_err(err)?;
        ensure(set.contains(&y), format!("projection {y:?} infeasible"))?;
        let dist = |a: &[f64]| a.iter().zip(&x).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let oracle = grid_min_distance(&x, &set, &dist);
        worst = worst.min(oracle - dist(&y));
        ensure(
            oracle - dist(&y) >= -1e-6,
            format!("grid beats projection by {}", dist(&y) - oracle),
        )?;
    }
    for i in 0..100_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + i);
        let k = rng.random_range(1..=10);
        let set = random_set(&mut rng, k, &[NormOrder::L2, NormOrder::Infinity]);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let once = project(&x, &set).map_err(err)?;
        let twice = project(&once, &set).map_err(err)?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(
            bits(&once) == bits(&twice),
            format!("projection not idempotent on {x:?}"),
        )?;
    }
    Ok(format!(
        "argmax undominated on 1000×10⁵ points, projection margin over grid {worst:.2e}, idempotent on 10⁵ inputs"
    ))
}

/// Smallest distance from `x` to a feasible point of a dense grid over the
/// box `[−ε, ε]^k`.
fn grid_min_distance<F: Fn(&[f64]) -> f64 + Sync>(x: &[f64], set: &ConstraintSet, dist: &F) -> f64 {
    let k = x.len();
    let steps: usize = match k {
        1 => 200_001,
        2 => 2001,
        _ => 161,
    };
    let eps = set.epsilon;
    let coord = |i: usize| -eps + 2.0 * eps * i as f64 / (steps - 1) as f64;
    let total = steps.pow(k as u32);
    (0..total)
        .into_par_iter()
        .map(|mut m| {
            let mut a = vec![0.0; k];
            for v in a.iter_mut() {
                *v = coord(m % steps);
                m /= steps;
            }
            if set.contains(&a) {
                dist(&a)
            } else {
                f64::INFINITY
            }
        })
        .reduce(|| f64::INFINITY, f64::min)
}

fn random_network_case(rng: &mut ChaCha8Rng, seed: u64) -> (Network, Vec<f64>, Batch) {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=4)];
    for _ in 0..depth {
        sizes.push(rng.random_range(2..=6));
    }
    let classification = rng.random_bool(0.5);
    sizes.push(if classification {
        rng.random_range(2..=4)
    } else {
        rng.random_range(1..=3)
    });
    let act = [Activation::Relu, Activation::Tanh, Activation::Identity][rng.random_range(0..3)];
    let head = if classification {
        Head::SoftmaxCrossEntropy
    } else {
        Head::MeanSquaredError
    };
    let net = Network::mlp(&sizes, act, head).unwrap();
    let params = net.init_params(seed);
    let rows = rng.random_range(1..=12);
    let x: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let out = *sizes.last().unwrap();
    let targets = if classification {
        Targets::Classes((0..rows).map(|_| rng.random_range(0..out)).collect())
    } else {
        let y = (0..rows * out).map(|_| rng.random_range(-1.0..1.0)).collect();
        Targets::Values(Tensor::new(vec![rows, out], y).unwrap())
    };
    (
        net,
        params,
        Batch::new(Tensor::from_rows(&x).unwrap(), targets).unwrap(),
    )
}

// 5. Norm invariants of multi-step corruption.
fn multi_step_invariants() -> Outcome {
    let failures: Vec<String> = (0..1000u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(20_000 + i);
            let (net, params, batch) = random_network_case(&mut rng, i);
            let total = net.param_count();
            let partition = if rng.random_bool(0.5) {
                ParamPartition::all(total)
            } else {
                let mask: Vec<bool> = (0..total).map(|_| rng.random_bool(0.6)).collect();
                if mask.iter().any(|m| *m) {
                    ParamPartition::from_mask(mask)
                } else {
                    ParamPartition::all(total)
                }
            };
            let set = random_set(&mut rng, partition.k(), &[NormOrder::L2, NormOrder::Infinity]);
            let steps = rng.random_range(1..=8);
            // Step sizes both below and far above ε / K.
            let alpha = set.epsilon / steps as f64 * rng.random_range(0.2..4.0);
            let cfg = MultiStepConfig {
                steps: Some(steps),
                alpha,
                batch_size: rng.random_range(1..=6),
                seed: i,
            };
            let trace = match multi_step_corrupt(&net, &params, &batch, &set, &cfg, &partition) {
                Ok(t) => t,
                Err(e) => return Some(format!("run {i}: {e}")),
            };
            for (k, s) in trace.steps.iter().enumerate() {
                if norm(&s.a, set.p) > set.epsilon + NORM_SLACK {
                    return Some(format!("run {i} step {}: outside the ball", k + 1));
                }
            }
            if norm(&trace.final_a, set.p) > steps as f64 * alpha + NORM_SLACK {
                return Some(format!("run {i}: ‖a_K‖ exceeds Kα"));
            }
            trace.check_invariants().err().map(|e| format!("run {i}: {e}"))
        })
        .collect();
    ensure(failures.is_empty(), failures.join("; "))?;
    Ok("1000 runs within ε and Kα".into())
}

// 6. Accuracy of the first-order worst-case estimate on quadratics.
fn error_bound() -> Outcome {
    let q = Quadratic::diagonal(&[1.0, 1.0], vec![1.0, 0.0]).map_err(err)?;
    let mut gaps = Vec::new();
    for eps in [0.1, 0.05, 0.025] {
        let set = ConstraintSet::ball(NormOrder::L2, eps).map_err(err)?;
        let r = error_bound_ratio(&q, &[0.0, 0.0], &set, 1e-4).map_err(err)?;
        gaps.push(r.estimate_ratio - 1.0);
    }
    ensure(
        gaps[0] > gaps[1] && gaps[1] > gaps[2],
        format!("ratio − 1 not decreasing: {gaps:?}"),
    )?;
    ensure(gaps[2] < 0.05, format!("ratio − 1 = {} at ε = 0.025", gaps[2]))?;

    let failures: Vec<String> = (0..100u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(40_000 + i);
            let k = rng.random_range(1..=3);
            // H = BᵀB is positive semidefinite.
            let b: Vec<f64> = (0..k * k).map(|_| rng.random_range(-1.5..1.5)).collect();
            let mut h = vec![0.0; k * k];
            for r in 0..k {
                for c in 0..k {
                    h[r * k + c] = (0..k).map(|j| b[j * k + r] * b[j * k + c]).sum();
                }
            }
            let g: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let q = Quadratic::new(h, g).unwrap();
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let set = random_set(
                &mut rng,
                k,
                &[NormOrder::L2, NormOrder::Infinity, NormOrder::Finite(1.5)],
            );
            let r = match error_bound_ratio(&q, &w, &set, 2e-3) {
                Ok(r) => r,
                Err(e) => return Some(format!("instance {i}: {e}")),
            };
            let base = q.loss(&w, &Batch::empty()).unwrap();
            if !(r.delta_max >= r.delta_hat && r.delta_hat > 0.0) {
                return Some(format!(
                    "instance {i}: L(w+a*) − L = {}, L(w+â) − L = {}, L = {base}",
                    r.delta_max, r.delta_hat
                ));
            }
            None
        })
        .collect();
    ensure(failures.is_empty(), failures.join("; "))?;
    Ok(format!(
        "ratio − 1 = {:.4e}, {:.4e}, {:.4e}; ordering on 100 convex instances",
        gaps[0], gaps[1], gaps[2]
    ))
}

const MOONS_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn moons_train_config(seed: u64, defense: Option<DefenseConfig>) -> TrainConfig {
    TrainConfig {
        epochs: 60,
        batch_size: 32,
        seed,
        optimizer: SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
        },
        defense,
    }
}

fn moons_model(data: &Dataset, seed: u64, defense: Option<DefenseConfig>) -> Model {
    let net = Network::mlp(&[2, 16, 16, 2], Activation::Tanh, Head::SoftmaxCrossEntropy).unwrap();
    train_model(&Model::init(net, seed), &data.train, &moons_train_config(seed, defense))
        .unwrap()
        .0
}

/// Test-loss increase under multi-step `L∞` corruption of radius `eps`.
fn loss_increase(model: &Model, data: &Dataset, eps: f64, seed: u64) -> f64 {
    let set = ConstraintSet::ball(NormOrder::Infinity, eps).unwrap();
    let steps = 8;
    let cfg = MultiStepConfig {
        steps: Some(steps),
        alpha: 1.5 * eps / steps as f64,
        batch_size: 32,
        seed,
    };
    let partition = ParamPartition::all(model.params().len());
    let trace = multi_step_corrupt(model.network(), model.params(), &data.test, &set, &cfg, &partition).unwrap();
    let corrupted = model.apply_corruption(&trace.final_a, &partition).unwrap();
    corrupted.loss(&data.test).unwrap() - model.loss(&data.test).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_increase(models: &[(Model, u64)], data: &Dataset, eps: f64) -> f64 {
    mean(
        &models
            .par_iter()
            .map(|(m, s)| loss_increase(m, data, eps, *s))
            .collect::<Vec<_>>(),
    )
}

// 7. The defended model loses less under corruption at equal clean accuracy.
fn defense_efficacy() -> Outcome {
    let data = synth_dataset(SynthKind::Moons, 1000, 0.1, 0).map_err(err)?;
    let baseline: Vec<(Model, u64)> = MOONS_SEEDS
        .par_iter()
        .map(|&s| (moons_model(&data, s, None), s))
        .collect();

    // Bisection for the radius where the baseline loses 0.5 in loss.
    let (mut lo, mut hi) = (0.0, 0.05);
    while mean_increase(&baseline, &data, hi) < 0.5 {
        lo = hi;
        hi *= 2.0;
        ensure(hi < 100.0, "no radius reaches a loss increase of 0.5")?;
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if mean_increase(&baseline, &data, mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eps = 0.5 * (lo + hi);
    let base_inc = mean_increase(&baseline, &data, eps);
    ensure(
        (base_inc - 0.5).abs() < 0.01,
        format!("bisection ended at increase {base_inc}"),
    )?;

    let defended: Vec<(Model, u64)> = MOONS_SEEDS
        .par_iter()
        .map(|&s| {
            // The defense starts halfway, once the clean fit is established.
            let mut cfg = DefenseConfig::multi_step(2, NormOrder::Infinity, eps).unwrap();
            cfg.start_epoch = 30;
            (moons_model(&data, s, Some(cfg)), s)
        })
        .collect();
    let def_inc = mean_increase(&defended, &data, eps);
    let acc = |models: &[(Model, u64)]| {
        mean(
            &models
                .iter()
                .map(|(m, _)| m.accuracy(&data.test).unwrap())
                .collect::<Vec<_>>(),
        )
    };
    let (base_acc, def_acc) = (acc(&baseline), acc(&defended));
    let reduction = 1.0 - def_inc / base_inc;
    let detail = format!(
        "ε = {eps:.4}: ΔL baseline {base_inc:.4}, defended {def_inc:.4} ({:.1}% smaller); accuracy {:.2}% vs {:.2}%",
        100.0 * reduction,
        100.0 * base_acc,
        100.0 * def_acc
    );
    ensure(reduction >= 0.2, detail.clone())?;
    ensure((base_acc - def_acc).abs() <= 0.02, detail.clone())?;
    Ok(detail)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

// 8. Zero-step defense training is the baseline.
fn zero_step_equivalence() -> Outcome {
    let data = synth_dataset(SynthKind::Moons, 300, 0.1, 8).map_err(err)?;
    for (sizes, act) in [
        (&[2, 16, 16, 2][..], Activation::Tanh),
        (&[2, 8, 2][..], Activation::Relu),
    ] {
        let net = Network::mlp(sizes, act, Head::SoftmaxCrossEntropy).map_err(err)?;
        let init = net.init_params(8);
        let base = moons_train_config(8, None);
        let zero = moons_train_config(8, Some(DefenseConfig::multi_step(0, NormOrder::L2, 0.1).map_err(err)?));
        let (a, ra) = train(&net, &init, &data.train, &TrainConfig { epochs: 5, ..base }).map_err(err)?;
        let (b, rb) = train(&net, &init, &data.train, &TrainConfig { epochs: 5, ..zero }).map_err(err)?;
        ensure(bits(&a) == bits(&b), "parameters differ")?;
        ensure(
            ra.epochs
                .iter()
                .zip(&rb.epochs)
                .all(|(x, y)| x.clean_loss.to_bits() == y.clean_loss.to_bits()),
            "loss curves differ",
        )?;
    }
    Ok("parameters and loss curves bit-identical".into())
}

// 9. Quantization grid.
fn quantization() -> Outcome {
    let q = quantize_group(&[0.9, -0.3, 0.45], 4).map_err(err)?;
    ensure(q.scale == 0.9 / 7.0, format!("w₀ = {}", q.scale))?;
    ensure(q.levels == vec![7, -2, 4], format!("levels {:?}", q.levels))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let len = rng.random_range(1..=64);
        let spread = 10f64.powf(rng.random_range(-4.0..3.0));
        let w: Vec<f64> = (0..len).map(|_| rng.random_range(-spread..spread)).collect();
        let bits_n = rng.random_range(2..=16);
        let once = quantize_group(&w, bits_n).map_err(err)?;
        let twice = quantize_group(&once.values, bits_n).map_err(err)?;
        ensure(
            bits(&once.values) == bits(&twice.values),
            format!("not idempotent on {w:?}"),
        )?;
        for (a, b) in w.iter().zip(&once.values) {
            ensure(
                (a - b).abs() <= once.scale / 2.0 * (1.0 + 1e-12),
                format!("|Δ| > w₀/2 on {w:?}"),
            )?;
        }
    }
    let net = Network::mlp(&[3, 7, 2], Activation::Relu, Head::SoftmaxCrossEntropy).map_err(err)?;
    let model = Model::init(net, 9);
    let once = quantize_model(&model, 4, None).map_err(err)?;
    let twice = quantize_model(&once, 4, None).map_err(err)?;
    ensure(
        bits(once.params()) == bits(twice.params()),
        "model quantization not idempotent",
    )?;
    Ok(format!("w₀ = {}, levels {:?}; 10⁴ fuzzed groups", q.scale, q.levels))
}

fn numeric_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    (0..x.len())
        .map(|i| {
            point[i] = x[i] + h;
            let up = f(&point);
            point[i] = x[i] - h;
            let down = f(&point);
            point[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Smallest `|z|` over ReLU pre-activations. Central differences are only
/// meaningful when this is well above the step.
fn relu_margin(net: &Network, params: &[f64], batch: &Batch) -> f64 {
    let mut margin = f64::INFINITY;
    for r in 0..batch.len() {
        let mut x = batch.inputs.row(r).to_vec();
        let mut offset = 0;
        for layer in net.layers() {
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * x[i]).sum::<f64>())
                .collect();
            if layer.activation == Activation::Relu {
                margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            }
            x = z.iter().map(|v| layer.activation.apply(*v)).collect();
        }
    }
    margin
}

// 10. Analytic gradients against central differences.
fn gradient_integrity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    let mut redrawn = 0;
    for i in 0.. {
        if accepted == 100 {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(60_000 + i);
        let (net, params, batch) = random_network_case(&mut rng, i);
        if relu_margin(&net, &params, &batch) < 1e-4 {
            redrawn += 1;
            continue;
        }
        accepted += 1;
        let (_, g) = net.loss_grad(&params, &batch).map_err(err)?;
        let numeric = numeric_gradient(|w| net.loss(w, &batch).unwrap(), &params, 1e-5);
        let e = relative_error(&g, &numeric);
        worst = worst.max(e);
        ensure(e < 1e-4, format!("model {i}: relative error {e}"))?;
    }
    let mut worst_defense: f64 = 0.0;
    let mut defense_accepted = 0;
    let mut defense_redrawn = 0;
    for i in 0.. {
        if defense_accepted == 100 {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(70_000 + i);
        let (net, params, batch) = random_network_case(&mut rng, i);
        let p = if i % 2 == 0 { NormOrder::L2 } else { NormOrder::Infinity };
        let cfg = DefenseConfig::multi_step(1 + (i % 4) as usize, p, 0.05).map_err(err)?;
        let mut corruptions = Vec::new();
        let step = defense_objective_grad_with(&net, &params, &batch, &cfg, None, |_, a| corruptions.push(a.to_vec()))
            .map_err(err)?;
        let shift = |w: &[f64], a: &[f64]| -> Vec<f64> { w.iter().zip(a).map(|(x, y)| x + y).collect() };
        if corruptions
            .iter()
            .any(|a| relu_margin(&net, &shift(&params, a), &batch) < 1e-4)
        {
            defense_redrawn += 1;
            continue;
        }
        defense_accepted += 1;
        // The corruptions are held fixed while w moves.
        let frozen = |w: &[f64]| {
            corruptions
                .iter()
                .map(|a| net.loss(&shift(w, a), &batch).unwrap())
                .sum::<f64>()
                / corruptions.len() as f64
        };
        ensure((frozen(&params) - step.objective).abs() < 1e-12, "objective mismatch")?;
        let e = relative_error(&step.grad, &numeric_gradient(frozen, &params, 1e-5));
        worst_defense = worst_defense.max(e);
        ensure(e < 1e-4, format!("defense case {i}: relative error {e}"))?;
    }
    Ok(format!(
        "max relative error {worst:.2e} (100 models, {redrawn} redrawn at ReLU kinks), \
         {worst_defense:.2e} (100 defense objectives, {defense_redrawn} redrawn)"
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// 11. Cost of a defense step relative to a plain step.
fn time_contract() -> Outcome {
    let data = synth_dataset(SynthKind::Moons, 1000, 0.1, 0).map_err(err)?;
    let net = Network::mlp(&[2, 16, 16, 2], Activation::Tanh, Head::SoftmaxCrossEntropy).map_err(err)?;
    let init = net.init_params(1);
    let per_step = |defense: Option<DefenseConfig>| -> f64 {
        let cfg = TrainConfig {
            epochs: 2,
            ..moons_train_config(1, defense)
        };
        let runs: Vec<f64> = (0..15)
            .map(|_| {
                let start = Instant::now();
                let (_, report) = train(&net, &init, &data.train, &cfg).unwrap();
                start.elapsed().as_secs_f64() / report.steps as f64
            })
            .collect();
        median(runs)
    };
    let base = per_step(None);
    let mut details = vec![format!("baseline {:.1} µs/step", base * 1e6)];
    for k in [1, 2, 4] {
        let t = per_step(Some(
            DefenseConfig::multi_step(k, NormOrder::Infinity, 0.05).map_err(err)?,
        ));
        let ratio = t / base;
        details.push(format!("K={k}: {ratio:.2}× (limit {:.1}×)", 1.5 * (k + 1) as f64));
        ensure(ratio <= 1.5 * (k + 1) as f64, details.join(", "))?;
    }
    Ok(details.join(", "))
}

/// Writes straight to stdout so the lines show up without `--nocapture`.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 11] = [
        ("t-value reproduction", t_values),
        ("eta distribution", eta_distribution),
        ("average loss change prediction", delta_ave_prediction),
        ("closed-form argmax and projection", closed_forms),
        ("multi-step norm invariants", multi_step_invariants),
        ("first-order error bound", error_bound),
        ("defense efficacy", defense_efficacy),
        ("zero-step defense equivalence", zero_step_equivalence),
        ("quantization", quantization),
        ("gradient integrity", gradient_integrity),
        ("defense step time", time_contract),
    ];
    // Start below the harness's "test acceptance ..." prefix.
    report("");
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => report(&format!("PASS {:>2} {name} [{secs:.1}s]: {detail}", i + 1)),
            Err(detail) => {
                report(&format!("FAIL {:>2} {name} [{secs:.1}s]: {detail}", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
