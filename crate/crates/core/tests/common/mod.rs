#![allow(dead_code)]

use paramcorrupt::{Activation, Batch, Head, Network, Targets, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random MLP with 1 to 3 hidden layers and a random batch for it.
pub fn random_case(seed: u64) -> (Network, Vec<f64>, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
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
    let hidden = [Activation::Relu, Activation::Tanh, Activation::Identity][rng.random_range(0..3)];
    let head = if classification {
        Head::SoftmaxCrossEntropy
    } else {
        Head::MeanSquaredError
    };
    let net = Network::mlp(&sizes, hidden, head).unwrap();
    let params: Vec<f64> = net
        .init_params(seed)
        .into_iter()
        .map(|w| w + rng.random_range(-0.1..0.1))
        .collect();
    let rows = rng.random_range(1..=6);
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
    let batch = Batch::new(Tensor::from_rows(&x).unwrap(), targets).unwrap();
    (net, params, batch)
}

/// Maximum over coordinates of `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
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

/// Two-moons style classification data for training tests.
pub fn toy_classification(n: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let t = rng.random_range(0.0..std::f64::consts::PI);
        let (x, y) = if c == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        rows.push(vec![x + rng.random_range(-0.1..0.1), y + rng.random_range(-0.1..0.1)]);
        classes.push(c);
    }
    Batch::new(Tensor::from_rows(&rows).unwrap(), Targets::Classes(classes)).unwrap()
}
