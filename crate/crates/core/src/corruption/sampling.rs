//! Random corruption generators.
//!
//! Samples are produced in fixed-size chunks, each drawn from its own
//! seeded stream, so a Monte Carlo run gives identical results whether the
//! chunks execute on one thread or many.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::rng::{streams, substream};

/// Samples per independently seeded chunk.
pub const CHUNK: usize = 4096;

/// Distribution of a random corruption vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    /// Uniform on the L2 sphere `‖a‖₂ = radius`.
    Sphere { radius: f64 },
    /// I.i.d. `N(0, σ²)` per coordinate.
    Gaussian { sigma: f64 },
    /// I.i.d. `U(−b, b)` per coordinate.
    Uniform { bound: f64 },
}

impl NoiseKind {
    fn validate(&self, k: usize) -> Result<()> {
        match *self {
            NoiseKind::Sphere { radius } => {
                if k < 2 {
                    return Err(invalid("sphere sampling needs k >= 2"));
                }
                if !(radius > 0.0) || !radius.is_finite() {
                    return Err(invalid(format!("sphere radius must be > 0, got {radius}")));
                }
            }
            NoiseKind::Gaussian { sigma } if !(sigma >= 0.0) || !sigma.is_finite() => {
                return Err(invalid(format!("sigma must be >= 0, got {sigma}")));
            }
            NoiseKind::Uniform { bound } if !(bound >= 0.0) || !bound.is_finite() => {
                return Err(invalid(format!("uniform bound must be >= 0, got {bound}")));
            }
            _ => {}
        }
        Ok(())
    }

    fn fill<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match *self {
            NoiseKind::Sphere { radius } => loop {
                for v in out.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let r = out.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r > 0.0 {
                    out.iter_mut().for_each(|v| *v *= radius / r);
                    return;
                }
            },
            NoiseKind::Gaussian { sigma } => {
                for v in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = sigma * z;
                }
            }
            NoiseKind::Uniform { bound } => {
                for v in out.iter_mut() {
                    *v = if bound == 0.0 {
                        0.0
                    } else {
                        rng.random_range(-bound..=bound)
                    };
                }
            }
        }
    }
}

/// Draws `count` vectors of dimension `k` and maps each through `f`,
/// preserving sample order. Chunks run in parallel.
pub fn map_samples<T, F>(noise: NoiseKind, k: usize, count: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[f64]) -> T + Sync,
{
    noise.validate(k)?;
    let chunks = count.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, streams::MONTE_CARLO_BASE + c as u64);
            let n = CHUNK.min(count - c * CHUNK);
            let mut buf = vec![0.0; k];
            (0..n)
                .map(|_| {
                    noise.fill(&mut rng, &mut buf);
                    f(&buf)
                })
                .collect()
        })
        .collect();
    Ok(per_chunk.into_iter().flatten().collect())
}

pub fn sample(noise: NoiseKind, k: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    map_samples(noise, k, count, seed, <[f64]>::to_vec)
}

/// Vectors uniform on `{‖a‖₂ = ε}` (normalized standard normals).
pub fn sample_sphere(k: usize, eps: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    sample(NoiseKind::Sphere { radius: eps }, k, count, seed)
}

pub fn sample_gaussian(k: usize, sigma: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    sample(NoiseKind::Gaussian { sigma }, k, count, seed)
}

pub fn sample_uniform(k: usize, bound: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    sample(NoiseKind::Uniform { bound }, k, count, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_samples_have_radius() {
        for a in sample_sphere(7, 0.3, 1000, 5).unwrap() {
            let r = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((r - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = sample_gaussian(3, 1.0, 5000, 42).unwrap();
        let b = sample_gaussian(3, 1.0, 5000, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_gaussian(3, 1.0, 5000, 43).unwrap());
    }

    #[test]
    fn zero_sigma_and_bound_give_zero() {
        assert!(sample_gaussian(4, 0.0, 10, 1)
            .unwrap()
            .iter()
            .flatten()
            .all(|v| *v == 0.0));
        assert!(sample_uniform(4, 0.0, 10, 1)
            .unwrap()
            .iter()
            .flatten()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn uniform_support() {
        let b = 0.25;
        assert!(sample_uniform(5, b, 20_000, 3)
            .unwrap()
            .iter()
            .flatten()
            .all(|v| v.abs() <= b));
    }

    #[test]
    fn sphere_preconditions() {
        assert!(sample_sphere(1, 1.0, 1, 0).is_err());
        assert!(sample_sphere(3, 0.0, 1, 0).is_err());
    }
}
