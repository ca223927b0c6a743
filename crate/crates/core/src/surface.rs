//! The differentiable-loss abstraction every corruption and defense routine
//! is written against, plus an analytic quadratic surface.

use crate::error::{check_len, invalid, Result};
use crate::tensor::{Batch, Tensor};

/// A scalar loss over a flat parameter vector, evaluated on a batch.
///
/// Implementations must be deterministic: identical inputs give identical
/// bits.
pub trait LossSurface: Sync {
    /// Length of the flat parameter vector.
    fn dim(&self) -> usize;

    fn loss(&self, params: &[f64], batch: &Batch) -> Result<f64>;

    /// Writes the gradient into `grad` (overwriting it) and returns the loss.
    fn loss_grad_into(&self, params: &[f64], batch: &Batch, grad: &mut [f64]) -> Result<f64>;

    fn loss_grad(&self, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.dim()];
        let loss = self.loss_grad_into(params, batch, &mut grad)?;
        Ok((loss, grad))
    }

    /// Gradient of the loss with respect to the batch inputs, when the
    /// surface depends on inputs at all.
    fn input_gradient(&self, _params: &[f64], _batch: &Batch) -> Result<Option<Tensor>> {
        Ok(None)
    }
}

/// `L(w) = c + gᵀw + ½ wᵀHw`, independent of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    dim: usize,
    hessian: Vec<f64>,
    linear: Vec<f64>,
    constant: f64,
}

impl Quadratic {
    /// `hessian` is a row-major `k × k` symmetric matrix.
    pub fn new(hessian: Vec<f64>, linear: Vec<f64>) -> Result<Self> {
        let dim = linear.len();
        check_len("quadratic hessian", dim * dim, hessian.len())?;
        for i in 0..dim {
            for j in 0..i {
                if hessian[i * dim + j] != hessian[j * dim + i] {
                    return Err(invalid("quadratic hessian must be symmetric"));
                }
            }
        }
        if hessian.iter().chain(&linear).any(|v| !v.is_finite()) {
            return Err(invalid("quadratic coefficients must be finite"));
        }
        Ok(Self {
            dim,
            hessian,
            linear,
            constant: 0.0,
        })
    }

    pub fn diagonal(diag: &[f64], linear: Vec<f64>) -> Result<Self> {
        let k = diag.len();
        let mut h = vec![0.0; k * k];
        for (i, d) in diag.iter().enumerate() {
            h[i * k + i] = *d;
        }
        Self::new(h, linear)
    }

    /// A purely linear surface `gᵀw`.
    pub fn linear(g: Vec<f64>) -> Result<Self> {
        let k = g.len();
        Self::new(vec![0.0; k * k], g)
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn hessian(&self) -> &[f64] {
        &self.hessian
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.linear
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.hessian[i * self.dim + i]).sum()
    }

    /// `H v`.
    pub fn hessian_times(&self, v: &[f64]) -> Vec<f64> {
        let k = self.dim;
        (0..k)
            .map(|i| self.hessian[i * k..(i + 1) * k].iter().zip(v).map(|(h, x)| h * x).sum())
            .collect()
    }

    /// Largest absolute eigenvalue of `H` (the gradient Lipschitz constant),
    /// by power iteration.
    pub fn spectral_norm(&self) -> f64 {
        let k = self.dim;
        if k == 0 || self.hessian.iter().all(|&h| h == 0.0) {
            return 0.0;
        }
        // Deterministic start vector with components along every axis.
        let mut v: Vec<f64> = (0..k).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let hv = self.hessian_times(&v);
            let norm = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let next: Vec<f64> = hv.iter().map(|x| x / norm).collect();
            let delta = (norm - lambda).abs();
            lambda = norm;
            v = next;
            if delta <= 1e-15 * lambda {
                break;
            }
        }
        lambda
    }
}

impl LossSurface for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, params: &[f64], _batch: &Batch) -> Result<f64> {
        check_len("quadratic params", self.dim, params.len())?;
        let hw = self.hessian_times(params);
        let quad: f64 = params.iter().zip(&hw).map(|(w, h)| w * h).sum();
        let lin: f64 = params.iter().zip(&self.linear).map(|(w, g)| w * g).sum();
        Ok(self.constant + lin + 0.5 * quad)
    }

    fn loss_grad_into(&self, params: &[f64], batch: &Batch, grad: &mut [f64]) -> Result<f64> {
        check_len("gradient buffer", self.dim, grad.len())?;
        let loss = self.loss(params, batch)?;
        let hw = self.hessian_times(params);
        for ((g, lin), h) in grad.iter_mut().zip(&self.linear).zip(hw) {
            *g = lin + h;
        }
        Ok(loss)
    }
}
