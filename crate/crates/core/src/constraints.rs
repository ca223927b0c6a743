//! Geometry of the corruption set `S = {a : ‖a‖_p ≤ ε, ‖a‖₀ ≤ n}`.
//!
//! Everything here is a closed form: the top-`n` mask, the maximizer of a
//! linear function over `S`, the fixed-size ascent step, and the Euclidean
//! projection onto `S` for `p ∈ {2, ∞}`.

use std::fmt;

use crate::error::{invalid, Error, Result};

/// Order `p` of an `ℓp` norm: a finite real `p ≥ 1` or infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOrder {
    Finite(f64),
    Infinity,
}

impl NormOrder {
    pub const L1: NormOrder = NormOrder::Finite(1.0);
    pub const L2: NormOrder = NormOrder::Finite(2.0);

    pub fn finite(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(invalid(format!("norm order must be >= 1, got {p}")));
        }
        if p.is_infinite() {
            return Ok(NormOrder::Infinity);
        }
        Ok(NormOrder::Finite(p))
    }

    /// `"2"`, `"1.5"`, `"inf"`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "Inf" | "∞" => Ok(NormOrder::Infinity),
            other => other
                .parse::<f64>()
                .map_err(|_| invalid(format!("cannot parse norm order {other:?}")))
                .and_then(Self::finite),
        }
    }

    pub fn is_l2(self) -> bool {
        self == NormOrder::L2
    }

    /// `1/p`, zero for infinity.
    pub fn reciprocal(self) -> f64 {
        match self {
            NormOrder::Finite(p) => 1.0 / p,
            NormOrder::Infinity => 0.0,
        }
    }

    /// Hölder conjugate `q = p / (p − 1)`.
    pub fn dual(self) -> NormOrder {
        match self {
            NormOrder::Infinity => NormOrder::L1,
            NormOrder::Finite(1.0) => NormOrder::Infinity,
            NormOrder::Finite(p) => NormOrder::Finite(p / (p - 1.0)),
        }
    }

    /// Rejects `p ≤ 1`, for routines whose formulas divide by `p − 1`.
    fn require_above_one(self) -> Result<()> {
        match self {
            NormOrder::Finite(p) if p <= 1.0 => Err(invalid(format!("norm order must exceed 1, got {p}"))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::Finite(p) => write!(f, "{p}"),
            NormOrder::Infinity => f.write_str("inf"),
        }
    }
}

/// `‖v‖_p`.
pub fn norm(v: &[f64], p: NormOrder) -> f64 {
    match p {
        NormOrder::Infinity => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        NormOrder::Finite(1.0) => v.iter().map(|x| x.abs()).sum(),
        NormOrder::Finite(2.0) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormOrder::Finite(p) => {
            let scale = norm(v, NormOrder::Infinity);
            if scale == 0.0 {
                return 0.0;
            }
            scale * v.iter().map(|x| (x.abs() / scale).powf(p)).sum::<f64>().powf(1.0 / p)
        }
    }
}

/// Number of nonzero entries.
pub fn nnz(v: &[f64]) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

/// The feasible region of a corruption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSet {
    pub p: NormOrder,
    pub epsilon: f64,
    /// Maximum number of nonzero coordinates; `None` means unlimited.
    pub n: Option<usize>,
    /// `‖a‖_p = ε` instead of `‖a‖_p ≤ ε`.
    pub boundary_only: bool,
}

impl ConstraintSet {
    pub fn new(p: NormOrder, epsilon: f64, n: Option<usize>) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(invalid(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if n == Some(0) {
            return Err(invalid("sparsity budget n must be >= 1"));
        }
        Ok(Self {
            p,
            epsilon,
            n,
            boundary_only: false,
        })
    }

    /// `{‖a‖_p ≤ ε}` with no sparsity limit.
    pub fn ball(p: NormOrder, epsilon: f64) -> Result<Self> {
        Self::new(p, epsilon, None)
    }

    /// The L2 sphere `{‖a‖₂ = ε}`.
    pub fn sphere(epsilon: f64) -> Result<Self> {
        Ok(Self::ball(NormOrder::L2, epsilon)?.boundary())
    }

    pub fn boundary(mut self) -> Self {
        self.boundary_only = true;
        self
    }

    /// Sparsity budget for a `k`-dimensional corruption.
    pub fn budget(&self, k: usize) -> Result<usize> {
        match self.n {
            None => Ok(k),
            Some(n) if n <= k => Ok(n),
            Some(n) => Err(invalid(format!("sparsity budget {n} exceeds dimension {k}"))),
        }
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        if self.epsilon == 0.0 {
            return a.iter().all(|x| *x == 0.0);
        }
        if self.n.is_some_and(|n| nnz(a) > n) {
            return false;
        }
        let r = norm(a, self.p);
        if self.boundary_only {
            (r - self.epsilon).abs() <= 1e-12
        } else {
            r <= self.epsilon + 1e-12
        }
    }
}

/// Keeps the `n` largest-magnitude entries and zeroes the rest. Ties on
/// magnitude go to the lower index.
pub fn top_n(v: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 || n > v.len() {
        return Err(invalid(format!("top_n needs 1 <= n <= {}, got {n}", v.len())));
    }
    if n == v.len() {
        return Ok(v.to_vec());
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    // Stable sort keeps ascending index among equal magnitudes.
    order.sort_by(|&i, &j| v[j].abs().total_cmp(&v[i].abs()));
    let mut out = vec![0.0; v.len()];
    for &i in &order[..n] {
        out[i] = v[i];
    }
    Ok(out)
}

/// Maximizer of a linear function over a constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct Argmax {
    pub a: Vec<f64>,
    /// Attained value `aᵀv = ε‖h‖_{p/(p−1)}`.
    pub value: f64,
}

/// `sgn(h) ⊙ |h|^{1/(p−1)}` scaled to `p`-norm `radius`, with the `p = 1`
/// and `p = ∞` limits. `h` must not be all-zero.
fn dual_direction(h: &[f64], p: NormOrder, radius: f64) -> Vec<f64> {
    match p {
        NormOrder::Infinity => h
            .iter()
            .map(|&x| if x == 0.0 { 0.0 } else { radius * x.signum() })
            .collect(),
        NormOrder::Finite(1.0) => {
            let mut best = 0;
            for (i, x) in h.iter().enumerate() {
                if x.abs() > h[best].abs() {
                    best = i;
                }
            }
            let mut out = vec![0.0; h.len()];
            out[best] = radius * h[best].signum();
            out
        }
        NormOrder::Finite(2.0) => {
            let r = norm(h, NormOrder::L2);
            h.iter().map(|x| radius * x / r).collect()
        }
        NormOrder::Finite(p) => {
            let scale = norm(h, NormOrder::Infinity);
            let power = 1.0 / (p - 1.0);
            let mag: Vec<f64> = h.iter().map(|x| (x.abs() / scale).powf(power)).collect();
            let r = norm(&mag, NormOrder::Finite(p));
            h.iter()
                .zip(&mag)
                .map(|(x, m)| if *x == 0.0 { 0.0 } else { radius * x.signum() * m / r })
                .collect()
        }
    }
}

/// Closed-form `argmax_{a ∈ S} aᵀv` on the boundary `‖a‖_p = ε`,
/// `‖a‖₀ ≤ n`.
///
/// With `h = top_n(v)` the maximizer is
/// `ε · sgn(h) ⊙ |h|^{1/(p−1)} / ‖|h|^{1/(p−1)}‖_p` and the maximum is
/// `ε‖h‖_q`, `q = p/(p−1)`. `p = ∞` puts `±ε` on the support of `h`; `p = 1`
/// puts all mass on the single largest entry.
pub fn constrained_argmax(v: &[f64], set: &ConstraintSet) -> Result<Argmax> {
    if v.is_empty() {
        return Err(invalid("constrained_argmax on an empty vector"));
    }
    if set.epsilon == 0.0 {
        return Ok(Argmax {
            a: vec![0.0; v.len()],
            value: 0.0,
        });
    }
    let h = top_n(v, set.budget(v.len())?)?;
    if h.iter().all(|x| *x == 0.0) {
        return Err(Error::DegenerateGradient);
    }
    let a = dual_direction(&h, set.p, set.epsilon);
    let value = set.epsilon * norm(&h, set.p.dual());
    Ok(Argmax { a, value })
}

/// Ascent step `u = argmax_{‖u‖_p = α} gᵀu`: `α g/‖g‖₂` for `p = 2`,
/// `α sgn(g)` for `p = ∞` (zero where `g` is zero).
pub fn step_update(g: &[f64], alpha: f64, p: NormOrder) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(invalid(format!("step size must be finite and > 0, got {alpha}")));
    }
    if g.iter().all(|x| *x == 0.0) {
        return Err(Error::DegenerateGradient);
    }
    Ok(dual_direction(g, p, alpha))
}

/// Euclidean projection onto `{‖y‖_p ≤ ε, ‖y‖₀ ≤ n}` for `p ∈ {2, ∞}`.
///
/// With `h = top_n(x)`: `p = 2` gives `min{‖h‖₂, ε} h/‖h‖₂`, `p = ∞` gives
/// `clip(h, −ε, ε)`. The result always satisfies `‖y‖_p ≤ ε` in floating
/// point, which makes the projection idempotent bit-for-bit.
pub fn project(x: &[f64], set: &ConstraintSet) -> Result<Vec<f64>> {
    if !matches!(set.p, NormOrder::Infinity) && !set.p.is_l2() {
        return Err(Error::UnsupportedNorm(set.p.to_string()));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    if set.epsilon == 0.0 {
        return Ok(vec![0.0; x.len()]);
    }
    let h = top_n(x, set.budget(x.len())?)?;
    let eps = set.epsilon;
    match set.p {
        NormOrder::Infinity => Ok(h.iter().map(|v| v.clamp(-eps, eps)).collect()),
        _ => {
            let r = norm(&h, NormOrder::L2);
            if r <= eps {
                return Ok(h);
            }
            let mut scale = eps / r;
            loop {
                let y: Vec<f64> = h.iter().map(|v| v * scale).collect();
                if norm(&y, NormOrder::L2) <= eps {
                    return Ok(y);
                }
                scale = scale.next_down();
            }
        }
    }
}

/// Which norm-comparison constant [`beta_p`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaForm {
    /// `max{1, m^{1/p − 1/2}}`: bounds `‖x‖_p ≤ β‖x‖₂` in `m` dimensions.
    LpOverL2,
    /// `max{1, m^{1/2 − 1/p}}`: bounds `‖x‖₂ ≤ β‖x‖_p` for `m`-sparse `x`.
    L2OverLp,
}

/// Norm-comparison constant between `ℓp` and `ℓ2` balls.
pub fn beta_p(p: NormOrder, m: usize, form: BetaForm) -> Result<f64> {
    p.require_above_one()?;
    if m == 0 {
        return Err(invalid("beta_p needs m >= 1"));
    }
    let exponent = match form {
        BetaForm::LpOverL2 => p.reciprocal() - 0.5,
        BetaForm::L2OverLp => 0.5 - p.reciprocal(),
    };
    Ok((m as f64).powf(exponent).max(1.0))
}

/// `g(p) = max{(p − 4)/(2p), (1 − p)/p}`, the sparsity exponent in the
/// first-order error bound; `g(∞) = 1/2`.
pub fn g_exponent(p: NormOrder) -> Result<f64> {
    p.require_above_one()?;
    Ok(match p {
        NormOrder::Infinity => 0.5,
        NormOrder::Finite(p) => ((p - 4.0) / (2.0 * p)).max((1.0 - p) / p),
    })
}
