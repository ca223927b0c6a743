//! The alignment statistic `η = |aᵀg| / (ε‖g‖₂)` of a random sphere
//! corruption and its exact distribution.
//!
//! For `a` uniform on the `k`-dimensional sphere of radius `ε`,
//!
//! ```text
//! p(x) = 2Γ(k/2) / (√π Γ((k−1)/2)) · (1 − x²)^{(k−3)/2}
//! P(η ≤ x) = 2x ₂F₁(1/2, (3−k)/2; 3/2; x²) / B((k−1)/2, 1/2)
//! ```
//!
//! The series terminates for odd `k` and is summed directly when it does
//! not cancel badly. Otherwise the CDF is the integral of the density,
//! taken in the angle `x = sin t` where the integrand `cos^{k−2} t` is
//! smooth.

use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::constraints::{norm, NormOrder};
use crate::error::{invalid, Result};
use crate::special::{hyp2f1_series, integrate};

/// Largest tolerated `max term / |sum|` before the terminating series is
/// abandoned for quadrature.
const MAX_CANCELLATION: f64 = 1e6;

/// `|aᵀg| / (ε‖g‖₂)`, clamped to `[0, 1]`.
pub fn eta_statistic(a: &[f64], g: &[f64], eps: f64) -> Result<f64> {
    if a.len() != g.len() {
        return Err(invalid("eta_statistic: a and g differ in length"));
    }
    let gn = norm(g, NormOrder::L2);
    if !(gn > 0.0) {
        return Err(invalid("eta_statistic needs a nonzero gradient"));
    }
    if !(eps > 0.0) {
        return Err(invalid("eta_statistic needs eps > 0"));
    }
    let dot: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
    Ok((dot.abs() / (eps * gn)).clamp(0.0, 1.0))
}

fn check_args(x: f64, k: usize) -> Result<()> {
    if k < 2 {
        return Err(invalid(format!("eta distribution needs k >= 2, got {k}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("eta lies in [0, 1], got {x}")));
    }
    Ok(())
}

/// `ln(2Γ(k/2) / (√π Γ((k−1)/2)))`.
fn ln_density_constant(k: usize) -> f64 {
    let kf = k as f64;
    std::f64::consts::LN_2 + ln_gamma(kf / 2.0) - 0.5 * std::f64::consts::PI.ln() - ln_gamma((kf - 1.0) / 2.0)
}

/// Density of `η` in dimension `k`.
pub fn eta_pdf(x: f64, k: usize) -> Result<f64> {
    check_args(x, k)?;
    let power = (k as f64 - 3.0) / 2.0;
    if power == 0.0 {
        return Ok(ln_density_constant(k).exp());
    }
    let base = 1.0 - x * x;
    if base == 0.0 {
        return Ok(if power < 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok((ln_density_constant(k) + power * base.ln()).exp())
}

/// Cumulative distribution of `η` in dimension `k`.
pub fn eta_cdf(x: f64, k: usize) -> Result<f64> {
    check_args(x, k)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let kf = k as f64;
    let b = (3.0 - kf) / 2.0;
    let terminating = b <= 0.0 && b.fract() == 0.0;
    if terminating {
        let s = hyp2f1_series(0.5, b, 1.5, x * x)?;
        if s.value != 0.0 && s.largest_term / s.value.abs() <= MAX_CANCELLATION {
            let value = 2.0 * x * s.value / ln_beta((kf - 1.0) / 2.0, 0.5).exp();
            return Ok(value.clamp(0.0, 1.0));
        }
    }
    cdf_by_quadrature(x, k)
}

/// `∫₀^{asin x} c cos^{k−2}(t) dt` with `c` the density constant.
fn cdf_by_quadrature(x: f64, k: usize) -> Result<f64> {
    let c = ln_density_constant(k).exp();
    let power = k as f64 - 2.0;
    let upper = x.asin();
    let q = integrate(|t| t.cos().powf(power), 0.0, upper, 1e-14, 1e-13)?;
    Ok((c * q.value).clamp(0.0, 1.0))
}
