//! Numerical special-function support: adaptive Gauss–Kronrod quadrature
//! and the Gauss hypergeometric series.

use crate::error::{invalid, Error, Result};

// 15-point Kronrod abscissae on [-1, 1] (non-negative half) with the
// embedded 7-point Gauss rule on the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Adaptive G7–K15 quadrature of `f` over `[a, b]`, bisecting the interval
/// with the largest error estimate until the summed estimate falls below
/// `max(abs_tol, rel_tol·|I|)`.
///
/// The integrand is only evaluated at interior points, so integrable
/// endpoint singularities are allowed.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<Quadrature> {
    const MAX_INTERVALS: usize = 5_000;
    if !(a.is_finite() && b.is_finite()) {
        return Err(invalid("integration bounds must be finite"));
    }
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            error_estimate: 0.0,
            intervals: 0,
        });
    }
    let mut segments = vec![gauss_kronrod(&f, a, b)];
    loop {
        let value: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite integrand".into()));
        }
        if error <= abs_tol.max(rel_tol * value.abs()) || segments.len() >= MAX_INTERVALS {
            return Ok(Quadrature {
                value,
                error_estimate: error,
                intervals: segments.len(),
            });
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .expect("nonempty");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval cannot be split further in floating point.
            return Ok(Quadrature {
                value,
                error_estimate: error,
                intervals: segments.len() + 1,
            });
        }
        segments.push(gauss_kronrod(&f, seg.a, mid));
        segments.push(gauss_kronrod(&f, mid, seg.b));
    }
}

/// Partial evaluation of the Gauss hypergeometric series
/// `₂F₁(a, b; c; z) = Σ (a)_j (b)_j / ((c)_j j!) z^j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    /// Largest absolute term; `largest_term / |value|` bounds the relative
    /// cancellation in the sum.
    pub largest_term: f64,
    pub terms: usize,
}

/// Sums the `₂F₁` series. Terminates exactly when `a` or `b` is a
/// nonpositive integer; otherwise requires `|z| < 1` and stops when terms
/// fall below machine precision.
pub fn hyp2f1_series(a: f64, b: f64, c: f64, z: f64) -> Result<SeriesValue> {
    const MAX_TERMS: usize = 100_000;
    if c <= 0.0 && c.fract() == 0.0 {
        return Err(invalid("2F1 undefined for nonpositive integer c"));
    }
    let terminating = [a, b].iter().any(|&x| x <= 0.0 && x.fract() == 0.0);
    if !terminating && z.abs() >= 1.0 {
        return Err(invalid("2F1 series diverges for |z| >= 1"));
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut largest: f64 = 1.0;
    for j in 0..MAX_TERMS {
        let jf = j as f64;
        term *= (a + jf) * (b + jf) / ((c + jf) * (jf + 1.0)) * z;
        if term == 0.0 {
            return Ok(SeriesValue {
                value: sum,
                largest_term: largest,
                terms: j + 1,
            });
        }
        sum += term;
        largest = largest.max(term.abs());
        if !terminating && term.abs() <= f64::EPSILON * sum.abs() {
            return Ok(SeriesValue {
                value: sum,
                largest_term: largest,
                terms: j + 2,
            });
        }
    }
    Err(Error::Numerical("2F1 series did not converge".into()))
}
