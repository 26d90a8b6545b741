//! Lower real branch `W₋₁` of the Lambert W function.

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 64;

fn inv_e() -> f64 {
    (-1.0f64).exp()
}

/// Solves `w·eʷ = x` for `w ≤ -1`, `x ∈ [-1/e, 0)`.
///
/// Halley iteration on `w·eʷ - x`. The start is `ln(-x) - ln(-ln(-x))`,
/// except close to the branch point where the square-root series in
/// `sqrt(2(e·x + 1))` is used instead.
pub fn lambert_w_minus1(x: f64) -> Result<f64> {
    let branch = -inv_e();
    if !(x < 0.0) || x.is_nan() {
        return Err(Error::domain(format!("W₋₁ undefined at {x}")));
    }
    // a few ulps of slack for -1/e computed by the caller
    if x < branch * (1.0 + 4.0 * f64::EPSILON) {
        return Err(Error::domain(format!("W₋₁ undefined below -1/e, got {x}")));
    }
    let eta = (std::f64::consts::E * x + 1.0).max(0.0);
    if eta <= 4.0 * f64::EPSILON {
        return Ok(-1.0);
    }

    let mut w = if eta < 0.25 {
        let p = -(2.0 * eta).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-x).ln();
        l1 - (-l1).ln()
    };

    for _ in 0..MAX_ITERATIONS {
        let ew = w.exp();
        let f = w * ew - x;
        let w1 = w + 1.0;
        let denom = ew * w1 - (w + 2.0) * f / (2.0 * w1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        let next = (w - step).min(-1.0);
        let done = (next - w).abs() <= 4.0 * f64::EPSILON * w.abs();
        w = next;
        if done {
            break;
        }
    }
    Ok(w)
}

/// `W₋₁(-e^(-y))` for `y ≥ 1`, computed in log space so that large `y`
/// (where `e^(-y)` underflows) stays accurate.
///
/// With `w = -v` the defining equation becomes `v = y + ln v`.
pub fn lambert_w_minus1_of_neg_exp(y: f64) -> Result<f64> {
    if !(y >= 1.0) {
        return Err(Error::domain(format!("need y >= 1, got {y}")));
    }
    if y < 500.0 {
        return lambert_w_minus1(-(-y).exp());
    }
    // Newton on g(v) = v - ln v - y, g'(v) = 1 - 1/v
    let mut v = y + y.ln();
    for _ in 0..MAX_ITERATIONS {
        let g = v - v.ln() - y;
        let next = v - g / (1.0 - 1.0 / v);
        let done = (next - v).abs() <= 4.0 * f64::EPSILON * v;
        v = next;
        if done {
            break;
        }
    }
    Ok(-v)
}
