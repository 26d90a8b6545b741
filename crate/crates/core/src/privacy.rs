//! Mutual-information privacy budget of a released parity dataset.
//!
//! For Gaussian encoding with `u` parity rows, the leakage about any single
//! entry of `X̂` is at most `ε = ½·log₂(1 + u/f²)` bits, where
//! `f(X̂) = min_k √(Σᵢ xᵢₖ² - maxᵢ xᵢₖ²)`. The bound uses identity weights.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::coding::EncodingDist;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub f_value: f64,
    /// Budget in bits; `None` when `f = 0` and leakage is unbounded.
    pub epsilon: Option<f64>,
    pub u: usize,
    pub unbounded_leakage: bool,
    /// Set when the configured encoding is not Gaussian, for which the
    /// bound is not established.
    pub warning: Option<String>,
}

pub fn feature_vulnerability(features: ArrayView2<f64>) -> Result<f64> {
    if features.nrows() < 2 {
        return Err(Error::domain(format!(
            "vulnerability needs at least 2 rows, got {}",
            features.nrows()
        )));
    }
    let mut f = f64::INFINITY;
    for col in features.columns() {
        let (sum, max) = col.iter().fold((0.0f64, 0.0f64), |(s, m), &x| {
            let sq = x * x;
            (s + sq, m.max(sq))
        });
        f = f.min((sum - max).max(0.0).sqrt());
    }
    Ok(if f.is_finite() { f } else { 0.0 })
}

pub fn privacy_budget(
    features: ArrayView2<f64>,
    u: usize,
    encoding: EncodingDist,
) -> Result<PrivacyReport> {
    if u == 0 {
        return Err(Error::domain("privacy budget needs u >= 1"));
    }
    let f_value = feature_vulnerability(features)?;
    let epsilon = (f_value > 0.0).then(|| budget_bits(u, f_value));
    let warning = (encoding != EncodingDist::Gaussian).then(|| {
        format!("bound holds for gaussian encoding only; configured encoding is {encoding:?}")
    });
    Ok(PrivacyReport {
        f_value,
        epsilon,
        u,
        unbounded_leakage: epsilon.is_none(),
        warning,
    })
}

/// `½·log₂(1 + u/f²)`.
pub fn budget_bits(u: usize, f: f64) -> f64 {
    0.5 * (1.0 + u as f64 / (f * f)).log2()
}
