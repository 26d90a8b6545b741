//! One-shot solution for fully reliable links (`p = 0`).
//!
//! With a single transmission each way the expected return is the single
//! concave term `ℓ(1 - e^{-(αμ/ℓ)(t - ℓ/μ - 2τ)})`. Its unconstrained
//! maximizer grows linearly in `t` with slope
//! `s = -αμ / (W₋₁(-e^{-(1+α)}) + 1)` until it hits `ℓ_max` at
//! `ζ = ℓ_max/s + 2τ`.

use super::lambert::lambert_w_minus1_of_neg_exp;
use crate::delay::NodeProfile;
use crate::error::{Error, Result};

fn require_reliable(profile: &NodeProfile) -> Result<()> {
    if profile.p != 0.0 {
        return Err(Error::domain(format!(
            "closed form needs a reliable link, got p = {}",
            profile.p
        )));
    }
    Ok(())
}

/// Load slope `s` of the unconstrained optimum.
pub fn awgn_slope(profile: &NodeProfile) -> Result<f64> {
    require_reliable(profile)?;
    let w = lambert_w_minus1_of_neg_exp(1.0 + profile.alpha)?;
    Ok(-profile.alpha * profile.mu / (w + 1.0))
}

/// Return slope `s̃ = s(1 - e^{-α(μ/s - 1)})` while the load is unconstrained.
pub fn awgn_return_slope(profile: &NodeProfile) -> Result<f64> {
    let s = awgn_slope(profile)?;
    Ok(s * -(-profile.alpha * (profile.mu / s - 1.0)).exp_m1())
}

/// Deadline `ζ` at which the optimal load reaches `ℓ_max`.
pub fn awgn_saturation_deadline(profile: &NodeProfile) -> Result<f64> {
    Ok(profile.ell_max / awgn_slope(profile)? + 2.0 * profile.tau)
}

pub fn awgn_optimal_load(profile: &NodeProfile, t: f64) -> Result<f64> {
    let s = awgn_slope(profile)?;
    let zeta = profile.ell_max / s + 2.0 * profile.tau;
    Ok(if t <= 2.0 * profile.tau {
        0.0
    } else if t <= zeta {
        s * (t - 2.0 * profile.tau)
    } else {
        profile.ell_max
    })
}

pub fn awgn_optimal_return(profile: &NodeProfile, t: f64) -> Result<f64> {
    let s = awgn_slope(profile)?;
    let zeta = profile.ell_max / s + 2.0 * profile.tau;
    if t <= 2.0 * profile.tau || profile.ell_max <= 0.0 {
        Ok(0.0)
    } else if t <= zeta {
        Ok(awgn_return_slope(profile)? * (t - 2.0 * profile.tau))
    } else {
        let ell = profile.ell_max;
        let x = t - ell / profile.mu - 2.0 * profile.tau;
        Ok(ell * -(-(profile.alpha * profile.mu / ell) * x).exp_m1())
    }
}
