//! Compute and communication delay of one node.
//!
//! A node processing `load` data points per round takes
//!
//! ```text
//! T = load/μ + Exp(αμ/load) + τ·(N_down + N_up)
//! ```
//!
//! seconds, where `N_down` and `N_up` are IID geometric transmission counts
//! with per-attempt failure probability `p`. Their sum is negative binomial
//! with two successes, which gives the closed-form distribution in
//! [`cdf_delay`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Mass of the transmission-count distribution below which the remaining
/// negative-binomial terms are dropped.
const TAIL_MASS: f64 = 1e-20;

/// Whether a node's round trip follows the stochastic model or is treated as
/// always complete by any positive deadline (a dedicated edge server).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Availability {
    #[default]
    Stochastic,
    Guaranteed,
}

/// Stochastic compute/communication parameters of one node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    /// Processing rate in data points per second.
    pub mu: f64,
    /// Ratio of compute time to mean memory-access time.
    pub alpha: f64,
    /// Seconds per packet transmission.
    pub tau: f64,
    /// Per-transmission failure probability.
    pub p: f64,
    /// Largest load the node can hold or process.
    pub ell_max: f64,
    #[serde(default)]
    pub availability: Availability,
}

impl NodeProfile {
    pub fn new(mu: f64, alpha: f64, tau: f64, p: f64, ell_max: f64) -> Result<Self> {
        let profile = NodeProfile {
            mu,
            alpha,
            tau,
            p,
            ell_max,
            availability: Availability::Stochastic,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// The same node, but delivering with probability one by any `t > 0`.
    pub fn guaranteed(mut self) -> Self {
        self.availability = Availability::Guaranteed;
        self
    }

    pub fn is_guaranteed(&self) -> bool {
        self.availability == Availability::Guaranteed
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.mu) || !positive(self.alpha) || !positive(self.tau) {
            return Err(Error::domain(format!(
                "mu, alpha and tau must be finite and positive (mu={}, alpha={}, tau={})",
                self.mu, self.alpha, self.tau
            )));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::domain(format!("failure probability {} not in [0, 1)", self.p)));
        }
        if !(self.ell_max.is_finite() && self.ell_max >= 0.0) {
            return Err(Error::domain(format!("ell_max {} must be >= 0", self.ell_max)));
        }
        Ok(())
    }

    /// Rate of the exponential compute component at this load.
    pub fn memory_rate(&self, load: f64) -> f64 {
        self.alpha * self.mu / load
    }
}

/// One realisation of a node's round-trip time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelaySample {
    pub t_compute_det: f64,
    pub t_compute_rand: f64,
    pub n_down: u64,
    pub n_up: u64,
    pub total: f64,
}

/// Draws the round-trip delay of `profile` at `load` data points.
///
/// The parametric model is sampled regardless of [`Availability`]; callers
/// that honour guaranteed delivery check the flag themselves.
pub fn sample_delay(profile: &NodeProfile, load: f64, rng: &mut Stream) -> Result<DelaySample> {
    if !(load > 0.0 && load <= profile.ell_max) {
        return Err(Error::domain(format!(
            "load {load} outside (0, {}]",
            profile.ell_max
        )));
    }
    let t_compute_det = load / profile.mu;
    let t_compute_rand = rng.exponential(profile.memory_rate(load));
    let n_down = rng.geometric_trials(profile.p);
    let n_up = rng.geometric_trials(profile.p);
    let total = t_compute_det + t_compute_rand + profile.tau * (n_down + n_up) as f64;
    Ok(DelaySample {
        t_compute_det,
        t_compute_rand,
        n_down,
        n_up,
        total,
    })
}

/// Mean round-trip delay, `(load/μ)(1 + 1/α) + 2τ/(1-p)`.
pub fn mean_delay(profile: &NodeProfile, load: f64) -> f64 {
    (load / profile.mu) * (1.0 + 1.0 / profile.alpha) + 2.0 * profile.tau / (1.0 - profile.p)
}

/// Largest integer `ν` with `t - τν > 0`.
pub fn max_transmissions(tau: f64, t: f64) -> i64 {
    if t <= 0.0 {
        return 0;
    }
    (t / tau).ceil() as i64 - 1
}

/// Negative-binomial weights `h_ν = (ν-1)(1-p)² p^(ν-2)` for `ν = 2, 3, ...`,
/// ending once the unvisited mass drops below [`TAIL_MASS`].
#[derive(Clone, Debug)]
pub(crate) struct TransmissionWeights {
    p: f64,
    nu: i64,
    pow: f64,
}

impl TransmissionWeights {
    pub(crate) fn new(p: f64) -> Self {
        TransmissionWeights { p, nu: 2, pow: 1.0 }
    }
}

impl Iterator for TransmissionWeights {
    type Item = (i64, f64);

    fn next(&mut self) -> Option<(i64, f64)> {
        let q = 1.0 - self.p;
        // P(N >= ν) = p^(ν-1) + (ν-1)(1-p)p^(ν-2)
        let remaining = self.pow * (self.p + (self.nu - 1) as f64 * q);
        if remaining < TAIL_MASS {
            return None;
        }
        let item = (self.nu, (self.nu - 1) as f64 * q * q * self.pow);
        self.nu += 1;
        self.pow *= self.p;
        Some(item)
    }
}

/// `P(T ≤ t)` for a node processing `load` points.
///
/// Sums `h_ν (1 - exp(-(αμ/load)(t - load/μ - τν)))` over the transmission
/// counts `ν ≥ 2` whose step `t - load/μ - τν` is positive.
pub fn cdf_delay(profile: &NodeProfile, load: f64, t: f64) -> Result<f64> {
    if !(load > 0.0) {
        return Err(Error::domain(format!("cdf undefined at load {load}")));
    }
    if profile.is_guaranteed() {
        return Ok(if t > 0.0 { 1.0 } else { 0.0 });
    }
    if t <= 2.0 * profile.tau {
        return Ok(0.0);
    }
    let nu_max = max_transmissions(profile.tau, t);
    let slack = t - load / profile.mu;
    let rate = profile.memory_rate(load);
    let mut total = 0.0;
    for (nu, h) in TransmissionWeights::new(profile.p) {
        let x = slack - profile.tau * nu as f64;
        if nu > nu_max || x <= 0.0 {
            break;
        }
        total += h * -(-rate * x).exp_m1();
    }
    Ok(total.clamp(0.0, 1.0))
}
