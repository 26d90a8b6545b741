//! Minimum-deadline load allocation.
//!
//! Step one maximizes every node's expected return at a fixed deadline.
//! Step two finds the smallest deadline at which the maximized total
//! reaches the demand `m`. The total is non-decreasing in the deadline, so
//! the second step is a bisection.

mod awgn;
mod lambert;
mod node;

pub use awgn::{
    awgn_optimal_load, awgn_optimal_return, awgn_return_slope, awgn_saturation_deadline, awgn_slope,
};
pub use lambert::{lambert_w_minus1, lambert_w_minus1_of_neg_exp};
pub use node::{concavity_pieces, expected_return, maximize_node_return, ConcavePiece, NodeOptimum};

use serde::{Deserialize, Serialize};

use crate::delay::NodeProfile;
use crate::error::{Error, Result};

/// Deadline beyond which an unmet demand is declared infeasible.
pub const INFEASIBLE_DEADLINE: f64 = 1e12;
/// Relative width at which the deadline bisection stops.
const DEADLINE_RTOL: f64 = 1e-10;
const MAX_DEADLINE_BISECTIONS: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub t_star: f64,
    /// Real-valued optimal loads, one per node in input order.
    pub loads: Vec<f64>,
    pub expected_return: f64,
}

/// Optimal load and return of one node at deadline `t`, using the closed
/// form on reliable links.
pub fn node_optimum(profile: &NodeProfile, t: f64) -> NodeOptimum {
    if !profile.is_guaranteed() && profile.p == 0.0 {
        // the closed form only fails on p != 0, excluded above
        let load = awgn_optimal_load(profile, t).unwrap_or(0.0);
        let value = awgn_optimal_return(profile, t).unwrap_or(0.0);
        return NodeOptimum { load, value };
    }
    maximize_node_return(profile, t)
}

/// Maximized expected aggregate return of all nodes at deadline `t`.
pub fn total_expected_return(profiles: &[NodeProfile], t: f64) -> f64 {
    profiles.iter().map(|p| node_optimum(p, t).value).sum()
}

/// Smallest deadline whose maximized expected return meets `m`, with the
/// per-node loads achieving it.
pub fn solve_allocation(profiles: &[NodeProfile], m: f64) -> Result<AllocationResult> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::domain(format!("demand must be positive, got {m}")));
    }
    for profile in profiles {
        profile.validate()?;
    }
    let capacity: f64 = profiles.iter().map(|p| p.ell_max).sum();
    let guaranteed: f64 = profiles
        .iter()
        .filter(|p| p.is_guaranteed())
        .map(|p| p.ell_max)
        .sum();
    let infeasible = |achievable: f64| Error::Infeasible {
        demand: m,
        achievable,
        shortfall: m - achievable,
    };
    // a stochastic node reaches its full load only in the limit
    if capacity < m {
        return Err(infeasible(capacity));
    }
    if capacity == m && guaranteed < m {
        return Err(infeasible(total_expected_return(profiles, INFEASIBLE_DEADLINE)));
    }

    let stochastic_taus = profiles.iter().filter(|p| !p.is_guaranteed()).map(|p| p.tau);
    // below every 2τ only guaranteed nodes contribute
    let mut lo = if guaranteed >= m {
        0.0
    } else {
        2.0 * stochastic_taus.clone().fold(f64::INFINITY, f64::min)
    };
    let mut hi = 2.0 * stochastic_taus.fold(0.0, f64::max);
    if hi <= lo {
        hi = lo.max(f64::MIN_POSITIVE);
    }
    while total_expected_return(profiles, hi) < m {
        if hi >= INFEASIBLE_DEADLINE {
            return Err(infeasible(total_expected_return(profiles, INFEASIBLE_DEADLINE)));
        }
        lo = hi;
        hi = (2.0 * hi).min(INFEASIBLE_DEADLINE);
    }
    for _ in 0..MAX_DEADLINE_BISECTIONS {
        if hi - lo <= DEADLINE_RTOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if total_expected_return(profiles, mid) >= m {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    let optima: Vec<NodeOptimum> = profiles.iter().map(|p| node_optimum(p, hi)).collect();
    Ok(AllocationResult {
        t_star: hi,
        loads: optima.iter().map(|o| o.load).collect(),
        expected_return: optima.iter().map(|o| o.value).sum(),
    })
}

impl AllocationResult {
    /// Integer loads handed to training: every load rounded down, then the
    /// last node (the server) gains one point if the rounded return falls
    /// below `m - 1`, within its capacity.
    pub fn integer_loads(&self, profiles: &[NodeProfile], m: f64) -> Vec<usize> {
        let mut loads: Vec<usize> = self
            .loads
            .iter()
            .map(|&l| l.max(0.0).floor() as usize)
            .collect();
        let rounded_return: f64 = profiles
            .iter()
            .zip(&loads)
            .map(|(p, &l)| expected_return(p, l as f64, self.t_star))
            .sum();
        if rounded_return < m - 1.0 {
            if let (Some(last), Some(profile)) = (loads.last_mut(), profiles.last()) {
                if ((*last + 1) as f64) <= profile.ell_max {
                    *last += 1;
                }
            }
        }
        loads
    }
}
