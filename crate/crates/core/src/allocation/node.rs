//! Expected return of a single node and its maximization over the load.
//!
//! For a deadline `t` the expected return `ℓ·P(T ≤ t)` is a sum of terms
//! `h_ν·ℓ(1 - e^{-z_ν})`, `z_ν = αμ(t - τν)/ℓ - α`, each present only while
//! `ℓ < μ(t - τν)`. Between consecutive breakpoints `μ(t - τν)` the set of
//! present terms is fixed and the sum is concave, so the maximum over
//! `[0, ℓ_max]` is the best of the per-piece maxima.

use serde::{Deserialize, Serialize};

use crate::delay::{cdf_delay, max_transmissions, NodeProfile, TransmissionWeights};

/// Relative width at which derivative bisection stops.
const BISECTION_RTOL: f64 = 1e-13;
const MAX_BISECTIONS: usize = 200;

/// A load interval on which the expected return is concave.
///
/// `transmissions` is the largest round-trip transmission count whose term
/// is present on the interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavePiece {
    pub lo: f64,
    pub hi: f64,
    pub transmissions: i64,
}

/// Maximizer of one node's expected return at a fixed deadline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeOptimum {
    pub load: f64,
    pub value: f64,
}

impl NodeOptimum {
    pub const ZERO: NodeOptimum = NodeOptimum {
        load: 0.0,
        value: 0.0,
    };
}

/// Expected number of data points whose gradient reaches the server by `t`.
pub fn expected_return(profile: &NodeProfile, load: f64, t: f64) -> f64 {
    if !(load > 0.0) {
        return 0.0;
    }
    load * cdf_delay(profile, load, t).unwrap_or(0.0)
}

/// Concavity intervals of [`expected_return`] in the load, clipped to
/// `(0, ℓ_max]` and ordered by increasing load.
pub fn concavity_pieces(profile: &NodeProfile, t: f64) -> Vec<ConcavePiece> {
    if profile.is_guaranteed() {
        return if t > 0.0 && profile.ell_max > 0.0 {
            vec![ConcavePiece {
                lo: 0.0,
                hi: profile.ell_max,
                transmissions: 0,
            }]
        } else {
            Vec::new()
        };
    }
    if t <= 2.0 * profile.tau || profile.ell_max <= 0.0 {
        return Vec::new();
    }
    let nu_m = max_transmissions(profile.tau, t);
    // pieces below this index start above ℓ_max
    let first = (((t - profile.ell_max / profile.mu) / profile.tau).floor() as i64 - 1).max(2);
    let mut pieces = Vec::new();
    for k in (first..=nu_m).rev() {
        let lo = if k == nu_m {
            0.0
        } else {
            profile.mu * (t - (k + 1) as f64 * profile.tau)
        };
        if lo >= profile.ell_max {
            break;
        }
        let hi = (profile.mu * (t - k as f64 * profile.tau)).min(profile.ell_max);
        if hi > lo {
            pieces.push(ConcavePiece {
                lo,
                hi,
                transmissions: k,
            });
        }
    }
    pieces
}

/// Sum of the terms `ν = 2..=top` with its load derivative.
struct PieceFn<'a> {
    profile: &'a NodeProfile,
    t: f64,
    weights: Vec<(i64, f64)>,
}

impl<'a> PieceFn<'a> {
    fn new(profile: &'a NodeProfile, t: f64, top: i64) -> Self {
        let weights = TransmissionWeights::new(profile.p)
            .take_while(|&(nu, _)| nu <= top)
            .collect();
        PieceFn { profile, t, weights }
    }

    fn derivative(&self, load: f64) -> f64 {
        if load <= 0.0 {
            return self.weights.iter().map(|&(_, h)| h).sum();
        }
        let NodeProfile { mu, alpha, tau, .. } = *self.profile;
        self.weights
            .iter()
            .map(|&(nu, h)| {
                let z = alpha * mu * (self.t - tau * nu as f64) / load - alpha;
                h * (1.0 - (-z).exp() * (1.0 + z + alpha))
            })
            .sum()
    }

    /// Maximizer of this concave function on `[lo, hi]`.
    fn argmax(&self, lo: f64, hi: f64) -> f64 {
        if self.derivative(hi) >= 0.0 {
            return hi;
        }
        let d_lo = self.derivative(lo);
        if d_lo <= 0.0 {
            return lo;
        }
        if !d_lo.is_finite() {
            return golden_section_max(|l| expected_return(self.profile, l, self.t), lo, hi);
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..MAX_BISECTIONS {
            if b - a <= BISECTION_RTOL * b {
                break;
            }
            let mid = 0.5 * (a + b);
            let d = self.derivative(mid);
            if !d.is_finite() {
                return golden_section_max(|l| expected_return(self.profile, l, self.t), a, b);
            }
            if d > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
pub(crate) fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > BISECTION_RTOL * b.abs().max(1e-300) {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Maximizes [`expected_return`] over `load ∈ [0, ℓ_max]` at deadline `t`.
///
/// Each concave piece is maximized by bisection on the sign of the
/// closed-form derivative. Pieces whose extra terms carry negligible
/// transmission-count mass share one function and are searched together.
/// Ties go to the smaller load.
pub fn maximize_node_return(profile: &NodeProfile, t: f64) -> NodeOptimum {
    if profile.is_guaranteed() {
        return if t > 0.0 {
            NodeOptimum {
                load: profile.ell_max,
                value: profile.ell_max,
            }
        } else {
            NodeOptimum::ZERO
        };
    }
    let pieces = concavity_pieces(profile, t);
    if pieces.is_empty() {
        return NodeOptimum::ZERO;
    }
    let tail = TransmissionWeights::new(profile.p)
        .last()
        .map_or(2, |(nu, _)| nu);

    let mut best = NodeOptimum::ZERO;
    let mut consider = |load: f64| {
        let value = expected_return(profile, load, t);
        if value > best.value {
            best = NodeOptimum { load, value };
        }
    };

    let mut merged_hi: Option<f64> = None;
    for piece in &pieces {
        if piece.transmissions > tail {
            merged_hi = Some(piece.hi);
            continue;
        }
        if let Some(hi) = merged_hi.take() {
            consider(PieceFn::new(profile, t, tail).argmax(0.0, hi));
        }
        consider(PieceFn::new(profile, t, piece.transmissions).argmax(piece.lo, piece.hi));
    }
    if let Some(hi) = merged_hi {
        consider(PieceFn::new(profile, t, tail).argmax(0.0, hi));
    }
    consider(profile.ell_max);
    best
}
