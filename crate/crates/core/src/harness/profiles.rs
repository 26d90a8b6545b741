//! Heterogeneous client profiles from geometric rate and compute spreads.

use crate::delay::NodeProfile;
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::rng::Stream;

/// Bits in one packet carrying a `q × c` model or gradient.
pub fn packet_bits(config: &ExperimentConfig, classes: usize) -> f64 {
    (config.rff_dim * classes) as f64 * config.scalar_bits as f64 * (1.0 + config.protocol_overhead_frac)
}

/// Data points per second at `mac_per_s`: one point costs `2qc` MACs
/// (forward product and transposed product).
pub fn points_per_second(config: &ExperimentConfig, classes: usize, mac_per_s: f64) -> f64 {
    mac_per_s / (2.0 * (config.rff_dim * classes) as f64)
}

/// Client profiles followed by the server profile.
///
/// Client `j` receives rate `base_rate·k₁^e(πⱼ)` and MAC rate
/// `base_mac·k₂^e(σⱼ)` for independent random permutations `π`, `σ`
/// (rates shuffled first), where `e(i) = i·spread_span/(n-1)`.
/// Client capacity is the local mini-batch; the server's is `⌊δm⌋`.
pub fn build_profiles(
    config: &ExperimentConfig,
    classes: usize,
    rng: &mut Stream,
) -> Result<Vec<NodeProfile>> {
    let n = config.n_clients;
    let exponent = |i: usize| {
        if n > 1 {
            i as f64 * config.spread_span / (n - 1) as f64
        } else {
            0.0
        }
    };
    let mut rates: Vec<f64> = (0..n).map(|i| config.base_rate_bps * config.k1.powf(exponent(i))).collect();
    let mut macs: Vec<f64> = (0..n).map(|i| config.base_mac_per_s * config.k2.powf(exponent(i))).collect();
    rng.shuffle(&mut rates);
    rng.shuffle(&mut macs);

    let bits = packet_bits(config, classes);
    let mut profiles = Vec::with_capacity(n + 1);
    for (rate, mac) in rates.into_iter().zip(macs) {
        profiles.push(NodeProfile::new(
            points_per_second(config, classes, mac),
            config.compute_ratio_alpha,
            bits / rate,
            config.link_failure_prob,
            config.local_batch() as f64,
        )?);
    }
    let server = NodeProfile::new(
        points_per_second(config, classes, config.server_mac_per_s),
        config.compute_ratio_alpha,
        bits / config.server_rate_bps,
        config.link_failure_prob,
        config.u_max() as f64,
    )?;
    profiles.push(if config.server_guaranteed {
        server.guaranteed()
    } else {
        server
    });
    Ok(profiles)
}
