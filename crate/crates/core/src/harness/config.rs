//! Experiment configuration: a flat TOML table with units in key names.
//!
//! Every key is optional; missing keys take the desk-scale defaults of
//! [`ExperimentConfig::default`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coding::EncodingDist;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Naive,
    Greedy,
    Coded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding the four IDX files (optionally gzipped).
    pub dataset_dir: PathBuf,
    pub dataset_format: String,
    /// Leading training rows used; 0 keeps all.
    pub train_limit: usize,
    /// Leading test rows used; 0 keeps all.
    pub test_limit: usize,

    pub n_clients: usize,
    pub rff_dim: usize,
    pub rff_sigma: f64,
    pub seed: u64,

    /// Global mini-batch size `m`.
    pub global_batch: usize,
    /// Parity redundancy cap `u_max / m`.
    pub delta: f64,
    /// Fraction of clients greedy aggregation ignores.
    pub psi: f64,

    /// Geometric ratios of the link-rate and compute spreads.
    pub k1: f64,
    pub k2: f64,
    /// Largest spread exponent; rank `i` of `n` gets `k^(i·span/(n-1))`.
    /// 29 keeps the max/min ratios of a 30-client network at any `n`.
    pub spread_span: f64,
    pub base_rate_bps: f64,
    pub base_mac_per_s: f64,
    pub link_failure_prob: f64,
    pub compute_ratio_alpha: f64,
    pub protocol_overhead_frac: f64,
    pub scalar_bits: u32,

    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub l2_lambda: f64,

    pub schemes: Vec<SchemeKind>,
    pub encoding: EncodingDist,

    /// Server parity gradient always arrives by any positive deadline.
    pub server_guaranteed: bool,
    /// Server compute and link, used only when not guaranteed.
    pub server_mac_per_s: f64,
    pub server_rate_bps: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_dir: PathBuf::from("data/mnist-desk"),
            dataset_format: "idx".into(),
            train_limit: 6000,
            test_limit: 1000,
            n_clients: 10,
            rff_dim: 2000,
            rff_sigma: 5.0,
            seed: 20201026,
            global_batch: 1200,
            delta: 0.1,
            psi: 0.1,
            k1: 0.95,
            k2: 0.8,
            spread_span: 29.0,
            base_rate_bps: 216_000.0,
            base_mac_per_s: 3.072e6,
            link_failure_prob: 0.1,
            compute_ratio_alpha: 2.0,
            protocol_overhead_frac: 0.1,
            scalar_bits: 32,
            epochs: 70,
            lr_initial: 6.0,
            lr_decay_factor: 0.8,
            lr_decay_epochs: vec![40, 65],
            l2_lambda: 9e-6,
            schemes: vec![SchemeKind::Naive, SchemeKind::Greedy, SchemeKind::Coded],
            encoding: EncodingDist::Rademacher,
            server_guaranteed: true,
            server_mac_per_s: 3.072e7,
            server_rate_bps: 2.16e6,
        }
    }
}

impl ExperimentConfig {
    /// Full-scale network of 30 clients on the 60000-image training set.
    pub fn full_scale() -> Self {
        ExperimentConfig {
            train_limit: 0,
            test_limit: 0,
            n_clients: 30,
            global_batch: 12_000,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; a relative `dataset_dir` is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        if config.dataset_dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.dataset_dir = parent.join(&config.dataset_dir);
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets the epoch budget and moves the decay epochs proportionally.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        if self.epochs > 0 {
            let scale = epochs as f64 / self.epochs as f64;
            for e in &mut self.lr_decay_epochs {
                *e = (*e as f64 * scale).round() as usize;
            }
        }
        self.epochs = epochs;
        self
    }

    /// Points per local mini-batch, `m / n`.
    pub fn local_batch(&self) -> usize {
        self.global_batch / self.n_clients
    }

    /// Parity rows available at the server, `⌊δm⌋`.
    pub fn u_max(&self) -> usize {
        (self.delta * self.global_batch as f64 + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dataset_format != "idx" {
            return bad(format!("unsupported dataset format `{}`", self.dataset_format));
        }
        if self.n_clients == 0 || self.rff_dim == 0 || self.global_batch == 0 {
            return bad("n_clients, rff_dim and global_batch must be positive".into());
        }
        if !self.global_batch.is_multiple_of(self.n_clients) {
            return bad(format!(
                "global_batch {} is not divisible by n_clients {}",
                self.global_batch, self.n_clients
            ));
        }
        if !(self.rff_sigma > 0.0) {
            return bad(format!("rff_sigma must be positive, got {}", self.rff_sigma));
        }
        for (name, k) in [("k1", self.k1), ("k2", self.k2)] {
            if !(k > 0.0 && k <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {k}"));
            }
        }
        if !(self.spread_span >= 0.0 && self.spread_span.is_finite()) {
            return bad(format!("spread_span must be finite and non-negative, got {}", self.spread_span));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1], got {}", self.delta));
        }
        if !(self.psi > 0.0 && self.psi < 1.0) {
            return bad(format!("psi must lie in (0, 1), got {}", self.psi));
        }
        if !(0.0..1.0).contains(&self.link_failure_prob) {
            return bad(format!(
                "link_failure_prob must lie in [0, 1), got {}",
                self.link_failure_prob
            ));
        }
        let positive = [
            ("base_rate_bps", self.base_rate_bps),
            ("base_mac_per_s", self.base_mac_per_s),
            ("compute_ratio_alpha", self.compute_ratio_alpha),
            ("lr_initial", self.lr_initial),
            ("server_mac_per_s", self.server_mac_per_s),
            ("server_rate_bps", self.server_rate_bps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.protocol_overhead_frac < 0.0 || self.l2_lambda < 0.0 || self.scalar_bits == 0 {
            return bad("protocol_overhead_frac, l2_lambda must be >= 0 and scalar_bits > 0".into());
        }
        if self.schemes.contains(&SchemeKind::Coded) && self.u_max() == 0 {
            return bad("coded scheme needs delta * global_batch >= 1".into());
        }
        Ok(())
    }
}
