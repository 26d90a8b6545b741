//! Data ingestion, network setup, experiment orchestration and outputs.

pub mod config;
pub mod experiment;
pub mod idx;
pub mod metrics;
pub mod partition;
pub mod profiles;

pub use config::{ExperimentConfig, SchemeKind};
pub use experiment::{plan_allocation, run_experiment, run_experiment_on, AllocationSummary, ExperimentOutput};
pub use idx::{load_idx_dataset, RawDataset};
pub use metrics::write_metrics;
pub use partition::{partition_noniid, ClientShard};
pub use profiles::build_profiles;
