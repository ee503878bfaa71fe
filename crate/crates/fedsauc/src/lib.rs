//! Federated averaging of a linear digit classifier with similarity-aware
//! update suppression.
//!
//! Ten clients train on fixed digit partitions of an IDX-encoded dataset.
//! After a configurable round, the server clusters client uploads (k-means,
//! single-linkage agglomerative, or spectral), and each client stays active
//! only with probability tau, so similar clients stop sending redundant
//! updates. The crate ships a deterministic single-process simulator, a TCP
//! deployment of the same protocol, and per-round accounting of accuracy,
//! clustering quality, and suppressed traffic.

pub mod clustering;
pub mod config;
pub mod dataset;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod runner;
pub mod synth;
pub mod transport;

pub use clustering::{Algorithm, ClusterAssignment, UpdateType, UpdateVector};
pub use config::{ExperimentConfig, Mode};
pub use dataset::{ClientDataset, Sample, Scheme};
pub use federation::{FedConfig, RoundDirective, ServerState};
pub use metrics::MetricsRecord;
pub use model::{GradientUpdate, ModelParams, TrainConfig};
pub use runner::{run_client, run_server, run_sim, RunError, RunOutcome, RunSummary};
