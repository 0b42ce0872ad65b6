//! Synthetic end-to-end harness: data generator, training loop, probes and
//! the sweep and ablation drivers.

pub mod config;
pub mod experiments;
pub mod gradsuite;
pub mod model;
pub mod probe;
pub mod silhouette;
pub mod synthetic;
pub mod train;

pub use config::{RunConfigFile, Sampling, TrainConfig};
pub use experiments::{ablate, median, run_seeds, sweep_k, AblationRow, SweepRow, Variant};
pub use probe::{probe_accuracy, probe_domain_accuracy};
pub use silhouette::{silhouette, silhouette_with};
pub use synthetic::{generate_synthetic_batch, FeatureBatch};
pub use train::{train, train_run, MetricsRecord};
