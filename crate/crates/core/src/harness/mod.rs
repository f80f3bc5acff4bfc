//! Experiment configuration, the round loop, metrics output and sweeps.

pub mod config;
pub mod metrics;
pub mod sim;
pub mod sweep;

pub use config::{Algorithm, DataConfig, ExperimentConfig, ModelConfig};
pub use metrics::{fmt_sig9, to_csv, MetricsWriter, RoundMetrics, CSV_HEADER};
pub use sim::{calibrate_tau, run, run_to_dir, DataObjective, Evaluation, Problem, Simulation};
pub use sweep::{parse_seed_range, run_sweep, SweepRow, SweepSpec, Variant};
