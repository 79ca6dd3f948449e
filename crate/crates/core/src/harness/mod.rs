//! Experiment loop, presets, metrics and result files.

mod config;
mod output;
mod run;

pub use config::{merge, ExperimentConfig, Method, MethodFlags, NetworkConfig, Task};
pub use output::{emit_results, metrics_csv, EmittedFiles, Manifest, WeightDigest, CSV_HEADER};
pub use run::{
    agreement_rate, bit_sweep, run_experiment, run_seed, ExperimentResult, MetricsRecord, SeedRun, SWEEP_BITS,
};
