//! Config-driven experiment runs: parsing, ingestion, trial orchestration and
//! results output.

pub mod config;
pub mod ingest;
pub mod results;
pub mod runner;

pub use config::{
    apply_override, parse_config, parse_config_with_overrides, AnchorSpec, DataConfig,
    ExperimentConfig, GraphConfig, GraphGenerator, ModelConfig, ModelKind, WeightKind,
};
pub use ingest::{ingest_graph_csv, ingest_mask, ingest_signals_csv, write_signals_csv};
pub use results::{write_sweep_csv, Aggregate, ResultsBundle, SweepRow, TrialRecord};
pub use runner::{
    build_model, gen_data, parameter_count, prepare_trial, run_experiment, run_sweep, run_trial,
    trial_seed, TrialData, TrialOutcome,
};
