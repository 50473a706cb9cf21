//! Experiment runner for the contextual state estimators: RMSE metrics,
//! benchmark cells over synthetic datasets, CSV and manifest output.

pub mod experiment;
pub mod metrics;
pub mod verify;

pub use experiment::{
    config_hash, load_spec, run_cell, run_cell_on, run_experiment, run_instance, write_outputs, BenchError,
    CandidateDiagnostics, CellFailure, CellReport, ExperimentReport, ExperimentSpec,
    InstanceResult, MethodOutcome, ResultRow,
};
pub use metrics::{apparent_power_profile, rmse_apparent_power, rmse_state, MetricError};
