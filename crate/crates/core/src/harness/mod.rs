//! Experiment orchestration, configuration, and persistence.

pub mod catalog;
pub mod config;
pub mod report;
pub mod sweep;

pub use catalog::{build_coefficients, build_space, default_initial_field};
pub use config::RunConfig;
pub use sweep::{
    run_convergence_sweep, run_diagnostics, run_drift_ablation, AblationReport,
    DiagnosticsReport, GridPlan, SweepReport,
};
