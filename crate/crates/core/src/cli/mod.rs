//! Experiment configuration, sweeps and report generation behind the `rfshift` binary.

pub mod config;
pub mod report;
pub mod sweep;

pub use config::{ExperimentConfig, ParsedConfig, SpectrumSource};
pub use report::{diagnose_report, kernel_reports_csv, kernel_verify, spectral_ratio_report, AuditOptions, KernelVerifyOptions};
pub use sweep::{run_sweep, SweepResult, SweepRow, CSV_HEADER};
