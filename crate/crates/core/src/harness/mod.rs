//! End-to-end experiment orchestration: dataset to inputs to training to
//! per-epoch hold-out selection to the final report.

pub mod config;
pub mod report;
pub mod run;
pub mod table;

pub use config::{ExperimentConfig, InputKind, ModelSel};
pub use report::{EpochStats, RunReport};
pub use run::{evaluate_with, record_input, render_record, run_experiment};
pub use table::compare_table;
