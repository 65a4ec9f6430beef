//! Continuous-deletion experiments, efficiency benchmarks and report files.

pub mod bench;
pub mod config;
pub mod report;
pub mod run;

pub use bench::{run_efficiency_bench, BenchOptions, BenchRow};
pub use config::{DataSource, DeletionPolicy, ExperimentConfig, LossConfig, Method};
pub use report::{
    aggregate, aggregate_file, emit_report, read_rounds_csv, timing_table, write_rounds_csv,
    AggregateRow, EmittedFiles, TimingRow,
};
pub use run::{
    prepare, run_continuous_deletion, ExperimentReport, Prepared, RoundRecord, RunFailure,
};
