//! Config-driven experiment runs and sweeps.

mod config;
mod experiment;
mod probe;
mod sweep;

pub use config::{
    BenchmarkConfig, CsvBenchmark, ExperimentConfig, KdConfig, ProbeConfig, RunConfig,
    ScheduleConfig, StudentConfig, TeacherConfig, TeacherPreset,
};
pub use experiment::{
    baseline_for, build_bundle, pipeline_checkpoint, prepare, run_experiment, run_method,
    student_checkpoint, train_config, Prepared, RunOutcome, Summary, CHECKPOINT_DIR,
    INCOMPLETE_MARKER, METRICS_FILE, PIPELINE_CHECKPOINT, STUDENT_CHECKPOINT, SUMMARY_FILE,
};
pub use probe::{probe_cka, ProbeReport};
pub use sweep::{mean_std, run_sweep, sweep_hash, Axis, CellAggregate, RunValues, SweepRun, SweepTable, AXIS_NAMES};
