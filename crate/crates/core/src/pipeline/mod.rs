//! Configuration, training schedule, synthetic data, ablations and run artifacts.

pub mod ablation;
pub mod config;
pub mod output;
pub mod synth;
pub mod train;

pub use ablation::{run_ablation_suite, write_ablation_csv, AblationRow, Summary, Variant};
pub use config::{ClusterCount, RunConfig, TargetStrategy};
pub use output::{efficiency_report, read_labels, write_labels, write_run_outputs, write_timing_csv, TimingRow};
pub use synth::{parse_separation, synth_blobs};
pub use train::{
    evaluate, prepare_input, train, Evaluation, LossRecord, Model, ModelGrads, PhaseTimings, RefreshRecord, RunResult,
    Terms,
};
