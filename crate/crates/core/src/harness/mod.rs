//! Experiment orchestration: scenarios, runs, baselines, ablations, the
//! burst stress test, metrics and trace files.

pub mod burst;
pub mod config;
pub mod metrics;
pub mod replay;
pub mod runner;
pub mod trace;

pub use burst::{burst_response, fresh_with_parameters, recovery_time, run_burst_test, BurstOutcome, BurstReport};
pub use config::{BurstTestConfig, ScenarioConfig, TaskConfig, Variant};
pub use metrics::{compute_metrics, episodes, summarize, MeanStd, MetricsRow, RunSummary, SafetyCounts};
pub use replay::{replay_rows, ReplayReport};
pub use runner::{run_ablation, run_baseline, run_training, Controller, RunFiles, RunOutput, Simulation};
pub use trace::{read_trace, write_trace, StepRecord};
