//! Run configuration, the evolution loop, evaluation, replay and reports.

mod config;
mod evaluate;
mod replay;
mod report;
mod rundir;
mod spiral;
mod tasks;

pub use config::{
    ConfigError, EnvironmentConfig, EvolutionConfig, Mode, ProviderConfig, ReflectionSource, RevisionSource,
};
pub use evaluate::{eval_seed, evaluate, EnvFactory, EvalRequest, EvaluationReport, FamilyCount};
pub use replay::{compare, load_trajectory, replay, replay_in_run, ReplayError, ReplayVerdict};
pub use report::{ablation_table, load_reports, stage_table, ReportError};
pub use rundir::{csv_header, csv_row, RunDir, RunDirError, RunManifest, RunSummary, MANIFEST as RUN_MANIFEST};
pub use spiral::{env_factory, run_spiral, Runtime, SpiralError, SpiralOutcome, StopReason};
pub use tasks::{TaskSpec, TaskStream};
