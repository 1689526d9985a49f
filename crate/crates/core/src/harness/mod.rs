//! Experiment harness behind the `igdm` binary: run configs, reports,
//! checkpoints and the command implementations.

mod checkpoint;
mod commands;
mod config;
mod report;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use commands::{
    avg_delta, cmd_eval, cmd_export_graph, cmd_robustness, cmd_sweep, cmd_train, config_from_report,
    default_conditions, format_metrics, grid, load_data, prepare_raw, prepare_synth, run_on, sweep_summary, write_run,
    Axis, Condition, GraphKind, RobustnessRow, RunOutcome, SweepPoint, CHECKPOINT_FILE, CONFIG_FILE, REPORT_FILE,
    TIMINGS_FILE,
};
pub use config::{parse_synth_spec, DataSource, RunConfig, KEYS};
pub use report::{AdamSettings, ConfigRecord, FinalRecord, GraphQuality, ReportRecord, RunReport, TimingRecord};
