//! Config-driven experiment runner: config parsing, the training pipeline
//! with its run-directory artifacts, and the inspection commands.

mod commands;
mod config;
mod run;

pub use commands::{
    aps_run, collect_summaries, eval_run, export_run, render_report, report_rows, CensusRow,
    EvalRow, ReportRow,
};
pub use config::{
    parse_config, DataConfig, EncoderConfig, EncoderKind, IdxPaths, StepSettings, Task,
    TrainConfig, Variant, KEYS,
};
pub use run::{
    checkpoint_file, load_datasets, metrics_csv, open_run, read_summary, run, run_dir, Datasets,
    Networks, RunOptions, RunSummary, Timing, CONFIG_FILE, METRICS_FILE, METRICS_HEADER,
    SUMMARY_FILE, TIMING_FILE,
};
