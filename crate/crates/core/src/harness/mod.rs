//! Session orchestration: configuration, the per-second duty cycle, analytic
//! and Monte Carlo runs, and report files.

mod config;
mod report;
mod run;
mod schedule;

pub use config::{Mode, RunConfig, CONFIG_KEYS};
pub use report::{
    emit_report, read_summary, DelayRow, ReportPaths, SessionReport, REPORT_SCHEMA_VERSION,
};
pub use run::{
    calibrate_demo, parse_range, run, run_analytic, run_montecarlo, simulate_ledger, stream_rng,
    sweep, sweep_csv, SweepRow,
};
pub use schedule::{schedule, SecondPlan};
