//! Rotation-invariant error, restart selection and parameter sweeps.

mod metric;
mod sweep;

pub use metric::{fit_loglog_slope, rotation_error, select_best};
pub use sweep::{
    random_truth, read_records, run_sweep, run_trial, summarize, write_records, Summary,
    SummaryPoint, SweepKind, SweepSpec, TrialRecord,
};
