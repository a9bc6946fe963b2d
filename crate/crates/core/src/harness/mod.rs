//! Scenario files, calibration, experiment matrices and reports.

mod calibrate;
mod experiment;
mod jobs;
mod report;
mod scenario;

pub use calibrate::{breakthrough_step, calibrate, Calibration, CalibrationConfig};
pub use experiment::{run_experiment, write_summary_csv, ExperimentMatrix, ExperimentResult, PointSummary, ResultRow, Sweep};
pub use jobs::{load_toml, EncodeJob, RlJob, SurrogateJob, SurrogateScore};
pub use report::{compare_report, pattern_checks, Check};
pub use scenario::{build_controller, load_scenario, ControllerSpec, Scenario, Weights};
