//! Scenario runner: layouts, calibration, optical-budget sweeps, long-run
//! stability runs and their reports.

pub mod calibration;
pub mod report;
pub mod run;
pub mod scenario;

pub use calibration::{run_calibration, CalibratedParams};
pub use run::{run_stability, run_sweep, simulate, StabilityReport, SweepReport, SyncMode};
pub use scenario::{Layout, ObSpec, ScenarioConfig, ScenarioFile};
