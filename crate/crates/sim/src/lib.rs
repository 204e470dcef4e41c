//! Scenario runner for simulated robot-assisted instrument placement.

pub mod context;
pub mod experiment;
pub mod report;
pub mod scenario;
pub mod workflow;

pub use context::Context;
pub use experiment::{run_calibration_experiment, CalibrationStats};
pub use report::{ErrorRow, Summary};
pub use scenario::{Scenario, ScenarioError, ScenarioKind};
pub use workflow::{run_workflow, RunOptions, TrialReport, Transport, WorkflowError, WorkflowRun};
