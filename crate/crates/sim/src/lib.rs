//! File formats, experiment runner and TCP mode for `offload-core`.

pub mod runner;
pub mod scenario;
pub mod trace;
pub mod wire;

pub use offload_core;
pub use runner::{load_plan, ExperimentPlan, Mode, PlanError, RunOutput, RunSpec, Verdict};
pub use scenario::{load_scenario, ScenarioError, ScenarioFile};
