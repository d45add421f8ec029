//! Scenario harness for shape control of a hanging rod: collect exploration
//! data, train the Jacobian network, and run the closed-loop tasks.

pub mod pipeline;
pub mod run;
pub mod scenario;

pub use run::{run_scenario, RunError, RunReport, TargetReport};
pub use scenario::{preset, resolve, ReferenceSpec, Scenario, ScenarioError, TargetSpec};
