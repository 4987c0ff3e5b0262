//! Scripted environments, backends and scenario documents for offline runs.

pub mod backend;
pub mod env;
pub mod experiment;
pub mod scenario;
pub mod suite;

pub use backend::{FaultInjection, Probe, RecallRule, RoleScript, RoundScript, ScriptedBackend};
pub use env::{CommandSpec, EnvSpec, ReplayMode, ScriptedEnvironment, NOT_FOUND_EXIT};
pub use experiment::{learning_experiment, skip_path_experiment, SkipPathReport, ToolState};
pub use scenario::{BackendSpecs, Expectation, Family, Run, Scenario, ScenarioError};
pub use suite::{run_suite, SuiteEntry, SuiteReport, SuiteRow, BUNDLED};
