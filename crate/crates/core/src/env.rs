//! Environment interface: command execution, deterministic replay and the
//! success predicate.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::{ContentHash, SerializationError};
use crate::model::RoleId;
use crate::workspace::CapabilityToken;

/// Structured result of one command: stdout, stderr, exit, Δt and a hash of
/// the observable output.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Observation {
    pub command: String,
    pub stdout: String,
    pub stderr: String,
    pub exit: i32,
    pub elapsed_ms: u64,
    pub risk: f64,
    /// Declared tool cost units.
    pub cost: u64,
    pub output_hash: ContentHash,
}

/// Hash over the replay-comparable part of an observation.
pub fn output_hash(stdout: &str, stderr: &str, exit: i32) -> Result<ContentHash, SerializationError> {
    ContentHash::of(&json!({ "stdout": stdout, "stderr": stderr, "exit": exit }))
}

impl Observation {
    /// Payload fields shared by evidence and trace artifacts.
    pub fn to_payload(&self) -> Value {
        json!({
            "command": self.command,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "exit": self.exit,
            "elapsed_ms": self.elapsed_ms,
            "risk": self.risk,
            "output_hash": self.output_hash,
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("{0} has no environment access")]
    CommandDenied(RoleId),
    #[error("tool crashed running {command:?}: {detail}")]
    ToolCrash { command: String, detail: String },
    #[error("replay unavailable for {0:?}")]
    ReplayUnavailable(String),
}

/// The sandboxed environment a mission runs against.
pub trait Environment {
    /// First execution of a command; may change environment state (installs).
    fn execute(&mut self, command: &str) -> Result<Observation, EnvError>;

    /// Read-only re-execution used by the validator.
    fn replay(&self, command: &str) -> Result<Observation, EnvError>;

    /// Oracle check on a trace's observed output.
    fn is_success(&self, command: &str, stdout: &str) -> bool;

    fn tool_available(&self, tool: &str) -> bool;

    fn can_install(&self, tool: &str) -> bool;
}

/// Roles that may touch the environment: detective and executors.
pub fn may_execute(role: RoleId) -> bool {
    matches!(role, RoleId::Detective | RoleId::Executor(_))
}

/// Token-checked command execution.
pub fn run_command(
    token: &CapabilityToken,
    env: &mut dyn Environment,
    command: &str,
) -> Result<Observation, EnvError> {
    if !may_execute(token.holder()) {
        return Err(EnvError::CommandDenied(token.holder()));
    }
    env.execute(command)
}
