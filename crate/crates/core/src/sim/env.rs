//! Table-driven environment with an exact success predicate.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{output_hash, EnvError, Environment, Observation};
use crate::validator::embed::fnv1a;

/// Exit status reported for commands missing from the table.
pub const NOT_FOUND_EXIT: i32 = 127;

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandSpec {
    pub command: String,
    pub stdout: String,
    pub stderr: String,
    pub exit: i32,
    pub duration_ms: u64,
    pub risk: f64,
    /// Tool cost units.
    pub cost: u64,
    /// Running this command reaches the goal state.
    pub goal: bool,
    /// The tool crashes instead of answering.
    pub crash: bool,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum ReplayMode {
    #[default]
    Deterministic,
    /// Replays of `commands` (every command when empty) come back altered.
    Perturbed {
        seed: u64,
        #[serde(default)]
        commands: Vec<String>,
    },
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSpec {
    /// Success token matched by exact whitespace-token equality.
    pub flag: Option<String>,
    pub commands: Vec<CommandSpec>,
    /// Tools missing from the sandbox.
    pub unavailable: Vec<String>,
    /// Missing tools an `install <tool>` command can provide.
    pub installable: Vec<String>,
    pub replay: ReplayMode,
}

#[derive(Clone, Debug)]
pub struct ScriptedEnvironment {
    spec: EnvSpec,
    table: BTreeMap<String, CommandSpec>,
    installed: BTreeSet<String>,
    executed: Vec<String>,
}

impl ScriptedEnvironment {
    pub fn new(spec: EnvSpec) -> Self {
        let table = spec.commands.iter().map(|c| (c.command.clone(), c.clone())).collect();
        ScriptedEnvironment { spec, table, installed: BTreeSet::new(), executed: Vec::new() }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Commands executed so far, in order.
    pub fn executed(&self) -> &[String] {
        &self.executed
    }

    fn answer(&self, command: &str) -> Result<Observation, EnvError> {
        let (stdout, stderr, exit, elapsed_ms, risk, cost) = match self.table.get(command) {
            Some(c) if c.crash => {
                return Err(EnvError::ToolCrash { command: command.into(), detail: "scripted crash".into() });
            }
            Some(c) => (c.stdout.clone(), c.stderr.clone(), c.exit, c.duration_ms, c.risk, c.cost),
            None => match command.strip_prefix("install ") {
                Some(tool) if self.spec.installable.iter().any(|t| t == tool) => {
                    (format!("installed {tool}"), String::new(), 0, 0, 0.0, 0)
                }
                _ => (String::new(), format!("NOT_FOUND: {command}"), NOT_FOUND_EXIT, 0, 0.0, 0),
            },
        };
        let output_hash = output_hash(&stdout, &stderr, exit).map_err(|e| EnvError::ToolCrash {
            command: command.into(),
            detail: e.to_string(),
        })?;
        Ok(Observation { command: command.into(), stdout, stderr, exit, elapsed_ms, risk, cost, output_hash })
    }

    fn perturbs(&self, command: &str) -> Option<u64> {
        match &self.spec.replay {
            ReplayMode::Deterministic => None,
            ReplayMode::Perturbed { seed, commands } => {
                (commands.is_empty() || commands.iter().any(|c| c == command)).then_some(*seed)
            }
        }
    }
}

impl Environment for ScriptedEnvironment {
    fn execute(&mut self, command: &str) -> Result<Observation, EnvError> {
        self.executed.push(command.to_owned());
        let obs = self.answer(command)?;
        if let Some(tool) = command.strip_prefix("install ") {
            if obs.exit == 0 && self.can_install(tool) {
                self.installed.insert(tool.to_owned());
            }
        }
        Ok(obs)
    }

    fn replay(&self, command: &str) -> Result<Observation, EnvError> {
        let mut obs = self.answer(command).map_err(|_| EnvError::ReplayUnavailable(command.into()))?;
        if let Some(seed) = self.perturbs(command) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(command.as_bytes()));
            obs.stdout.push_str(&format!(" ~{:08x}", rng.random::<u32>()));
            obs.output_hash = output_hash(&obs.stdout, &obs.stderr, obs.exit)
                .map_err(|_| EnvError::ReplayUnavailable(command.into()))?;
        }
        Ok(obs)
    }

    fn is_success(&self, command: &str, stdout: &str) -> bool {
        if self.table.get(command).is_some_and(|c| c.goal) {
            return true;
        }
        self.spec.flag.as_deref().is_some_and(|f| stdout.split_whitespace().any(|t| t == f))
    }

    fn tool_available(&self, tool: &str) -> bool {
        !self.spec.unavailable.iter().any(|t| t == tool) || self.installed.contains(tool)
    }

    fn can_install(&self, tool: &str) -> bool {
        self.spec.installable.iter().any(|t| t == tool)
    }
}
