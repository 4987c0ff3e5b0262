//! Hypothesis graphs, plan utility, budget-constrained selection and the
//! bounded strategist/general handshake.

mod estimate;
mod negotiate;
mod select;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::abstraction::abstract_text;
use crate::canonical::{ContentHash, SerializationError};
use crate::model::{CostVector, EntryId, Outcome, RoleId};

pub use estimate::{estimate_success, laplace, predict_costs, utility, utility_value, EMA_FACTOR};
pub use negotiate::{negotiate, Counterpart, Negotiation, NegotiationError, Reply, ReplyKind};
pub use select::{assign_executors, evaluate, rank, select_plan, Evaluation, SelectionContext};

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StrategyError {
    #[error("no candidate hypotheses")]
    NoCandidates,
    #[error("all {0} candidates violate the remaining budget")]
    Infeasible(usize),
    #[error("hypothesis {id}: {reason}")]
    InvalidHypothesis { id: String, reason: String },
    #[error("utility weights must be nonnegative and finite")]
    InvalidWeights,
    #[error(transparent)]
    Serialization(#[from] SerializationError),
}

impl StrategyError {
    pub fn code(&self) -> &'static str {
        match self {
            StrategyError::NoCandidates => "NO_CANDIDATES",
            StrategyError::Infeasible(_) => "INFEASIBLE",
            StrategyError::InvalidHypothesis { .. } => "INVALID_HYPOTHESIS",
            StrategyError::InvalidWeights => "INVALID_WEIGHTS",
            StrategyError::Serialization(_) => "SERIALIZATION",
        }
    }
}

/// One reasoning step with its expected signals, cost and prior.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct HypothesisNode {
    pub step_index: u32,
    /// Tool the step runs.
    pub operator: String,
    pub command: String,
    #[serde(default)]
    pub expected_signals: Vec<String>,
    #[serde(default)]
    pub resource_cost: CostVector,
    #[serde(default = "default_prior")]
    pub prior_confidence: f64,
    #[serde(default)]
    pub matched_patterns: Vec<EntryId>,
    /// Step indices this node depends on.
    #[serde(default)]
    pub depends_on: Vec<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_prior() -> f64 {
    0.5
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub nodes: Vec<HypothesisNode>,
}

impl Hypothesis {
    /// Checks node invariants and that dependencies point at earlier steps,
    /// which makes the graph acyclic with `step_index` a topological order.
    pub fn validate(&self) -> Result<(), StrategyError> {
        let bad = |reason: String| StrategyError::InvalidHypothesis { id: self.id.clone(), reason };
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.step_index) {
                return Err(bad(format!("duplicate step_index {}", n.step_index)));
            }
            if !(0.0..=1.0).contains(&n.prior_confidence) {
                return Err(bad(format!("prior_confidence {} outside [0,1]", n.prior_confidence)));
            }
            if !n.resource_cost.is_valid() {
                return Err(bad(format!("invalid resource cost at step {}", n.step_index)));
            }
            if n.timeout_ms == 0 {
                return Err(bad(format!("zero timeout at step {}", n.step_index)));
            }
        }
        for n in &self.nodes {
            for d in &n.depends_on {
                if !seen.contains(d) {
                    return Err(bad(format!("step {} depends on missing step {d}", n.step_index)));
                }
                if *d >= n.step_index {
                    return Err(bad(format!("step {} depends on later step {d}", n.step_index)));
                }
            }
        }
        Ok(())
    }

    pub fn ordered_nodes(&self) -> Vec<&HypothesisNode> {
        let mut v: Vec<_> = self.nodes.iter().collect();
        v.sort_by_key(|n| n.step_index);
        v
    }

    /// Pattern key over the abstracted operator names.
    pub fn signature(&self) -> ContentHash {
        let ops: Vec<String> = self.ordered_nodes().iter().map(|n| abstract_text(&n.operator)).collect();
        ContentHash::of(&ops).expect("strings always encode")
    }

    pub fn actions(&self) -> Vec<AtomicAction> {
        self.ordered_nodes()
            .into_iter()
            .map(|n| AtomicAction {
                command: n.command.clone(),
                tool: n.operator.clone(),
                expected_signals: n.expected_signals.clone(),
                timeout_ms: n.timeout_ms,
                declared_cost: n.resource_cost,
            })
            .collect()
    }
}

/// One executable step, bound to the tool it requires.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct AtomicAction {
    pub command: String,
    pub tool: String,
    pub expected_signals: Vec<String>,
    pub timeout_ms: u64,
    pub declared_cost: CostVector,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Plan {
    pub source_hypothesis: String,
    pub signature: ContentHash,
    pub actions: Vec<AtomicAction>,
    /// `assignment[i]` runs `actions[i]`.
    pub assignment: Vec<RoleId>,
    pub utility: f64,
    pub p_hat: f64,
    pub predicted_cost: CostVector,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        UtilityWeights { w1: 1.0, w2: 0.25, w3: 0.25, w4: 0.5 }
    }
}

impl UtilityWeights {
    pub fn validate(&self) -> Result<(), StrategyError> {
        let ok = [self.w1, self.w2, self.w3, self.w4].iter().all(|w| w.is_finite() && *w >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(StrategyError::InvalidWeights)
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        UtilityWeights { w1: self.w1 * c, w2: self.w2 * c, w3: self.w3 * c, w4: self.w4 * c }
    }
}

/// Payload of a CAPABILITY entry: running statistics for one (role, tool).
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CapabilityProfile {
    pub role: RoleId,
    pub tool: String,
    pub available: bool,
    pub observations: u64,
    pub successes: u64,
    /// Exponential moving average of observed cost.
    pub ema: CostVector,
}

/// Payload of a FEEDBACK entry.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct FeedbackSummary {
    pub role: RoleId,
    pub round: u64,
    pub outcome: Outcome,
    pub role_score: f64,
    /// Plan signature, present on the general's feedback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<ContentHash>,
    /// Fault kind when this records a fault against the role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn node(step: u32, tool: &str, cost: CostVector) -> HypothesisNode {
        HypothesisNode {
            step_index: step,
            operator: tool.into(),
            command: format!("{tool} target"),
            expected_signals: vec![],
            resource_cost: cost,
            prior_confidence: 0.5,
            matched_patterns: vec![],
            depends_on: if step > 0 { vec![step - 1] } else { vec![] },
            timeout_ms: 1000,
        }
    }

    pub fn hyp(id: &str, nodes: Vec<HypothesisNode>) -> Hypothesis {
        Hypothesis { id: id.into(), nodes }
    }
}
