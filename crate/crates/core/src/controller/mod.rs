//! Mission controller: drives rounds S1..S6, mediates messages, enforces
//! budgets and applies the termination conditions.

pub mod cost;
pub mod fault;
pub mod log;
pub mod message;
mod round;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adapter::RoleBackend;
use crate::canonical::{ContentHash, SerializationError};
use crate::env::Environment;
use crate::knowledge::{KbConfig, KbError, KnowledgeBase};
use crate::model::{BudgetVector, EntryKind, Outcome, RoleId, Stage};
use crate::strategy::{ReplyKind, UtilityWeights};
use crate::validator::{ScoreWeights, Validator};
use crate::workspace::{Grant, MissionId, TokenIssuer, WorkspaceError};

pub use cost::{role_class, CostEvent, CostLedger, Spent};
pub use fault::{FaultInfo, FaultKind};
pub use log::{read_log, to_jsonl, write_log, EntryRef, LogError, LogRecord, MissionLog, LOG_FORMAT};
pub use message::{deliver, DeliveryError, Message, MessageKind};

/// Every tunable of a mission; echoed verbatim into the log header.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    pub seed: u64,
    pub executors: u32,
    /// Handshake depth.
    pub k: u32,
    pub k_stall: u32,
    pub kb: KbConfig,
    pub utility: UtilityWeights,
    pub scoring: ScoreWeights,
    pub budget: BudgetVector,
    pub allow_install: bool,
    /// Logical time charged when a round opens.
    pub round_setup_ms: u64,
    pub call_timeout_ms: u64,
    pub token_cap: u64,
    /// Declared validator usage per round.
    pub validator_tokens: u64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            seed: 0,
            executors: 1,
            k: 3,
            k_stall: 3,
            kb: KbConfig::default(),
            utility: UtilityWeights::default(),
            scoring: ScoreWeights::default(),
            budget: BudgetVector::default(),
            allow_install: false,
            round_setup_ms: 1,
            call_timeout_ms: 30_000,
            token_cap: 8192,
            validator_tokens: 0,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = ControllerError::Config;
        if self.executors == 0 {
            return Err(bad("at least one executor is required".into()));
        }
        if self.k == 0 {
            return Err(bad("handshake depth k must be at least 1".into()));
        }
        if self.k_stall == 0 {
            return Err(bad("k_stall must be at least 1".into()));
        }
        if self.round_setup_ms == 0 {
            return Err(bad("round_setup_ms must be positive so every mission terminates".into()));
        }
        if self.call_timeout_ms == 0 {
            return Err(bad("call_timeout_ms must be positive".into()));
        }
        self.kb.validate().map_err(bad)?;
        self.budget.validate().map_err(bad)?;
        self.utility.validate().map_err(|e| bad(e.to_string()))?;
        self.scoring.validate().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TerminationReason {
    Success,
    TimeBudget,
    TokenBudget,
    RiskBudget,
    Stall,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::Success => "SUCCESS",
            TerminationReason::TimeBudget => "TIME_BUDGET",
            TerminationReason::TokenBudget => "TOKEN_BUDGET",
            TerminationReason::RiskBudget => "RISK_BUDGET",
            TerminationReason::Stall => "STALL",
        }
    }

    pub fn is_budget(self) -> bool {
        matches!(self, TerminationReason::TimeBudget | TerminationReason::TokenBudget | TerminationReason::RiskBudget)
    }
}

impl std::str::FromStr for TerminationReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use TerminationReason::*;
        [Success, TimeBudget, TokenBudget, RiskBudget, Stall]
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown termination reason {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ControllerError {
    #[error("invalid mission config: {0}")]
    Config(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("workspace: {0}")]
    Workspace(#[from] WorkspaceError),
    #[error("message delivery: {0}")]
    Delivery(#[from] DeliveryError),
    #[error(transparent)]
    Serialization(#[from] SerializationError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("validator: {0}")]
    Validator(String),
}

/// One backend per role; the executor backend serves every instance.
pub struct RoleSet {
    pub detective: Box<dyn RoleBackend>,
    pub strategist: Box<dyn RoleBackend>,
    pub general: Box<dyn RoleBackend>,
    pub executor: Box<dyn RoleBackend>,
}

impl RoleSet {
    pub fn get_mut(&mut self, role: RoleId) -> Option<&mut dyn RoleBackend> {
        Some(match role {
            RoleId::Detective => self.detective.as_mut(),
            RoleId::Strategist => self.strategist.as_mut(),
            RoleId::General => self.general.as_mut(),
            RoleId::Executor(_) => self.executor.as_mut(),
            RoleId::Validator | RoleId::Controller => return None,
        })
    }

    pub fn describe(&self) -> Value {
        json!({
            "detective": self.detective.serialize(),
            "strategist": self.strategist.serialize(),
            "general": self.general.serialize(),
            "executor": self.executor.serialize(),
        })
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct HandshakeSummary {
    pub utilities: Vec<f64>,
    pub sources: Vec<String>,
    pub replies: Vec<ReplyKind>,
    pub committed: usize,
    pub agreed: bool,
    pub messages: usize,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u64,
    /// `None` when the round ended on a budget ceiling before S6.
    pub outcome: Option<Outcome>,
    pub stages: Vec<Stage>,
    pub fault: Option<FaultInfo>,
    pub plan: Option<String>,
    /// Why no plan was committed, when selection failed.
    pub plan_error: Option<String>,
    /// Codes of refused backend requests.
    pub rejected: Vec<String>,
    pub handshake: Option<HandshakeSummary>,
    pub messages: usize,
    pub dispatches: usize,
    pub promoted: usize,
    pub accepted: usize,
    pub refreshed: usize,
    pub evicted: usize,
    pub ledger: CostLedger,
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct KbStats {
    pub live: usize,
    pub tombstoned: usize,
    pub by_kind: BTreeMap<EntryKind, usize>,
}

impl KbStats {
    pub fn of(kb: &KnowledgeBase) -> Self {
        let mut by_kind = BTreeMap::new();
        for e in kb.live() {
            *by_kind.entry(e.kind()).or_default() += 1;
        }
        KbStats { live: kb.len(), tombstoned: kb.tombstoned().count(), by_kind }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct MissionReport {
    pub reason: TerminationReason,
    pub outcome: Outcome,
    pub rounds: u64,
    pub spent: Spent,
    pub kb: KbStats,
    pub cost_total: u64,
    pub round_summaries: Vec<RoundSummary>,
    pub backends: Value,
    /// SHA-256 of the JSON-lines log bytes.
    pub log_digest: ContentHash,
}

/// Controller-issued tokens for one mission.
pub(crate) struct Tokens {
    pub ctrl: crate::workspace::CapabilityToken,
    pub detective: crate::workspace::CapabilityToken,
    pub strategist: crate::workspace::CapabilityToken,
    pub general: crate::workspace::CapabilityToken,
    pub executors: Vec<crate::workspace::CapabilityToken>,
    pub validator_read: crate::workspace::CapabilityToken,
    pub validator_kb: crate::workspace::CapabilityToken,
}

impl Tokens {
    fn issue(issuer: &mut TokenIssuer, executors: u32) -> Self {
        let w = Grant::WriteOwnPartition;
        Tokens {
            ctrl: issuer.issue(RoleId::Controller, w),
            detective: issuer.issue(RoleId::Detective, w),
            strategist: issuer.issue(RoleId::Strategist, w),
            general: issuer.issue(RoleId::General, w),
            executors: (0..executors).map(|i| issuer.issue(RoleId::Executor(i), w)).collect(),
            validator_read: issuer.issue(RoleId::Validator, Grant::ReadAll),
            validator_kb: issuer.issue(RoleId::Validator, Grant::ValidatorWriteKb),
        }
    }

    pub fn for_role(&self, role: RoleId) -> Option<&crate::workspace::CapabilityToken> {
        match role {
            RoleId::Detective => Some(&self.detective),
            RoleId::Strategist => Some(&self.strategist),
            RoleId::General => Some(&self.general),
            RoleId::Executor(i) => self.executors.get(i as usize),
            RoleId::Controller => Some(&self.ctrl),
            RoleId::Validator => None,
        }
    }
}

/// Runs rounds until success, a budget ceiling or a stall.
pub fn run_mission(
    config: &MissionConfig,
    env: &mut dyn Environment,
    roles: &mut RoleSet,
    kb: &mut KnowledgeBase,
    log: &mut MissionLog,
) -> Result<MissionReport, ControllerError> {
    config.validate()?;
    let mut cfg = config.clone();
    // a persisted store keeps its own parameters
    cfg.kb = *kb.config();
    let validator = Validator::new(cfg.scoring, cfg.kb.tau_prom).map_err(|e| ControllerError::Validator(e.to_string()))?;
    let mut issuer = TokenIssuer::new(MissionId(cfg.seed));
    let tokens = Tokens::issue(&mut issuer, cfg.executors);

    log.push(LogRecord::Header {
        format: LOG_FORMAT.into(),
        hash_function: kb.hash_function().into(),
        seed: cfg.seed,
        config: cfg.clone(),
        kb_initial: kb.live().map(EntryRef::from).collect(),
    });
    log.flush()?;

    let mut spent = Spent::default();
    let mut summaries = Vec::new();
    let mut stall = 0u32;
    let mut cost_total = 0u64;
    let mut round = 0u64;
    let (reason, outcome) = loop {
        round += 1;
        let _span = tracing::info_span!("round", round).entered();
        let runner = round::RoundRunner {
            cfg: &cfg,
            env: &mut *env,
            roles: &mut *roles,
            log: &mut *log,
            spent: &mut spent,
            tokens: &tokens,
            validator: &validator,
            mission: MissionId(cfg.seed),
        };
        let end = runner.run(round, kb)?;
        log.flush()?;
        cost_total += end.summary.ledger.total;
        let summary = end.summary;
        let accepted = summary.accepted;
        let outcome = summary.outcome;
        summaries.push(summary);
        if let Some(reason) = end.budget {
            tracing::info!(reason = reason.as_str(), "budget ceiling reached");
            break (reason, Outcome::Fail);
        }
        if outcome == Some(Outcome::Success) {
            break (TerminationReason::Success, Outcome::Success);
        }
        stall = if accepted == 0 { stall + 1 } else { 0 };
        if stall >= cfg.k_stall {
            break (TerminationReason::Stall, Outcome::Fail);
        }
    };
    log.push(LogRecord::Termination { reason, rounds: round, outcome });
    log.flush()?;
    tracing::info!(reason = reason.as_str(), rounds = round, "mission terminated");
    Ok(MissionReport {
        reason,
        outcome,
        rounds: round,
        spent,
        kb: KbStats::of(kb),
        cost_total,
        round_summaries: summaries,
        backends: roles.describe(),
        log_digest: ContentHash::digest(&to_jsonl(log.records())),
    })
}
