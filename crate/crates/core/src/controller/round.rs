//! One pass of the six-stage round.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use crate::adapter::{
    ActionRequest, BackendError, BackendRequest, BackendResponse, NoTools, OutgoingMessage, ProposedArtifact, ToolPort,
};
use crate::env::{run_command, EnvError, Environment, Observation};
use crate::knowledge::{KnowledgeBase, Snapshot};
use crate::model::{
    canonical_hash, Artifact, ArtifactId, ArtifactKind, CostVector, Outcome, PartitionId, Provenance, Remaining,
    RoleId, Stage, Upstream,
};
use crate::strategy::{negotiate, AtomicAction, Counterpart, Hypothesis, NegotiationError, Plan, Reply, SelectionContext};
use crate::validator::{trace_succeeds, RoundInput, Validator, STATUS_SKIP};
use crate::workspace::{CapabilityToken, MissionId, Workspace, WorkspaceError};

use super::cost::{CostEvent, CostLedger, Spent};
use super::fault::{FaultInfo, FaultKind};
use super::log::{EntryRef, LogRecord, MissionLog, Refreshed};
use super::message::{deliver, Message, MessageKind};
use super::{ControllerError, HandshakeSummary, MissionConfig, RoleSet, RoundSummary, TerminationReason, Tokens};
use crate::model::MessageId;

/// Why stages S2..S5 stopped early.
pub(super) enum Flow {
    Fault(FaultInfo),
    Budget(TerminationReason),
    Fatal(ControllerError),
}

macro_rules! fatal_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Flow {
            fn from(e: $t) -> Self {
                Flow::Fatal(e.into())
            }
        }
    )*};
}

fatal_from!(
    ControllerError,
    crate::workspace::WorkspaceError,
    crate::canonical::SerializationError,
    crate::knowledge::KbError,
    super::message::DeliveryError
);

pub(super) struct RoundEnd {
    pub summary: RoundSummary,
    pub budget: Option<TerminationReason>,
}

pub(super) struct RoundRunner<'a> {
    pub cfg: &'a MissionConfig,
    pub env: &'a mut dyn Environment,
    pub roles: &'a mut RoleSet,
    pub log: &'a mut MissionLog,
    pub spent: &'a mut Spent,
    pub tokens: &'a Tokens,
    pub validator: &'a Validator,
    pub mission: MissionId,
}

/// Environment access bound to one role's token; remembers what it ran.
struct EnvPort<'p> {
    token: &'p CapabilityToken,
    env: &'p mut dyn Environment,
    observed: Vec<Observation>,
    crash: Option<String>,
}

impl ToolPort for EnvPort<'_> {
    fn run_command(&mut self, command: &str) -> Result<Observation, EnvError> {
        match run_command(self.token, self.env, command) {
            Ok(o) => {
                self.observed.push(o.clone());
                Ok(o)
            }
            Err(e) => {
                if let EnvError::ToolCrash { .. } = e {
                    self.crash.get_or_insert_with(|| e.to_string());
                }
                Err(e)
            }
        }
    }
}

struct Call<'c> {
    role: RoleId,
    stage: Stage,
    inputs: Vec<Artifact>,
    plan: Option<(ArtifactId, Plan)>,
    action: Option<ActionRequest>,
    iteration: u32,
    tool: Option<&'c str>,
}

impl<'c> Call<'c> {
    fn new(role: RoleId, stage: Stage, inputs: Vec<Artifact>) -> Self {
        Call { role, stage, inputs, plan: None, action: None, iteration: 0, tool: None }
    }
}

struct State {
    round: u64,
    ws: Workspace,
    snapshot: Snapshot,
    ledger: CostLedger,
    messages: Vec<Message>,
    /// ∏(1 − r_i) over this round's observations.
    keep: f64,
    stages: Vec<Stage>,
    plan: Option<(ArtifactId, Plan)>,
    handshake: Option<HandshakeSummary>,
    plan_error: Option<String>,
    rejected: Vec<String>,
    dispatches: usize,
}

struct Round<'r, 'a> {
    m: &'r mut RoundRunner<'a>,
    st: State,
}

impl RoundRunner<'_> {
    pub(super) fn run(mut self, round: u64, kb: &mut KnowledgeBase) -> Result<RoundEnd, ControllerError> {
        kb.begin_round();
        let snapshot = kb.snapshot();
        let ws = Workspace::new(self.mission, round, snapshot.prov_hashes());
        let st = State {
            round,
            ws,
            snapshot,
            ledger: CostLedger::new(self.cfg.k),
            messages: Vec::new(),
            keep: 1.0,
            stages: Vec::new(),
            plan: None,
            handshake: None,
            plan_error: None,
            rejected: Vec::new(),
            dispatches: 0,
        };
        let mut r = Round { m: &mut self, st };
        r.run(kb)
    }
}

impl Round<'_, '_> {
    fn run(&mut self, kb: &mut KnowledgeBase) -> Result<RoundEnd, ControllerError> {
        let mut fault = None;
        let flow = self.open().and_then(|()| self.stages_2_to_5());
        match flow {
            Ok(()) => {}
            Err(Flow::Fault(f)) => {
                self.record_fault(&f)?;
                fault = Some(f);
            }
            Err(Flow::Budget(reason)) => return self.end_partial(kb, reason, fault),
            Err(Flow::Fatal(e)) => return Err(e),
        }
        match self.close(kb, fault.as_ref()) {
            Ok(summary) => Ok(RoundEnd { summary, budget: None }),
            Err(Flow::Budget(reason)) => self.end_partial(kb, reason, fault),
            Err(Flow::Fatal(e)) => Err(e),
            Err(Flow::Fault(f)) => unreachable!("no fault source in S6: {f:?}"),
        }
    }

    fn enter(&mut self, stage: Stage) -> Result<(), Flow> {
        self.st.ws.attest_stage(&self.m.tokens.ctrl, stage)?;
        self.st.stages.push(stage);
        tracing::debug!(%stage, clock_ms = self.m.spent.time_ms, "stage");
        self.m.log.push(LogRecord::Stage { round: self.st.round, stage, clock_ms: self.m.spent.time_ms });
        Ok(())
    }

    /// S1: snapshot recorded, setup time charged.
    fn open(&mut self) -> Result<(), Flow> {
        self.enter(Stage::S1)?;
        let entries = self.st.snapshot.entries().map(EntryRef::from).collect();
        self.m.log.push(LogRecord::Snapshot { round: self.st.round, kb_clock: self.st.snapshot.clock(), entries });
        self.charge(None, 0, self.m.cfg.round_setup_ms, &[])
    }

    fn stages_2_to_5(&mut self) -> Result<(), Flow> {
        let t = self.m.tokens;

        self.enter(Stage::S2)?;
        let resp = self.call(Call::new(RoleId::Detective, Stage::S2, Vec::new()))?;
        let evidence = self.commit(RoleId::Detective, Stage::S2, resp)?;
        let refs: Vec<ArtifactId> = evidence.iter().map(Artifact::id).collect();
        self.send(RoleId::Detective, RoleId::Strategist, MessageKind::Summary, refs, json!({ "evidence": evidence.len() }))?;

        self.enter(Stage::S3)?;
        let inputs = self.st.ws.read_partition(&t.strategist, PartitionId::Detective)?;
        let resp = self.call(Call::new(RoleId::Strategist, Stage::S3, inputs))?;
        let arts = self.commit(RoleId::Strategist, Stage::S3, resp)?;
        let hyps = self.parse_hypotheses(Stage::S3, &arts)?;
        let refs = hyps.iter().map(|(_, id)| *id).collect();
        self.send(RoleId::Strategist, RoleId::General, MessageKind::Summary, refs, json!({ "hypotheses": hyps.len() }))?;

        self.enter(Stage::S4)?;
        self.handshake(hyps)?;

        self.enter(Stage::S5)?;
        self.execute()
    }

    fn role_token(&self, role: RoleId) -> Result<&CapabilityToken, Flow> {
        self.m
            .tokens
            .for_role(role)
            .ok_or_else(|| Flow::Fatal(ControllerError::Config(format!("no token for {role}"))))
    }

    fn remaining(&self) -> Remaining {
        let b = &self.m.cfg.budget;
        Remaining {
            tok: b.tokens.saturating_sub(self.m.spent.tokens) as f64,
            time_ms: b.time_ms.saturating_sub(self.m.spent.time_ms) as f64,
            risk: b.risk,
        }
    }

    /// Applies a charge, or refuses it when any ceiling would be crossed.
    fn charge(&mut self, backend: Option<(RoleId, Stage)>, tokens: u64, time_ms: u64, obs: &[Observation]) -> Result<(), Flow> {
        let b = self.m.cfg.budget;
        let s = *self.m.spent;
        let new_tokens = s.tokens + tokens;
        let new_time = s.time_ms + time_ms + obs.iter().map(|o| o.elapsed_ms).sum::<u64>();
        let keep = obs.iter().fold(self.st.keep, |k, o| k * (1.0 - o.risk));
        let new_risk = s.risk.max(1.0 - keep);
        if new_time > b.time_ms {
            return Err(Flow::Budget(TerminationReason::TimeBudget));
        }
        if new_tokens > b.tokens {
            return Err(Flow::Budget(TerminationReason::TokenBudget));
        }
        if new_risk > b.risk {
            return Err(Flow::Budget(TerminationReason::RiskBudget));
        }
        if let Some((role, stage)) = backend {
            self.st.ledger.accumulate(&CostEvent::Backend { role, stage, tokens });
        }
        for o in obs {
            self.st.ledger.accumulate(&CostEvent::Tool { cost: o.cost });
        }
        self.st.keep = keep;
        *self.m.spent = Spent { tokens: new_tokens, time_ms: new_time, risk: new_risk };
        Ok(())
    }

    fn render(&self, c: &Call<'_>) -> String {
        let kinds: Vec<String> = c.inputs.iter().map(|a| format!("{:?}:{}", a.kind(), a.id())).collect();
        let mut s = format!(
            "round {} stage {} role {}\nknowledge: {} entries\ninputs: {}",
            self.st.round,
            c.stage,
            c.role,
            self.st.snapshot.len(),
            kinds.join(" ")
        );
        if let Some(a) = &c.action {
            s.push_str(&format!("\naction {}: {}", a.index, a.action.command));
        }
        s
    }

    fn call(&mut self, c: Call<'_>) -> Result<BackendResponse, Flow> {
        let cfg = self.m.cfg;
        let token_cap = cfg.token_cap.min(cfg.budget.tokens.saturating_sub(self.m.spent.tokens));
        // calls are clamped to the remaining tokens, so an exhausted budget
        // is only visible here
        if token_cap == 0 && cfg.token_cap > 0 {
            return Err(Flow::Budget(TerminationReason::TokenBudget));
        }
        let req = BackendRequest {
            role: c.role,
            stage: c.stage,
            round: self.st.round,
            iteration: c.iteration,
            snapshot: self.st.snapshot.clone(),
            inputs: c.inputs.clone(),
            plan: c.plan.clone(),
            action: c.action.clone(),
            rendered: self.render(&c),
            token_cap,
            timeout_ms: cfg.call_timeout_ms,
        };
        let token = self.role_token(c.role)?.clone();
        let backend = self
            .m
            .roles
            .get_mut(c.role)
            .ok_or_else(|| Flow::Fatal(ControllerError::Config(format!("no backend for {}", c.role))))?;
        let (result, observed, crash) = if crate::env::may_execute(c.role) {
            let mut port = EnvPort { token: &token, env: &mut *self.m.env, observed: Vec::new(), crash: None };
            let r = backend.propose(&req, &mut port);
            (r, port.observed, port.crash)
        } else {
            (backend.propose(&req, &mut NoTools(c.role)), Vec::new(), None)
        };
        let (tokens, elapsed) = match &result {
            Ok(r) if r.usage.elapsed_ms > cfg.call_timeout_ms => (r.usage.tokens.min(token_cap), cfg.call_timeout_ms),
            Ok(r) => (r.usage.tokens.min(token_cap), r.usage.elapsed_ms),
            Err(BackendError::Timeout { .. }) => (0, cfg.call_timeout_ms),
            Err(_) => (0, 0),
        };
        self.charge(Some((c.role, c.stage)), tokens, elapsed, &observed)?;
        let tool = c.tool.map(str::to_owned);
        if let Some(detail) = crash {
            return Err(Flow::Fault(FaultInfo { kind: FaultKind::ToolCrash, stage: c.stage, role: c.role, tool, detail }));
        }
        match result {
            Ok(r) if r.usage.elapsed_ms > cfg.call_timeout_ms => Err(Flow::Fault(FaultInfo::from_backend(
                &BackendError::Timeout { elapsed_ms: r.usage.elapsed_ms },
                c.stage,
                c.role,
                tool,
            ))),
            Ok(r) => {
                if r.truncated {
                    tracing::warn!(role = %c.role, cap = token_cap, "backend response truncated at token cap");
                }
                Ok(r)
            }
            Err(e) => Err(Flow::Fault(FaultInfo::from_backend(&e, c.stage, c.role, tool))),
        }
    }

    fn malformed(role: RoleId, stage: Stage, detail: String) -> Flow {
        Flow::Fault(FaultInfo { kind: FaultKind::MalformedArtifact, stage, role, tool: None, detail })
    }

    /// Rejects the whole response if any payload is malformed.
    fn check_payloads(&self, role: RoleId, stage: Stage, payloads: &[ProposedArtifact]) -> Result<(), Flow> {
        let knowledge = self.st.snapshot.prov_hashes();
        for (i, p) in payloads.iter().enumerate() {
            if !p.content.is_object() {
                return Err(Self::malformed(role, stage, format!("payload {i} is not a structured object")));
            }
            let prov = Provenance { producer: role, upstream: p.upstream.clone() };
            let computed = canonical_hash(p.kind, &p.content, &prov)?;
            if p.claimed_hash != Some(computed) {
                return Err(Self::malformed(role, stage, format!("payload {i} hash mismatch")));
            }
            for u in &p.upstream {
                let ok = match u {
                    Upstream::Artifact(id) => self.st.ws.contains(*id),
                    Upstream::Knowledge(h) => knowledge.contains(h),
                };
                if !ok {
                    return Err(Self::malformed(role, stage, format!("payload {i} has dangling upstream {u:?}")));
                }
            }
        }
        Ok(())
    }

    fn add(&mut self, role: RoleId, kind: ArtifactKind, content: Value, upstream: Vec<Upstream>) -> Result<Artifact, Flow> {
        let token = self.role_token(role)?.clone();
        let a = self.st.ws.add_artifact(&token, kind, content, upstream)?;
        let partition = role.partition().expect("writers own a partition");
        self.m.log.push(LogRecord::Artifact { round: self.st.round, partition, artifact: a.clone() });
        Ok(a)
    }

    fn reject(&mut self, stage: Stage, role: RoleId, code: &str, detail: String) {
        tracing::warn!(%role, code, %detail, "backend request rejected");
        self.st.rejected.push(code.to_owned());
        self.m.log.push(LogRecord::Rejected { round: self.st.round, stage, role, code: code.to_owned(), detail });
    }

    /// Writes the checked payloads; requests for a foreign partition are
    /// refused by the workspace and dropped.
    fn commit(&mut self, role: RoleId, stage: Stage, resp: BackendResponse) -> Result<Vec<Artifact>, Flow> {
        self.check_payloads(role, stage, &resp.payloads)?;
        let mut out = Vec::with_capacity(resp.payloads.len());
        for p in resp.payloads {
            let own = role.partition().expect("writers own a partition");
            match p.partition.filter(|t| *t != own) {
                None => out.push(self.add(role, p.kind, p.content, p.upstream)?),
                Some(target) => {
                    let token = self.role_token(role)?.clone();
                    match self.st.ws.write(&token, target, p.kind, p.content, p.upstream) {
                        Err(WorkspaceError::WriteDenied(d)) => self.reject(stage, role, "WRITE_DENIED", d),
                        Err(e) => return Err(e.into()),
                        Ok(a) => unreachable!("foreign write {} accepted", a.id()),
                    }
                }
            }
        }
        self.outgoing(role, stage, resp.messages)?;
        Ok(out)
    }

    /// Backend-requested messages; illegal ones are refused and dropped.
    fn outgoing(&mut self, role: RoleId, stage: Stage, msgs: Vec<OutgoingMessage>) -> Result<(), Flow> {
        for m in msgs {
            let id = MessageId::scoped(self.st.round, self.st.messages.len() as u64);
            let msg = Message::new(id, role, m.dst, m.kind, m.refs, m.payload)?;
            match deliver(msg.clone(), stage, &self.st.ws, &mut self.st.messages) {
                Ok(()) => self.m.log.push(LogRecord::Message { round: self.st.round, message: msg }),
                Err(e) => self.reject(stage, role, e.code(), e.to_string()),
            }
        }
        Ok(())
    }

    fn parse_hypotheses(&self, stage: Stage, arts: &[Artifact]) -> Result<Vec<(Hypothesis, ArtifactId)>, Flow> {
        let visible = self.st.snapshot.ids();
        let mut out = Vec::new();
        for a in arts.iter().filter(|a| a.kind() == ArtifactKind::Hypothesis) {
            let bad = |d: String| Self::malformed(RoleId::Strategist, stage, format!("hypothesis {}: {d}", a.id()));
            let h: Hypothesis = serde_json::from_value(a.content().clone()).map_err(|e| bad(e.to_string()))?;
            h.validate().map_err(|e| bad(e.to_string()))?;
            if let Some(p) = h.nodes.iter().flat_map(|n| &n.matched_patterns).find(|p| !visible.contains(p)) {
                return Err(bad(format!("matched pattern {p} is not in the round snapshot")));
            }
            out.push((h, a.id()));
        }
        Ok(out)
    }

    fn send(&mut self, src: RoleId, dst: RoleId, kind: MessageKind, refs: Vec<ArtifactId>, payload: Value) -> Result<(), Flow> {
        let id = MessageId::scoped(self.st.round, self.st.messages.len() as u64);
        let msg = Message::new(id, src, dst, kind, refs, payload)?;
        let stage = *self.st.stages.last().expect("a stage is attested");
        deliver(msg.clone(), stage, &self.st.ws, &mut self.st.messages)?;
        self.m.log.push(LogRecord::Message { round: self.st.round, message: msg });
        Ok(())
    }

    /// S4: bounded handshake, then dispatch of the committed plan.
    fn handshake(&mut self, hyps: Vec<(Hypothesis, ArtifactId)>) -> Result<(), Flow> {
        let snapshot = self.st.snapshot.clone();
        let ctx = SelectionContext {
            weights: self.m.cfg.utility,
            snapshot: &snapshot,
            remaining: self.remaining(),
            executors: self.m.cfg.executors,
        };
        let k = self.m.cfg.k;
        let sources: BTreeMap<String, ArtifactId> = hyps.iter().map(|(h, id)| (h.id.clone(), *id)).collect();
        let initial: Vec<Hypothesis> = hyps.into_iter().map(|(h, _)| h).collect();
        let mut hs = Handshake { round: self, sources, plan_ids: Vec::new() };
        let n = match negotiate(&initial, &ctx, k, &mut hs) {
            Ok(n) => n,
            Err(NegotiationError::Strategy(e)) => {
                tracing::info!(error = %e, "no feasible plan this round");
                self.st.plan_error = Some(e.code().to_owned());
                return Ok(());
            }
            Err(NegotiationError::Aborted(flow)) => return Err(flow),
        };
        let plan_id = hs.plan_ids[n.committed];
        self.st.handshake = Some(HandshakeSummary {
            utilities: n.proposals.iter().map(|p| p.utility).collect(),
            sources: n.proposals.iter().map(|p| p.source_hypothesis.clone()).collect(),
            replies: n.replies.clone(),
            committed: n.committed,
            agreed: n.agreed,
            messages: n.messages(),
        });
        let plan = n.plan().clone();
        let executors: BTreeSet<RoleId> = plan.assignment.iter().copied().collect();
        for e in executors {
            let idx: Vec<usize> = (0..plan.actions.len()).filter(|i| plan.assignment[*i] == e).collect();
            self.send(RoleId::General, e, MessageKind::Dispatch, vec![plan_id], json!({ "actions": idx }))?;
            self.st.dispatches += 1;
        }
        self.st.plan = Some((plan_id, plan));
        Ok(())
    }

    /// S5: actions run in plan order, one backend call each.
    fn execute(&mut self) -> Result<(), Flow> {
        let Some((plan_id, plan)) = self.st.plan.clone() else { return Ok(()) };
        for (index, action) in plan.actions.iter().enumerate() {
            let exec = plan.assignment[index];
            if !self.m.env.tool_available(&action.tool) {
                if self.m.cfg.allow_install && self.m.env.can_install(&action.tool) {
                    let install = AtomicAction {
                        command: format!("install {}", action.tool),
                        tool: "install".into(),
                        expected_signals: Vec::new(),
                        timeout_ms: action.timeout_ms,
                        declared_cost: CostVector::ZERO,
                    };
                    self.run_action(exec, plan_id, &plan, ActionRequest { index, action: install, plan: plan_id })?;
                } else {
                    let content = json!({
                        "action_index": index,
                        "command": action.command,
                        "tool": action.tool,
                        "status": STATUS_SKIP,
                        "expected_signals": action.expected_signals,
                        "reason": "required capability unavailable",
                    });
                    tracing::info!(tool = %action.tool, "action skipped");
                    self.add(exec, ArtifactKind::Trace, content, vec![Upstream::Artifact(plan_id)])?;
                    continue;
                }
            }
            self.run_action(exec, plan_id, &plan, ActionRequest { index, action: action.clone(), plan: plan_id })?;
        }
        Ok(())
    }

    fn run_action(&mut self, exec: RoleId, plan_id: ArtifactId, plan: &Plan, req: ActionRequest) -> Result<(), Flow> {
        let token = self.role_token(exec)?.clone();
        let inputs = self.st.ws.read_partition(&token, PartitionId::General)?;
        let tool = req.action.tool.clone();
        let mut c = Call::new(exec, Stage::S5, inputs);
        c.plan = Some((plan_id, plan.clone()));
        c.action = Some(req);
        c.tool = Some(&tool);
        let resp = self.call(c)?;
        self.commit(exec, Stage::S5, resp)?;
        Ok(())
    }

    fn record_fault(&mut self, f: &FaultInfo) -> Result<(), ControllerError> {
        tracing::warn!(kind = f.kind.as_str(), stage = %f.stage, role = %f.role, "fault; short-circuit to S6");
        let upstream = match (&self.st.plan, f.stage) {
            (Some((id, _)), Stage::S5) => vec![Upstream::Artifact(*id)],
            _ => Vec::new(),
        };
        match self.add(RoleId::Controller, ArtifactKind::Trace, f.record(), upstream) {
            Ok(_) => {}
            Err(Flow::Fatal(e)) => return Err(e),
            Err(_) => unreachable!("controller writes raise no faults"),
        }
        self.m.log.push(LogRecord::Fault { round: self.st.round, fault: f.clone() });
        Ok(())
    }

    /// S6: seal, outcome, validation, atomic commit.
    fn close(&mut self, kb: &mut KnowledgeBase, fault: Option<&FaultInfo>) -> Result<RoundSummary, Flow> {
        self.enter(Stage::S6)?;
        let t = self.m.tokens;
        let sealed = self.st.ws.seal(&t.ctrl)?;
        let artifacts = self.st.ws.read_all(&t.validator_read)?;
        if self.m.cfg.validator_tokens > 0 {
            self.charge(Some((RoleId::Validator, Stage::S6)), self.m.cfg.validator_tokens, 0, &[])?;
        }
        let env: &dyn Environment = &*self.m.env;
        let success = fault.is_none() && artifacts.iter().any(|a| trace_succeeds(a, env));
        let outcome = if success { Outcome::Success } else { Outcome::Fail };
        let input = RoundInput {
            round: self.st.round,
            artifacts: &artifacts,
            env,
            snapshot: &self.st.snapshot,
            outcome,
            executors: self.m.cfg.executors,
            committed_plan: self.st.plan.as_ref().map(|(id, _)| *id),
        };
        let verdict = self
            .m
            .validator
            .validate(&input)
            .map_err(|e| ControllerError::Validator(e.to_string()))?;
        let round = self.st.round;
        let promoted = verdict.audit.iter().filter(|r| r.promoted).count();
        for row in &verdict.audit {
            self.m.log.push(LogRecord::Audit { round, row: row.clone() });
        }
        let receipt = kb.commit_batch(&t.validator_kb, verdict.drafts)?;
        let live: BTreeMap<_, _> = kb.live().map(|e| (e.id, e)).collect();
        let accepted = receipt
            .accepted
            .iter()
            .map(|id| live.get(id).map(|e| EntryRef::from(*e)).unwrap_or_else(|| evicted_ref(kb, *id)))
            .collect();
        let refreshed = receipt
            .refreshed
            .iter()
            .filter_map(|id| live.get(id).map(|e| Refreshed { id: *id, score: e.score }))
            .collect();
        self.m.log.push(LogRecord::KbCommit {
            round,
            batch: receipt.batch,
            accepted,
            refreshed,
            evicted: receipt.evicted.clone(),
        });
        self.m.log.push(LogRecord::Verdict { round, outcome, sealed, role_scores: verdict.role_scores, promoted });
        self.m.log.push(LogRecord::Cost { round, ledger: self.st.ledger.clone(), spent: *self.m.spent });
        kb.end_round(&self.st.snapshot)?;
        tracing::info!(?outcome, promoted, accepted = receipt.accepted.len(), "round closed");
        Ok(self.summary(Some(outcome), fault.cloned(), promoted, receipt.accepted.len(), receipt.refreshed.len(), receipt.evicted.len()))
    }

    fn end_partial(
        &mut self,
        kb: &mut KnowledgeBase,
        reason: TerminationReason,
        fault: Option<FaultInfo>,
    ) -> Result<RoundEnd, ControllerError> {
        if !self.st.ws.is_sealed() {
            self.st.ws.seal(&self.m.tokens.ctrl)?;
        }
        self.m.log.push(LogRecord::Cost { round: self.st.round, ledger: self.st.ledger.clone(), spent: *self.m.spent });
        kb.end_round(&self.st.snapshot)?;
        Ok(RoundEnd { summary: self.summary(None, fault, 0, 0, 0, 0), budget: Some(reason) })
    }

    fn summary(
        &self,
        outcome: Option<Outcome>,
        fault: Option<FaultInfo>,
        promoted: usize,
        accepted: usize,
        refreshed: usize,
        evicted: usize,
    ) -> RoundSummary {
        RoundSummary {
            round: self.st.round,
            outcome,
            stages: self.st.stages.clone(),
            fault,
            plan: self.st.plan.as_ref().map(|(_, p)| p.source_hypothesis.clone()),
            plan_error: self.st.plan_error.clone(),
            rejected: self.st.rejected.clone(),
            handshake: self.st.handshake.clone(),
            messages: self.st.messages.len(),
            dispatches: self.st.dispatches,
            promoted,
            accepted,
            refreshed,
            evicted,
            ledger: self.st.ledger.clone(),
        }
    }
}

/// An entry accepted and evicted within the same batch.
fn evicted_ref(kb: &KnowledgeBase, id: crate::model::EntryId) -> EntryRef {
    kb.tombstoned().find(|e| e.id == id).map(EntryRef::from).expect("accepted entry is live or tombstoned")
}

/// The general's side of the handshake, bound to the running round.
struct Handshake<'h, 'r, 'a> {
    round: &'h mut Round<'r, 'a>,
    /// Hypothesis id to its latest artifact.
    sources: BTreeMap<String, ArtifactId>,
    plan_ids: Vec<ArtifactId>,
}

impl Counterpart for Handshake<'_, '_, '_> {
    type Error = Flow;

    fn propose(&mut self, iteration: u32, plan: &Plan) -> Result<(), Flow> {
        let r = &mut *self.round;
        let inputs = r.st.ws.read_partition(&r.m.tokens.general, PartitionId::Strategist)?;
        let mut c = Call::new(RoleId::General, Stage::S4, inputs);
        c.iteration = iteration;
        let resp = r.call(c)?;
        // the engine materializes the plan; backend payloads are only checked
        r.check_payloads(RoleId::General, Stage::S4, &resp.payloads)?;
        r.outgoing(RoleId::General, Stage::S4, resp.messages)?;
        let mut content = serde_json::to_value(plan).map_err(|e| ControllerError::Config(e.to_string()))?;
        content["iteration"] = json!(iteration);
        let upstream = self.sources.get(&plan.source_hypothesis).map(|id| vec![Upstream::Artifact(*id)]).unwrap_or_default();
        let a = r.add(RoleId::General, ArtifactKind::Plan, content, upstream)?;
        self.plan_ids.push(a.id());
        r.send(
            RoleId::General,
            RoleId::Strategist,
            MessageKind::Propose,
            vec![a.id()],
            json!({ "iteration": iteration, "source_hypothesis": plan.source_hypothesis, "utility": plan.utility }),
        )
    }

    fn respond(&mut self, iteration: u32, plan: &Plan) -> Result<Reply, Flow> {
        let r = &mut *self.round;
        let plan_id = *self.plan_ids.last().expect("proposal precedes reply");
        let t = r.m.tokens;
        let mut inputs = r.st.ws.read_partition(&t.strategist, PartitionId::Detective)?;
        inputs.extend(r.st.ws.read_partition(&t.strategist, PartitionId::General)?);
        let mut c = Call::new(RoleId::Strategist, Stage::S4, inputs);
        c.iteration = iteration;
        c.plan = Some((plan_id, plan.clone()));
        let resp = r.call(c)?;
        let agree = resp.agree;
        let arts = r.commit(RoleId::Strategist, Stage::S4, resp)?;
        let hyps = r.parse_hypotheses(Stage::S4, &arts)?;
        if agree {
            r.send(RoleId::Strategist, RoleId::General, MessageKind::Agree, vec![plan_id], json!({ "iteration": iteration }))?;
            return Ok(Reply::Agree);
        }
        let refs = hyps.iter().map(|(_, id)| *id).collect();
        for (h, id) in &hyps {
            self.sources.insert(h.id.clone(), *id);
        }
        r.send(RoleId::Strategist, RoleId::General, MessageKind::Revise, refs, json!({ "iteration": iteration }))?;
        Ok(Reply::Revise(hyps.into_iter().map(|(h, _)| h).collect()))
    }
}
