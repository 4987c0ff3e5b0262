//! Scripted role backends with fault injection.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::abstraction::pattern_of;
use crate::adapter::{
    evidence_payload, trace_payload, BackendError, BackendRequest, BackendResponse, OutgoingMessage, ProposedArtifact,
    RoleBackend, ToolPort, Usage,
};
use crate::canonical::ContentHash;
use crate::controller::FaultKind;
use crate::env::EnvError;
use crate::model::{ArtifactId, ArtifactKind, MessageKind, PartitionId, RoleId, Stage, Upstream};
use crate::strategy::Hypothesis;

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundScript {
    /// Detective observation commands.
    pub commands: Vec<String>,
    /// Strategist hypotheses offered in S3.
    pub hypotheses: Vec<Hypothesis>,
    /// Strategist reply to handshake iteration `i` is `revisions[i-1]`;
    /// it agrees once the list runs out.
    pub revisions: Vec<Vec<Hypothesis>>,
    /// Agree from this handshake iteration on, regardless of revisions.
    pub agree_after: Option<u32>,
    /// Commands a role issues through its tool port on every call.
    pub tool_requests: Vec<String>,
    /// Protocol violations to attempt.
    pub probes: Vec<Probe>,
}

/// A request the controller is expected to refuse.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "attempt", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Probe {
    /// One artifact of the role's usual kind, aimed at another partition.
    Write {
        partition: PartitionId,
        #[serde(default)]
        stage: Option<Stage>,
    },
    /// A message referencing the call's inputs, or an uncommitted id when
    /// `dangling`.
    Message {
        dst: RoleId,
        kind: MessageKind,
        #[serde(default)]
        dangling: bool,
        #[serde(default)]
        stage: Option<Stage>,
    },
}

impl Probe {
    fn stage(&self) -> Option<Stage> {
        match self {
            Probe::Write { stage, .. } | Probe::Message { stage, .. } => *stage,
        }
    }
}

/// Offer `hypothesis` when its own pattern is already in the store.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecallRule {
    pub hypothesis: Hypothesis,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleScript {
    /// Declared usage per call.
    pub tokens: u64,
    pub elapsed_ms: u64,
    /// Indexed by round; the last script repeats.
    pub rounds: Vec<RoundScript>,
    pub recall: Vec<RecallRule>,
}

impl RoleScript {
    fn round(&self, round: u64) -> Option<&RoundScript> {
        let i = (round.max(1) - 1) as usize;
        self.rounds.get(i).or(self.rounds.last())
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    pub round: u64,
    pub stage: Stage,
    pub kind: FaultKind,
    /// Defaults to the stage's acting role; in S4 the general.
    #[serde(default)]
    pub role: Option<RoleId>,
    /// S5 action index.
    #[serde(default)]
    pub action: Option<usize>,
    #[serde(default)]
    pub tool: Option<String>,
}

impl FaultInjection {
    fn default_role(&self) -> Option<RoleId> {
        match self.stage {
            Stage::S2 => Some(RoleId::Detective),
            Stage::S3 => Some(RoleId::Strategist),
            Stage::S4 => Some(RoleId::General),
            _ => None,
        }
    }

    fn matches(&self, req: &BackendRequest) -> bool {
        let role_ok = match self.role.or(self.default_role()) {
            Some(r) => r == req.role,
            None => req.role.is_executor(),
        };
        let first_call = req.stage != Stage::S4 || req.iteration <= 1;
        let action_ok = match (self.action, &req.action) {
            (Some(i), Some(a)) => a.index == i,
            (Some(_), None) => false,
            (None, _) => true,
        };
        self.round == req.round && self.stage == req.stage && role_ok && first_call && action_ok
    }
}

pub struct ScriptedBackend {
    role: RoleId,
    script: RoleScript,
    faults: Vec<FaultInjection>,
}

fn tool_error(e: EnvError) -> BackendError {
    match e {
        EnvError::ToolCrash { .. } => BackendError::ToolCrash(e.to_string()),
        other => BackendError::Env(other),
    }
}

impl ScriptedBackend {
    /// `role` names the kind of role; any executor index serves all instances.
    pub fn new(role: RoleId, script: RoleScript, faults: Vec<FaultInjection>) -> Self {
        ScriptedBackend { role, script, faults }
    }

    fn usage(&self) -> Usage {
        Usage { tokens: self.script.tokens, elapsed_ms: self.script.elapsed_ms }
    }

    fn inject(&self, req: &BackendRequest) -> Option<Result<BackendResponse, BackendError>> {
        let f = self.faults.iter().find(|f| f.matches(req))?;
        tracing::debug!(kind = f.kind.as_str(), role = %req.role, "injecting fault");
        Some(match f.kind {
            FaultKind::BackendTimeout => Err(BackendError::Timeout { elapsed_ms: req.timeout_ms + 1 }),
            FaultKind::ToolCrash => {
                let tool = f.tool.clone().or_else(|| req.action.as_ref().map(|a| a.action.tool.clone()));
                Err(BackendError::ToolCrash(format!("injected crash in {}", tool.as_deref().unwrap_or("tool"))))
            }
            FaultKind::MalformedArtifact => {
                let kind = req.role.canonical_output().unwrap_or(ArtifactKind::Evidence);
                let payload = ProposedArtifact {
                    kind,
                    content: json!({ "garbled": true }),
                    upstream: Vec::new(),
                    claimed_hash: Some(ContentHash::digest(b"not the content")),
                    partition: None,
                };
                Ok(BackendResponse { payloads: vec![payload], usage: self.usage(), ..Default::default() })
            }
        })
    }

    fn upstream_inputs(req: &BackendRequest) -> Vec<Upstream> {
        req.inputs
            .iter()
            .filter(|a| a.kind() == ArtifactKind::Evidence)
            .map(|a| Upstream::Artifact(a.id()))
            .collect()
    }

    fn hypothesis_payload(&self, req: &BackendRequest, h: &Hypothesis, extra: Vec<Upstream>) -> ProposedArtifact {
        let mut up = Self::upstream_inputs(req);
        up.extend(extra);
        let content = serde_json::to_value(h).expect("hypotheses encode");
        ProposedArtifact::sealed(req.role, ArtifactKind::Hypothesis, content, up)
    }

    /// Recall rules whose pattern the snapshot already holds.
    fn recalled(&self, req: &BackendRequest) -> Vec<ProposedArtifact> {
        let mut out = Vec::new();
        for rule in &self.script.recall {
            let Ok(p) = pattern_of(&serde_json::to_value(&rule.hypothesis).expect("hypotheses encode")) else {
                continue;
            };
            let hits = req.snapshot.patterns(p.key);
            if hits.is_empty() {
                continue;
            }
            let mut h = rule.hypothesis.clone();
            if let Some(n) = h.nodes.first_mut() {
                n.matched_patterns = hits.iter().map(|e| e.id).collect();
            }
            let refs = hits.iter().map(|e| Upstream::Knowledge(e.prov_hash)).collect();
            out.push(self.hypothesis_payload(req, &h, refs));
        }
        out
    }

    fn respond(&self, req: &BackendRequest, tools: &mut dyn ToolPort) -> Result<BackendResponse, BackendError> {
        let script = self.script.round(req.round).cloned().unwrap_or_default();
        let mut resp = BackendResponse { usage: self.usage(), ..Default::default() };
        for cmd in &script.tool_requests {
            tools.run_command(cmd).map_err(tool_error)?;
        }
        match (req.role, req.stage) {
            (RoleId::Detective, _) => {
                for cmd in &script.commands {
                    let obs = tools.run_command(cmd).map_err(tool_error)?;
                    resp.payloads.push(ProposedArtifact::sealed(req.role, ArtifactKind::Evidence, evidence_payload(&obs), vec![]));
                }
            }
            (RoleId::Strategist, Stage::S3) => {
                resp.payloads = self.recalled(req);
                for h in &script.hypotheses {
                    resp.payloads.push(self.hypothesis_payload(req, h, vec![]));
                }
            }
            (RoleId::Strategist, _) => {
                let it = req.iteration;
                let revision = script.revisions.get(it.saturating_sub(1) as usize);
                if script.agree_after.is_some_and(|n| it >= n) || revision.is_none() {
                    resp.agree = true;
                } else if let Some(hs) = revision {
                    for h in hs {
                        resp.payloads.push(self.hypothesis_payload(req, h, vec![]));
                    }
                }
            }
            (RoleId::Executor(_), _) => {
                let Some(a) = &req.action else {
                    return Err(BackendError::Malformed("executor called without an action".into()));
                };
                let obs = tools.run_command(&a.action.command).map_err(tool_error)?;
                let content = trace_payload(a, &obs, self.script.tokens);
                resp.payloads.push(ProposedArtifact::sealed(req.role, ArtifactKind::Trace, content, vec![Upstream::Artifact(a.plan)]));
            }
            _ => {}
        }
        for p in script.probes.iter().filter(|p| p.stage().is_none_or(|s| s == req.stage)) {
            self.probe(req, p, &mut resp);
        }
        Ok(resp)
    }

    fn probe(&self, req: &BackendRequest, p: &Probe, resp: &mut BackendResponse) {
        match p {
            Probe::Write { partition, .. } => {
                let kind = req.role.canonical_output().unwrap_or(ArtifactKind::Evidence);
                let mut a = ProposedArtifact::sealed(req.role, kind, json!({ "probe": "foreign write" }), vec![]);
                a.partition = Some(*partition);
                resp.payloads.push(a);
            }
            Probe::Message { dst, kind, dangling, .. } => {
                let refs = if *dangling {
                    vec![ArtifactId::scoped(req.round, u64::from(u32::MAX))]
                } else {
                    req.inputs.iter().map(|a| a.id()).collect()
                };
                resp.messages.push(OutgoingMessage { dst: *dst, kind: *kind, refs, payload: json!({ "probe": true }) });
            }
        }
    }
}

impl RoleBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn propose(&mut self, req: &BackendRequest, tools: &mut dyn ToolPort) -> Result<BackendResponse, BackendError> {
        if let Some(r) = self.inject(req) {
            return r;
        }
        self.respond(req, tools)
    }

    fn serialize(&self) -> Value {
        json!({ "backend": "scripted", "role": self.role, "rounds": self.script.rounds.len(), "faults": self.faults.len() })
    }
}
