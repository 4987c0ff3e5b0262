//! Role backend interface and a completion-client adapter.
//!
//! A backend proposes artifact payloads for one role call. Tool access goes
//! through a [`ToolPort`] that the controller binds to the role's token, so a
//! backend can never reach the environment on behalf of a role that has no
//! environment access.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::ContentHash;
use crate::env::{EnvError, Observation};
use crate::knowledge::Snapshot;
use crate::model::{
    canonical_hash, Artifact, ArtifactId, ArtifactKind, MessageKind, PartitionId, Provenance, RoleId, Stage, Upstream,
};
use crate::strategy::{AtomicAction, Plan};

/// The action an executor is asked to perform.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ActionRequest {
    pub index: usize,
    pub action: AtomicAction,
    pub plan: ArtifactId,
}

#[derive(Clone, Debug)]
pub struct BackendRequest {
    pub role: RoleId,
    pub stage: Stage,
    pub round: u64,
    /// Handshake iteration during S4, else 0.
    pub iteration: u32,
    pub snapshot: Snapshot,
    /// Partition contents this role may read at this stage.
    pub inputs: Vec<Artifact>,
    /// Plan under negotiation (S4) or being executed (S5).
    pub plan: Option<(ArtifactId, Plan)>,
    pub action: Option<ActionRequest>,
    /// Rendered context text; opaque to the engine.
    pub rendered: String,
    pub token_cap: u64,
    pub timeout_ms: u64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ProposedArtifact {
    pub kind: ArtifactKind,
    pub content: Value,
    pub upstream: Vec<Upstream>,
    /// Hash the backend computed over (kind, content, prov).
    pub claimed_hash: Option<ContentHash>,
    /// Requested partition; the producer's own when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionId>,
}

impl ProposedArtifact {
    /// Payload with its claimed hash filled in for `producer`.
    pub fn sealed(producer: RoleId, kind: ArtifactKind, content: Value, upstream: Vec<Upstream>) -> Self {
        let prov = Provenance { producer, upstream };
        let claimed_hash = canonical_hash(kind, &content, &prov).ok();
        ProposedArtifact { kind, content, upstream: prov.upstream, claimed_hash, partition: None }
    }
}

/// A message a backend asks the controller to deliver on its behalf.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct OutgoingMessage {
    pub dst: RoleId,
    pub kind: MessageKind,
    #[serde(default)]
    pub refs: Vec<ArtifactId>,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct Usage {
    pub tokens: u64,
    pub elapsed_ms: u64,
}

#[derive(Clone, PartialEq, Debug, Default)]
pub struct BackendResponse {
    pub payloads: Vec<ProposedArtifact>,
    pub usage: Usage,
    /// Strategist agreement during the S4 handshake.
    pub agree: bool,
    pub truncated: bool,
    /// Delivered after the payloads are committed.
    pub messages: Vec<OutgoingMessage>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend exceeded its deadline after {elapsed_ms} ms")]
    Timeout { elapsed_ms: u64 },
    #[error("tool crashed: {0}")]
    ToolCrash(String),
    #[error("malformed backend output: {0}")]
    Malformed(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Environment access bound to one role's token.
pub trait ToolPort {
    fn run_command(&mut self, command: &str) -> Result<Observation, EnvError>;
}

/// Port for roles without environment access.
pub struct NoTools(pub RoleId);

impl ToolPort for NoTools {
    fn run_command(&mut self, _command: &str) -> Result<Observation, EnvError> {
        Err(EnvError::CommandDenied(self.0))
    }
}

pub trait RoleBackend {
    fn name(&self) -> &str;

    fn propose(&mut self, req: &BackendRequest, tools: &mut dyn ToolPort) -> Result<BackendResponse, BackendError>;

    /// Backend description echoed into reports.
    fn serialize(&self) -> Value;
}

/// Evidence payload for one observation.
pub fn evidence_payload(obs: &Observation) -> Value {
    obs.to_payload()
}

/// Trace payload for an executed action.
pub fn trace_payload(req: &ActionRequest, obs: &Observation, tokens: u64) -> Value {
    let mut v = obs.to_payload();
    let m = v.as_object_mut().expect("observation payload is an object");
    m.insert("action_index".into(), json!(req.index));
    m.insert("tool".into(), json!(req.action.tool));
    m.insert("status".into(), json!("OK"));
    m.insert("expected_signals".into(), json!(req.action.expected_signals));
    m.insert("tokens".into(), json!(tokens));
    v
}

/// Raw model completion.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub tokens: u64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("completion deadline exceeded")]
    Deadline,
    #[error("transport: {0}")]
    Transport(String),
}

/// Prompt-to-completion transport. Implementations own networking.
pub trait CompletionClient {
    fn complete(&mut self, prompt: &str, token_cap: u64, timeout_ms: u64) -> Result<Completion, ClientError>;
}

/// Replays canned completions in order; the last one repeats.
#[derive(Clone, Debug, Default)]
pub struct StubClient {
    queue: VecDeque<Result<Completion, ClientError>>,
    last: Option<Result<Completion, ClientError>>,
    pub prompts: Vec<String>,
}

impl StubClient {
    pub fn new(responses: impl IntoIterator<Item = Result<Completion, ClientError>>) -> Self {
        StubClient { queue: responses.into_iter().collect(), last: None, prompts: Vec::new() }
    }

    pub fn text(text: impl Into<String>, tokens: u64, elapsed_ms: u64) -> Result<Completion, ClientError> {
        Ok(Completion { text: text.into(), tokens, elapsed_ms })
    }
}

impl CompletionClient for StubClient {
    fn complete(&mut self, prompt: &str, _token_cap: u64, _timeout_ms: u64) -> Result<Completion, ClientError> {
        self.prompts.push(prompt.to_owned());
        if let Some(next) = self.queue.pop_front() {
            self.last = Some(next.clone());
            next
        } else {
            self.last.clone().unwrap_or(Err(ClientError::Transport("no canned completion".into())))
        }
    }
}

#[derive(Deserialize)]
struct Reply {
    #[serde(default)]
    tool_requests: Vec<String>,
    #[serde(default)]
    artifacts: Vec<ReplyArtifact>,
    #[serde(default)]
    agree: bool,
    #[serde(default)]
    messages: Vec<OutgoingMessage>,
}

#[derive(Deserialize)]
struct ReplyArtifact {
    kind: ArtifactKind,
    content: Value,
    #[serde(default)]
    upstream: Option<Vec<Upstream>>,
}

/// Backend that renders a prompt, asks a [`CompletionClient`], and parses
/// a JSON reply of the form
/// `{"tool_requests": [..], "artifacts": [{"kind", "content"}], "agree": bool}`.
pub struct LlmBackend<C> {
    role: RoleId,
    name: String,
    template: String,
    client: C,
}

impl<C: CompletionClient> LlmBackend<C> {
    pub fn new(role: RoleId, name: impl Into<String>, template: impl Into<String>, client: C) -> Self {
        LlmBackend { role, name: name.into(), template: template.into(), client }
    }

    pub fn client(&self) -> &C {
        &self.client
    }

    fn render(&self, req: &BackendRequest) -> String {
        format!(
            "{}\n[role {} stage {} round {}]\n{}",
            self.template, req.role, req.stage, req.round, req.rendered
        )
    }
}

impl<C: CompletionClient> RoleBackend for LlmBackend<C> {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(&mut self, req: &BackendRequest, tools: &mut dyn ToolPort) -> Result<BackendResponse, BackendError> {
        let prompt = self.render(req);
        let c = match self.client.complete(&prompt, req.token_cap, req.timeout_ms) {
            Ok(c) => c,
            Err(ClientError::Deadline) => return Err(BackendError::Timeout { elapsed_ms: req.timeout_ms }),
            Err(ClientError::Transport(e)) => return Err(BackendError::Malformed(e)),
        };
        if c.elapsed_ms > req.timeout_ms {
            return Err(BackendError::Timeout { elapsed_ms: c.elapsed_ms });
        }
        let reply: Reply = serde_json::from_str(&c.text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let default_up: Vec<Upstream> = req.inputs.iter().map(|a| Upstream::Artifact(a.id())).collect();
        let mut payloads = Vec::new();
        for cmd in &reply.tool_requests {
            let obs = tools.run_command(cmd).map_err(|e| match e {
                EnvError::ToolCrash { .. } => BackendError::ToolCrash(e.to_string()),
                other => BackendError::Env(other),
            })?;
            let (kind, content, up) = match &req.action {
                Some(a) => (ArtifactKind::Trace, trace_payload(a, &obs, c.tokens), vec![Upstream::Artifact(a.plan)]),
                None => (ArtifactKind::Evidence, evidence_payload(&obs), vec![]),
            };
            payloads.push(ProposedArtifact::sealed(self.role, kind, content, up));
        }
        for a in reply.artifacts {
            let up = a.upstream.unwrap_or_else(|| default_up.clone());
            payloads.push(ProposedArtifact::sealed(self.role, a.kind, a.content, up));
        }
        let truncated = c.tokens > req.token_cap;
        Ok(BackendResponse {
            payloads,
            usage: Usage { tokens: c.tokens.min(req.token_cap), elapsed_ms: c.elapsed_ms },
            agree: reply.agree,
            truncated,
            messages: reply.messages,
        })
    }

    fn serialize(&self) -> Value {
        json!({ "backend": "llm", "name": self.name, "role": self.role })
    }
}
