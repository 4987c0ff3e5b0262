//! Typed lifting of promoted artifacts into knowledge-entry drafts.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::abstraction::pattern_of;
use crate::knowledge::Snapshot;
use crate::model::{Artifact, ArtifactKind, CostVector, EntryDraft, EntryKey, Outcome, RoleId};
use crate::strategy::{CapabilityProfile, FeedbackSummary};

pub use crate::strategy::EMA_FACTOR;

use super::{is_fault_record, trace_status, AuditRow, RoundInput, Validator, ValidatorError, STATUS_SKIP};

type ProfileCache = BTreeMap<(RoleId, String), CapabilityProfile>;

fn num(v: &Value, key: &str) -> f64 {
    v.get(key).and_then(Value::as_f64).unwrap_or(0.0)
}

fn prior_profile(cache: &ProfileCache, snapshot: &Snapshot, role: RoleId, tool: &str) -> Option<CapabilityProfile> {
    if let Some(p) = cache.get(&(role, tool.to_owned())) {
        return Some(p.clone());
    }
    snapshot
        .capability(role, tool)
        .into_iter()
        .max_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)))
        .and_then(|e| serde_json::from_value(e.payload).ok())
}

fn ema(prev: &CostVector, obs: &CostVector) -> CostVector {
    let mix = |p: f64, o: f64| EMA_FACTOR * o + (1.0 - EMA_FACTOR) * p;
    CostVector { tok: mix(prev.tok, obs.tok), time_ms: mix(prev.time_ms, obs.time_ms), risk: mix(prev.risk, obs.risk) }
}

fn capability(a: &Artifact, snapshot: &Snapshot, cache: &mut ProfileCache) -> CapabilityProfile {
    let c = a.content();
    let role = a.producer();
    let tool = c.get("tool").and_then(Value::as_str).unwrap_or("unknown").to_owned();
    let prev = prior_profile(cache, snapshot, role, &tool);
    let profile = if trace_status(a) == Some(STATUS_SKIP) {
        let mut p = prev.unwrap_or(CapabilityProfile {
            role,
            tool: tool.clone(),
            available: false,
            observations: 0,
            successes: 0,
            ema: CostVector::ZERO,
        });
        p.available = false;
        p
    } else {
        let obs = CostVector::new(num(c, "tokens"), num(c, "elapsed_ms"), num(c, "risk"));
        let ok = c.get("exit").and_then(Value::as_i64) == Some(0);
        match prev {
            Some(p) if p.observations > 0 => CapabilityProfile {
                role,
                tool: tool.clone(),
                available: true,
                observations: p.observations + 1,
                successes: p.successes + u64::from(ok),
                ema: ema(&p.ema, &obs),
            },
            _ => CapabilityProfile {
                role,
                tool: tool.clone(),
                available: true,
                observations: 1,
                successes: u64::from(ok),
                ema: obs,
            },
        }
    };
    cache.insert((role, tool), profile.clone());
    profile
}

/// Lifts one promoted artifact. Plans yield nothing here; they reach the
/// store only through the general's feedback.
pub fn lift(
    v: &Validator,
    a: &Artifact,
    s: f64,
    input: &RoundInput<'_>,
    role_scores: &BTreeMap<RoleId, f64>,
    cache: &mut BTreeMap<(RoleId, String), CapabilityProfile>,
) -> Result<Option<EntryDraft>, ValidatorError> {
    if !v.promotes(s) {
        return Err(ValidatorError::BelowThreshold { artifact: a.id(), score: s, tau: v.tau_prom });
    }
    let draft = |key, payload| EntryDraft { key, payload, score: s, prov_hash: a.hash() };
    Ok(match a.kind() {
        ArtifactKind::Evidence | ArtifactKind::Hypothesis if a.producer() != RoleId::Controller => {
            let p = pattern_of(a.content())?;
            Some(draft(
                EntryKey::Pattern(p.key),
                json!({ "template": p.template, "source_kind": a.kind(), "round": input.round }),
            ))
        }
        ArtifactKind::Trace if a.producer().is_executor() => {
            let profile = capability(a, input.snapshot, cache);
            let key = EntryKey::Capability { role: profile.role, tool: profile.tool.clone() };
            Some(draft(key, serde_json::to_value(profile).expect("profile encodes")))
        }
        _ if is_fault_record(a) => {
            let c = a.content();
            let Some(role) = c.get("role").and_then(Value::as_str).and_then(|r| r.parse::<RoleId>().ok()) else {
                return Ok(None);
            };
            let fb = FeedbackSummary {
                role,
                round: input.round,
                outcome: Outcome::Fail,
                role_score: role_scores.get(&role).copied().unwrap_or(0.0),
                signature: None,
                fault: c.get("fault").and_then(Value::as_str).map(str::to_owned),
                tool: c.get("tool").and_then(Value::as_str).map(str::to_owned),
            };
            Some(draft(EntryKey::Feedback(role), serde_json::to_value(fb).expect("feedback encodes")))
        }
        _ => None,
    })
}

/// Entry drafts for a round: lifted artifacts, then one feedback entry per
/// role that had something promoted.
pub fn lift_round(
    v: &Validator,
    input: &RoundInput<'_>,
    audit: &[AuditRow],
    role_scores: &BTreeMap<RoleId, f64>,
) -> Result<Vec<EntryDraft>, ValidatorError> {
    let by_id: BTreeMap<_, _> = input.artifacts.iter().map(|a| (a.id(), a)).collect();
    let mut cache = BTreeMap::new();
    let mut out = Vec::new();
    for row in audit.iter().filter(|r| r.promoted) {
        if let Some(d) = lift(v, by_id[&row.artifact], row.s, input, role_scores, &mut cache)? {
            out.push(d);
        }
    }
    for (&role, &role_score) in role_scores {
        let mut rows = audit.iter().filter(|r| r.promoted && r.producer == role);
        let chosen = if role == RoleId::General {
            let committed = input.committed_plan;
            audit
                .iter()
                .find(|r| r.promoted && Some(r.artifact) == committed)
                .or_else(|| best(rows))
        } else {
            best(&mut rows)
        };
        let Some(row) = chosen else { continue };
        let a = by_id[&row.artifact];
        let signature = (role == RoleId::General)
            .then(|| a.content().get("signature").and_then(|s| serde_json::from_value(s.clone()).ok()))
            .flatten();
        let fb = FeedbackSummary { role, round: input.round, outcome: input.outcome, role_score, signature, fault: None, tool: None };
        out.push(EntryDraft {
            key: EntryKey::Feedback(role),
            payload: serde_json::to_value(fb).expect("feedback encodes"),
            score: row.s,
            prov_hash: a.hash(),
        });
    }
    Ok(out)
}

/// Highest score; the earliest artifact on ties.
fn best<'a>(rows: impl Iterator<Item = &'a AuditRow>) -> Option<&'a AuditRow> {
    rows.fold(None, |acc: Option<&AuditRow>, r| match acc {
        Some(b) if b.s >= r.s => Some(b),
        _ => Some(r),
    })
}
