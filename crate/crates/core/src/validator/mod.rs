//! Artifact scoring, promotion gating, lifting into knowledge entries and
//! per-role performance scores.
//!
//! `s(a) = a1·rep + a2·con + a3·util`; an artifact is promoted iff
//! `s ≥ τ_prom`.

pub mod embed;
mod lift;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::abstraction::pattern_of;
use crate::canonical::{ContentHash, SerializationError};
use crate::env::{output_hash, Environment};
use crate::knowledge::Snapshot;
use crate::model::{Artifact, ArtifactId, ArtifactKind, EntryDraft, Outcome, RoleId, Upstream};

pub use lift::{lift, lift_round, EMA_FACTOR};

/// Tolerance of the simplex check on [`ScoreWeights`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Trace `status` values.
pub const STATUS_OK: &str = "OK";
pub const STATUS_SKIP: &str = "SKIP";
/// `record` value of controller fault records.
pub const FAULT_RECORD: &str = "FAULT";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidatorError {
    #[error("score weights ({0}, {1}, {2}) do not form a simplex")]
    WeightsNotSimplex(f64, f64, f64),
    #[error("artifact {artifact} scored {score} below τ_prom {tau}; refusing to lift")]
    BelowThreshold { artifact: ArtifactId, score: f64, tau: f64 },
    #[error(transparent)]
    Serialization(#[from] SerializationError),
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { a1: 0.4, a2: 0.3, a3: 0.3 }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<(), ValidatorError> {
        let ws = [self.a1, self.a2, self.a3];
        let ok = ws.iter().all(|w| w.is_finite() && *w >= 0.0) && (ws.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE;
        if ok {
            Ok(())
        } else {
            Err(ValidatorError::WeightsNotSimplex(self.a1, self.a2, self.a3))
        }
    }

    /// The weighted sum, unchecked.
    pub fn combine(&self, rep: f64, con: f64, util: f64) -> f64 {
        self.a1 * rep + self.a2 * con + self.a3 * util
    }
}

pub fn score(w: &ScoreWeights, rep: f64, con: f64, util: f64) -> Result<f64, ValidatorError> {
    w.validate()?;
    Ok(w.combine(rep, con, util))
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str)
}

pub fn is_fault_record(a: &Artifact) -> bool {
    a.producer() == RoleId::Controller && str_field(a.content(), "record") == Some(FAULT_RECORD)
}

pub fn trace_status(a: &Artifact) -> Option<&str> {
    (a.kind() == ArtifactKind::Trace && a.producer().is_executor()).then(|| str_field(a.content(), "status")).flatten()
}

/// Executed trace whose output satisfies the environment's success predicate.
pub fn trace_succeeds(a: &Artifact, env: &dyn Environment) -> bool {
    if trace_status(a) != Some(STATUS_OK) {
        return false;
    }
    let c = a.content();
    match (str_field(c, "command"), str_field(c, "stdout")) {
        (Some(cmd), Some(out)) => env.is_success(cmd, out),
        _ => false,
    }
}

/// SKIP traces, failed exits and traces missing all their expected signals.
pub fn is_deviating(a: &Artifact) -> bool {
    match trace_status(a) {
        Some(STATUS_SKIP) => true,
        Some(_) => {
            let c = a.content();
            if c.get("exit").and_then(Value::as_i64).is_some_and(|e| e != 0) {
                return true;
            }
            let out = str_field(c, "stdout").unwrap_or("");
            let signals: Vec<&str> = c
                .get("expected_signals")
                .and_then(Value::as_array)
                .map(|xs| xs.iter().filter_map(Value::as_str).collect())
                .unwrap_or_default();
            !signals.is_empty() && !signals.iter().any(|s| out.contains(s))
        }
        None => false,
    }
}

/// Replay check for artifacts carrying a producing command; `None` when
/// the artifact has none.
fn replay_rep(a: &Artifact, env: &dyn Environment) -> Option<f64> {
    let c = a.content();
    let command = str_field(c, "command")?;
    let recorded: ContentHash = serde_json::from_value(c.get("output_hash")?.clone()).ok()?;
    let fields = (str_field(c, "stdout"), str_field(c, "stderr"), c.get("exit").and_then(Value::as_i64));
    let consistent = match fields {
        (Some(out), Some(err), Some(exit)) => {
            i32::try_from(exit).ok().and_then(|e| output_hash(out, err, e).ok()) == Some(recorded)
        }
        _ => false,
    };
    let replayed = match env.replay(command) {
        Ok(obs) => obs.output_hash == recorded,
        Err(e) => {
            tracing::warn!(artifact = %a.id(), error = %e, "replay unavailable; rep = 0");
            false
        }
    };
    Some(if consistent && replayed { 1.0 } else { 0.0 })
}

/// Rep for every artifact; commit order guarantees upstreams come first.
/// Knowledge upstreams were validated when promoted and count as 1.
pub fn rep_all(artifacts: &[Artifact], env: &dyn Environment) -> BTreeMap<ArtifactId, f64> {
    let mut rep = BTreeMap::new();
    for a in artifacts {
        let r = replay_rep(a, env).unwrap_or_else(|| {
            let all = a.prov().upstream.iter().all(|u| match u {
                Upstream::Artifact(id) => rep.get(id).copied() == Some(1.0),
                Upstream::Knowledge(_) => true,
            });
            if all {
                1.0
            } else {
                0.0
            }
        });
        rep.insert(a.id(), r);
    }
    rep
}

/// Max cosine to any stored pattern, mapped to [0,1]; 0.5 with no patterns.
pub fn con(a: &Artifact, snapshot: &Snapshot) -> Result<f64, ValidatorError> {
    let mine = embed::embed(&pattern_of(a.content())?.template);
    let mut best: Option<(f64, crate::model::EntryId)> = None;
    for p in snapshot.all_patterns() {
        let Some(t) = p.payload.get("template") else { continue };
        let c = embed::cosine(&mine, &embed::embed(t));
        if best.is_none_or(|(b, _)| c > b) {
            best = Some((c, p.id));
        }
    }
    Ok(match best {
        Some((c, id)) => {
            snapshot.mark_read(id);
            ((c + 1.0) / 2.0).clamp(0.0, 1.0)
        }
        None => 0.5,
    })
}

/// Traces (and fault records) that carried the round's outcome.
pub fn contributing(artifacts: &[Artifact], outcome: Outcome, env: &dyn Environment) -> BTreeSet<ArtifactId> {
    artifacts
        .iter()
        .filter(|a| match outcome {
            Outcome::Success => trace_succeeds(a, env),
            Outcome::Fail => is_deviating(a) || is_fault_record(a),
        })
        .map(Artifact::id)
        .collect()
}

/// 1 for reflexive ancestors of any contributing artifact, else 0.
pub fn util_all(artifacts: &[Artifact], contributing: &BTreeSet<ArtifactId>) -> BTreeMap<ArtifactId, f64> {
    let parents: BTreeMap<ArtifactId, Vec<ArtifactId>> =
        artifacts.iter().map(|a| (a.id(), a.prov().upstream_artifacts().collect())).collect();
    let mut on_path = BTreeSet::new();
    let mut stack: Vec<ArtifactId> = contributing.iter().copied().collect();
    while let Some(id) = stack.pop() {
        if on_path.insert(id) {
            stack.extend(parents.get(&id).into_iter().flatten().copied());
        }
    }
    artifacts.iter().map(|a| (a.id(), if on_path.contains(&a.id()) { 1.0 } else { 0.0 })).collect()
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct AuditRow {
    pub artifact: ArtifactId,
    pub kind: ArtifactKind,
    pub producer: RoleId,
    pub rep: f64,
    pub con: f64,
    pub util: f64,
    pub s: f64,
    pub promoted: bool,
}

/// Neutral score for a role that produced nothing.
pub const EMPTY_ROLE_SCORE: f64 = 50.0;
pub const OUTCOME_BONUS: f64 = 10.0;

pub fn role_score(w: &ScoreWeights, rows: &[&AuditRow], outcome: Outcome) -> f64 {
    if rows.is_empty() {
        return EMPTY_ROLE_SCORE;
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&AuditRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let base = 100.0 * w.combine(mean(|r| r.rep), mean(|r| r.con), mean(|r| r.util));
    let adj = match outcome {
        Outcome::Success => OUTCOME_BONUS,
        Outcome::Fail => -OUTCOME_BONUS,
    };
    (base + adj).clamp(0.0, 100.0)
}

/// Scores for the detective, strategist, general and every executor.
pub fn score_roles(
    audit: &[AuditRow],
    w: &ScoreWeights,
    outcome: Outcome,
    executors: u32,
) -> BTreeMap<RoleId, f64> {
    let mut roles = vec![RoleId::Detective, RoleId::Strategist, RoleId::General];
    roles.extend((0..executors).map(RoleId::Executor));
    roles
        .into_iter()
        .map(|role| {
            let rows: Vec<&AuditRow> = audit.iter().filter(|r| r.producer == role).collect();
            (role, role_score(w, &rows, outcome))
        })
        .collect()
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RoundVerdict {
    pub round: u64,
    pub outcome: Outcome,
    pub audit: Vec<AuditRow>,
    pub role_scores: BTreeMap<RoleId, f64>,
    pub drafts: Vec<EntryDraft>,
}

pub struct RoundInput<'a> {
    pub round: u64,
    /// Every artifact of the sealed workspace, in commit order.
    pub artifacts: &'a [Artifact],
    pub env: &'a dyn Environment,
    pub snapshot: &'a Snapshot,
    pub outcome: Outcome,
    pub executors: u32,
    pub committed_plan: Option<ArtifactId>,
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Validator {
    pub weights: ScoreWeights,
    pub tau_prom: f64,
}

impl Validator {
    pub fn new(weights: ScoreWeights, tau_prom: f64) -> Result<Self, ValidatorError> {
        weights.validate()?;
        Ok(Validator { weights, tau_prom })
    }

    pub fn promotes(&self, s: f64) -> bool {
        s >= self.tau_prom
    }

    /// Scores every artifact and produces the round's candidate batch.
    pub fn validate(&self, input: &RoundInput<'_>) -> Result<RoundVerdict, ValidatorError> {
        let reps = rep_all(input.artifacts, input.env);
        let utils = util_all(input.artifacts, &contributing(input.artifacts, input.outcome, input.env));
        let mut audit = Vec::with_capacity(input.artifacts.len());
        for a in input.artifacts {
            let (rep, util) = (reps[&a.id()], utils[&a.id()]);
            let con = con(a, input.snapshot)?;
            let s = score(&self.weights, rep, con, util)?;
            audit.push(AuditRow {
                artifact: a.id(),
                kind: a.kind(),
                producer: a.producer(),
                rep,
                con,
                util,
                s,
                promoted: self.promotes(s),
            });
        }
        let role_scores = score_roles(&audit, &self.weights, input.outcome, input.executors);
        let drafts = lift_round(self, input, &audit, &role_scores)?;
        Ok(RoundVerdict { round: input.round, outcome: input.outcome, audit, role_scores, drafts })
    }
}


#[cfg(test)]
mod tests {
    use super::testenv::TableEnv;
    use super::*;
    use crate::env::Environment;
    use crate::knowledge::{KbConfig, KnowledgeBase};
    use crate::model::{EntryKey, Provenance};
    use crate::workspace::{Grant, MissionId, TokenIssuer};
    use serde_json::json;

    fn art(seq: u64, kind: ArtifactKind, producer: RoleId, content: Value, up: &[u64]) -> Artifact {
        let upstream = up.iter().map(|u| Upstream::Artifact(ArtifactId::scoped(1, *u))).collect();
        Artifact::new(ArtifactId::scoped(1, seq), kind, content, Provenance { producer, upstream }).unwrap()
    }

    fn evidence(env: &mut TableEnv, seq: u64, command: &str) -> Artifact {
        let obs = env.execute(command).unwrap();
        art(seq, ArtifactKind::Evidence, RoleId::Detective, obs.to_payload(), &[])
    }

    #[test]
    fn score_examples() {
        let third = ScoreWeights { a1: 1.0 / 3.0, a2: 1.0 / 3.0, a3: 1.0 / 3.0 };
        assert!((score(&third, 1.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let w = ScoreWeights { a1: 0.5, a2: 0.3, a3: 0.2 };
        assert!((score(&w, 1.0, 0.8, 0.5).unwrap() - 0.84).abs() < 1e-12);
        let low = score(&w, 0.0, 0.5, 0.0).unwrap();
        assert!((low - 0.15).abs() < 1e-12);
        assert!(!Validator::new(w, 0.6).unwrap().promotes(low));
        assert!(matches!(
            score(&ScoreWeights { a1: 0.5, a2: 0.5, a3: 0.5 }, 1.0, 1.0, 1.0),
            Err(ValidatorError::WeightsNotSimplex(..))
        ));
    }

    #[test]
    fn rep_replay_and_upstream_conjunction() {
        let mut env = TableEnv::default();
        env.table.insert("strings target".into(), "hello".into());
        env.table.insert("file target".into(), "ELF".into());
        let good = evidence(&mut env, 0, "strings target");
        let flaky = evidence(&mut env, 1, "file target");
        env.drift.push("file target".into());
        let h = art(2, ArtifactKind::Hypothesis, RoleId::Strategist, json!({}), &[0, 1]);
        let lone = art(3, ArtifactKind::Hypothesis, RoleId::Strategist, json!({}), &[]);
        let h_good = art(4, ArtifactKind::Hypothesis, RoleId::Strategist, json!({}), &[0]);
        let rep = rep_all(&[good.clone(), flaky.clone(), h.clone(), lone.clone(), h_good.clone()], &env);
        assert_eq!(rep[&good.id()], 1.0);
        assert_eq!(rep[&flaky.id()], 0.0);
        assert_eq!(rep[&h.id()], 0.0);
        assert_eq!(rep[&lone.id()], 1.0);
        assert_eq!(rep[&h_good.id()], 1.0);
    }

    #[test]
    fn rep_rejects_forged_stdout() {
        let mut env = TableEnv::default();
        env.table.insert("cat flag".into(), "nope".into());
        let mut payload = env.execute("cat flag").unwrap().to_payload();
        payload["stdout"] = json!("FLAG{forged}");
        let a = art(0, ArtifactKind::Trace, RoleId::Executor(0), payload, &[]);
        assert_eq!(rep_all(&[a.clone()], &env)[&a.id()], 0.0);
    }

    #[test]
    fn con_defaults_and_extremes() {
        let a = art(0, ArtifactKind::Evidence, RoleId::Detective, json!({"s": "alpha beta"}), &[]);
        assert_eq!(con(&a, &Snapshot::empty()).unwrap(), 0.5);

        let mut kb = KnowledgeBase::in_memory(KbConfig::default());
        let t = TokenIssuer::new(MissionId(0)).issue(RoleId::Validator, Grant::ValidatorWriteKb);
        let p = pattern_of(a.content()).unwrap();
        kb.commit_batch(
            &t,
            vec![EntryDraft {
                key: EntryKey::Pattern(p.key),
                payload: json!({"template": p.template}),
                score: 0.9,
                prov_hash: a.hash(),
            }],
        )
        .unwrap();
        let snap = kb.snapshot();
        assert!((con(&a, &snap).unwrap() - 1.0).abs() < 1e-12);
        // pick a token that lands in a different bucket from both pattern tokens
        let taken = [embed::bucket("alpha"), embed::bucket("beta")];
        let other = (0..).map(|i| format!("tok{i}")).find(|t| !taken.contains(&embed::bucket(t))).unwrap();
        let b = art(1, ArtifactKind::Evidence, RoleId::Detective, json!({"s": other}), &[]);
        assert_eq!(con(&b, &snap).unwrap(), 0.5);
    }

    #[test]
    fn util_on_chains_and_diamonds() {
        let e1 = art(0, ArtifactKind::Evidence, RoleId::Detective, json!({}), &[]);
        let e2 = art(1, ArtifactKind::Evidence, RoleId::Detective, json!({}), &[]);
        let lone = art(2, ArtifactKind::Evidence, RoleId::Detective, json!({}), &[]);
        let h = art(3, ArtifactKind::Hypothesis, RoleId::Strategist, json!({}), &[0, 1]);
        let p = art(4, ArtifactKind::Plan, RoleId::General, json!({}), &[3]);
        let t = art(5, ArtifactKind::Trace, RoleId::Executor(0), json!({}), &[4]);
        let all = [e1, e2, lone, h, p, t.clone()];
        let u = util_all(&all, &BTreeSet::from([t.id()]));
        let ones: Vec<_> = all.iter().filter(|a| u[&a.id()] == 1.0).map(|a| a.id().0 as u64).collect();
        assert_eq!(ones, vec![0, 1, 3, 4, 5]);
    }

    #[test]
    fn role_scores() {
        let w = ScoreWeights { a1: 0.5, a2: 0.3, a3: 0.2 };
        let row = |rep, con, util| AuditRow {
            artifact: ArtifactId(0),
            kind: ArtifactKind::Evidence,
            producer: RoleId::Detective,
            rep,
            con,
            util,
            s: 0.0,
            promoted: false,
        };
        let r = row(1.0, 0.8, 0.5);
        assert!((role_score(&w, &[&r], Outcome::Fail) - 74.0).abs() < 1e-9);
        let perfect = row(1.0, 1.0, 1.0);
        assert_eq!(role_score(&w, &[&perfect], Outcome::Success), 100.0);
        assert_eq!(role_score(&w, &[], Outcome::Success), 50.0);
        let scores = score_roles(&[r], &w, Outcome::Fail, 2);
        assert_eq!(scores.len(), 5);
        assert_eq!(scores[&RoleId::Executor(1)], 50.0);
    }

    #[test]
    fn deviation_rules() {
        let t = |content: Value| art(0, ArtifactKind::Trace, RoleId::Executor(0), content, &[]);
        assert!(is_deviating(&t(json!({"status": "SKIP"}))));
        assert!(is_deviating(&t(json!({"status": "OK", "exit": 1, "stdout": ""}))));
        assert!(is_deviating(&t(json!({"status": "OK", "exit": 0, "stdout": "x", "expected_signals": ["FLAG"]}))));
        assert!(!is_deviating(&t(json!({"status": "OK", "exit": 0, "stdout": "FLAG{a}", "expected_signals": ["FLAG"]}))));
        assert!(!is_deviating(&t(json!({"status": "OK", "exit": 0, "stdout": "x"}))));
    }
}
