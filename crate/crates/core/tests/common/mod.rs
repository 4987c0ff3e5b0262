//! Independent oracles and the per-criterion checks shared by the
//! acceptance runner and the integration tests.
#![allow(dead_code)]

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use warroom::adapter::{BackendError, BackendRequest, BackendResponse, RoleBackend, ToolPort};
use warroom::canonical::ContentHash;
use warroom::controller::{
    run_mission, to_jsonl, FaultKind, LogRecord, MissionLog, MissionReport, RoleSet, TerminationReason,
};
use warroom::env::{EnvError, Environment, Observation};
use warroom::knowledge::{KbConfig, KnowledgeBase, Snapshot};
use warroom::model::{
    ArtifactKind, CostVector, EntryDraft, EntryId, EntryKey, EntryKind, MessageKind, Outcome, PartitionId, Remaining,
    RoleId, Stage, Upstream,
};
use warroom::replay::{replay_file, replay_records};
use warroom::sim::{learning_experiment, run_suite, FaultInjection, ReplayMode, Scenario, SuiteEntry, BUNDLED};
use warroom::strategy::{
    negotiate, select_plan, CapabilityProfile, Counterpart, FeedbackSummary, Hypothesis, HypothesisNode, Plan, Reply,
    SelectionContext, StrategyError, UtilityWeights,
};
use warroom::validator::ScoreWeights;
use warroom::workspace::{Grant, MissionId, TokenIssuer, Workspace, WorkspaceError};

/// `Ok(detail)` on pass, `Err(reason)` on fail.
pub type Verdict = Result<String, String>;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn bundled(name: &str) -> Vec<Scenario> {
    let (_, src) = BUNDLED.iter().find(|(n, _)| *n == name).unwrap_or_else(|| panic!("no bundled scenario {name}"));
    Scenario::parse_family(src, name).expect("bundled scenarios parse")
}

pub fn run_family(missions: &[Scenario]) -> Result<Vec<(MissionReport, Vec<LogRecord>)>, String> {
    let mut kb = KnowledgeBase::in_memory(missions[0].config.kb);
    missions
        .iter()
        .map(|m| m.run(Some(&mut kb)).map(|r| (r.report, r.log)).map_err(|e| format!("{}: {e}", m.name)))
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// stage walk

const ORDER: [Stage; 6] = [Stage::S1, Stage::S2, Stage::S3, Stage::S4, Stage::S5, Stage::S6];

/// Per round: the stages entered, and whether a FAULT record preceded S6.
pub fn stage_walk(log: &[LogRecord]) -> BTreeMap<u64, (Vec<Stage>, bool)> {
    let mut rounds: BTreeMap<u64, (Vec<Stage>, bool)> = BTreeMap::new();
    for r in log {
        match r {
            LogRecord::Stage { round, stage, .. } => rounds.entry(*round).or_default().0.push(*stage),
            LogRecord::Fault { round, .. } => {
                let e = rounds.entry(*round).or_default();
                if e.0.last() != Some(&Stage::S6) {
                    e.1 = true;
                }
            }
            _ => {}
        }
    }
    rounds
}

/// A round conforms when its stages are S1..Sj, optionally followed by S6
/// after a fault, and a budget stop may cut the sequence short anywhere.
pub fn round_conforms(stages: &[Stage], faulted: bool) -> bool {
    let prefix = stages.iter().zip(ORDER).take_while(|(a, b)| **a == *b).count();
    if prefix == stages.len() {
        return true;
    }
    faulted && prefix + 1 == stages.len() && stages[prefix] == Stage::S6 && prefix >= 2
}

pub fn check_stage_conformance(log: &[LogRecord]) -> Result<(), String> {
    let walk = stage_walk(log);
    let ids: Vec<u64> = walk.keys().copied().collect();
    ensure(ids.iter().copied().eq(1..=ids.len() as u64), || format!("round ids {ids:?} not consecutive"))?;
    for (round, (stages, faulted)) in &walk {
        ensure(round_conforms(stages, *faulted), || format!("round {round}: stages {stages:?} faulted={faulted}"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 1. stage conformance

pub fn criterion_stage_conformance() -> Verdict {
    let start = Instant::now();
    let report = run_suite(&SuiteEntry::bundled(), 4);
    let elapsed = start.elapsed();
    ensure(report.rows.len() >= 12, || format!("only {} suite scenarios", report.rows.len()))?;
    for row in &report.rows {
        for check in ["expect", "stages"] {
            if let Some(Some(why)) = row.checks.get(check) {
                return Err(format!("{}: {check}: {why}", row.name));
            }
        }
        for log in &row.logs {
            check_stage_conformance(log).map_err(|e| format!("{}: {e}", row.name))?;
        }
    }
    ensure(elapsed.as_secs_f64() < 10.0, || format!("suite took {elapsed:?}"))?;
    Ok(format!("{} scenarios conform in {} ms", report.rows.len(), elapsed.as_millis()))
}

// ---------------------------------------------------------------------------
// 2. gating

fn simplex(rng: &mut ChaCha8Rng) -> ScoreWeights {
    let a1 = rng.random_range(0.1..0.8);
    let a2 = rng.random_range(0.0..(1.0 - a1));
    ScoreWeights { a1, a2, a3: 1.0 - a1 - a2 }
}

/// Scenario with randomized threshold, scoring weights, capacity and replay
/// mode.
pub fn randomize(missions: &mut [Scenario], rng: &mut ChaCha8Rng) {
    let tau = rng.random_range(0.3..0.95);
    let scoring = simplex(rng);
    let capacity = rng.random_range(2..64);
    let seed = rng.random();
    let perturb = rng.random_bool(0.3);
    for m in missions {
        m.config.kb.tau_prom = tau;
        m.config.kb.capacity = capacity;
        m.config.scoring = scoring;
        m.config.seed = seed;
        if perturb {
            m.env.replay = ReplayMode::Perturbed { seed, commands: Vec::new() };
        }
    }
}

fn matched_patterns(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                if k == "matched_patterns" {
                    out.extend(x.as_array().into_iter().flatten().filter_map(|i| i.as_str().map(str::to_owned)));
                } else {
                    matched_patterns(x, out);
                }
            }
        }
        Value::Array(a) => a.iter().for_each(|x| matched_patterns(x, out)),
        _ => {}
    }
}

/// Independent gating audit of one log: every committed entry traces to a
/// promoted artifact with `s ≥ τ`, and nothing reads knowledge or artifacts
/// that were not promoted into the store.
pub fn gating_audit(log: &[LogRecord]) -> Result<(), String> {
    let Some(LogRecord::Header { config, kb_initial, .. }) = log.first() else {
        return Err("missing header".into());
    };
    let tau = config.kb.tau_prom;
    let mut trusted: BTreeSet<ContentHash> = kb_initial.iter().map(|e| e.prov_hash).collect();
    let mut trusted_ids: BTreeSet<String> = kb_initial.iter().map(|e| e.id.to_string()).collect();
    let mut round_artifacts: BTreeMap<ContentHash, (u64, warroom::model::ArtifactId)> = BTreeMap::new();
    let mut audits: BTreeMap<warroom::model::ArtifactId, (f64, bool)> = BTreeMap::new();
    for (i, r) in log.iter().enumerate() {
        match r {
            LogRecord::Artifact { round, artifact, .. } => {
                for up in &artifact.prov().upstream {
                    match up {
                        Upstream::Knowledge(h) => {
                            ensure(trusted.contains(h), || format!("record {i}: reads unpromoted knowledge {h}"))?
                        }
                        Upstream::Artifact(a) => {
                            ensure(a.round() == *round, || format!("record {i}: reads artifact {a} from an earlier round"))?
                        }
                    }
                }
                let mut ids = Vec::new();
                matched_patterns(artifact.content(), &mut ids);
                for id in ids {
                    ensure(trusted_ids.contains(&id), || format!("record {i}: matches unpromoted entry {id}"))?;
                }
                round_artifacts.insert(artifact.hash(), (*round, artifact.id()));
            }
            LogRecord::Audit { row, .. } => {
                audits.insert(row.artifact, (row.s, row.promoted));
            }
            LogRecord::KbCommit { round, accepted, .. } => {
                for e in accepted {
                    ensure(e.score >= tau, || format!("record {i}: entry {} score {} < {tau}", e.id, e.score))?;
                    let (r, art) = round_artifacts
                        .get(&e.prov_hash)
                        .ok_or_else(|| format!("record {i}: entry {} has no source artifact", e.id))?;
                    ensure(r == round, || format!("record {i}: entry {} sourced from round {r}", e.id))?;
                    let (s, promoted) =
                        audits.get(art).ok_or_else(|| format!("record {i}: source {art} was never audited"))?;
                    ensure(*promoted && *s >= tau, || format!("record {i}: source {art} s={s} promoted={promoted}"))?;
                    trusted.insert(e.prov_hash);
                    trusted_ids.insert(e.id.to_string());
                }
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn gating_rounds(min_rounds: u64, seed: u64) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rounds, mut missions_run, mut commits) = (0u64, 0usize, 0usize);
    while rounds < min_rounds {
        let (name, _) = BUNDLED[rng.random_range(0..BUNDLED.len())];
        let mut missions = bundled(name);
        randomize(&mut missions, &mut rng);
        let tau = missions[0].config.kb.tau_prom;
        let mut kb = KnowledgeBase::in_memory(missions[0].config.kb);
        for m in &missions {
            let run = m.run(Some(&mut kb)).map_err(|e| format!("{}: {e}", m.name))?;
            rounds += run.report.rounds;
            missions_run += 1;
            let replay = replay_records(&run.log);
            if let Some(f) = replay.check("gating").and_then(|c| c.failure.as_ref()) {
                return Err(format!("{}: replay gating at {}: {}", m.name, f.index, f.reason));
            }
            gating_audit(&run.log).map_err(|e| format!("{} (τ={tau:.3}): {e}", m.name))?;
            commits += run.report.round_summaries.iter().map(|s| s.accepted).sum::<usize>();
            if let Some(e) = kb.live().find(|e| e.score < tau) {
                return Err(format!("{}: live entry {} below τ", m.name, e.id));
            }
        }
    }
    Ok(format!("{rounds} rounds over {missions_run} missions, {commits} commits, 0 violations"))
}

// ---------------------------------------------------------------------------
// 3. eviction

/// Reference store: a flat list, evicting by full sort.
#[derive(Clone, Debug)]
struct RefEntry {
    id: u64,
    kind: EntryKind,
    prov: u64,
    score: f64,
    created: u64,
    read: u64,
}

fn ref_evict(live: &mut Vec<RefEntry>, clock: u64, lambda: f64, capacity: usize) -> Vec<u64> {
    let mut out = Vec::new();
    while live.len() > capacity {
        let mut ranked: Vec<(f64, u64, u64, usize)> = live
            .iter()
            .enumerate()
            .map(|(i, e)| (e.score * (-lambda * (clock - e.read) as f64).exp(), e.created, e.id, i))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        out.push(live.remove(ranked[0].3).id);
    }
    out
}

fn validator_token() -> warroom::workspace::CapabilityToken {
    TokenIssuer::new(MissionId(0)).issue(RoleId::Validator, Grant::ValidatorWriteKb)
}

fn draft(kind: EntryKind, prov: u64, score: f64) -> EntryDraft {
    let key = match kind {
        EntryKind::Pattern => EntryKey::Pattern(ContentHash::digest(&(prov % 5).to_be_bytes())),
        EntryKind::Capability => EntryKey::Capability { role: RoleId::Executor(0), tool: format!("t{}", prov % 3) },
        EntryKind::Feedback => EntryKey::Feedback(RoleId::General),
    };
    EntryDraft { key, payload: json!({ "p": prov }), score, prov_hash: ContentHash::digest(&prov.to_be_bytes()) }
}

/// One random store history checked step by step against the reference.
pub fn eviction_case(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let n_max = rng.random_range(1..=50usize);
    let cfg = KbConfig {
        capacity: rng.random_range(1..=12),
        lambda: [0.0, 0.05, 0.3, 1.0][rng.random_range(0..4)],
        tau_prom: 0.5,
    };
    let mut kb = KnowledgeBase::in_memory(cfg);
    let token = validator_token();
    let mut model: Vec<RefEntry> = Vec::new();
    let (mut inserted, mut next_id, mut next_prov, mut evictions) = (0usize, 1u64, 0u64, 0usize);
    let kinds = [EntryKind::Pattern, EntryKind::Capability, EntryKind::Feedback];
    while inserted < n_max {
        let clock = kb.begin_round();
        let snap = kb.snapshot();
        for e in &model {
            if rng.random_bool(0.3) {
                snap.mark_read(EntryId(e.id as u128));
            }
        }
        let mut batch = Vec::new();
        let mut planned = Vec::new();
        for _ in 0..rng.random_range(0..=4usize).min(n_max - inserted) {
            let kind = kinds[rng.random_range(0..3)];
            // a repeated provenance refreshes instead of inserting
            let prov = match model.iter().filter(|e| e.kind == kind).nth(0) {
                Some(e) if rng.random_bool(0.2) => e.prov,
                _ => {
                    next_prov += 1;
                    next_prov
                }
            };
            let score = (rng.random_range(50..=100) as f64) / 100.0;
            batch.push(draft(kind, prov, score));
            planned.push((kind, prov, score));
        }
        let receipt = kb.commit_batch(&token, batch).map_err(|e| e.to_string())?;
        let mut want_accepted = Vec::new();
        for (kind, prov, score) in planned {
            if let Some(e) = model.iter_mut().find(|e| e.prov == prov && e.kind == kind) {
                e.score = e.score.max(score);
                e.read = clock;
            } else {
                model.push(RefEntry { id: next_id, kind, prov, score, created: clock, read: clock });
                want_accepted.push(next_id);
                next_id += 1;
                inserted += 1;
            }
        }
        let want_evicted = ref_evict(&mut model, clock, cfg.lambda, cfg.capacity);
        evictions += want_evicted.len();
        let got_acc: Vec<u64> = receipt.accepted.iter().map(|i| i.0 as u64).collect();
        let got_ev: Vec<u64> = receipt.evicted.iter().map(|i| i.0 as u64).collect();
        ensure(got_acc == want_accepted, || format!("clock {clock}: accepted {got_acc:?} != {want_accepted:?}"))?;
        ensure(got_ev == want_evicted, || format!("clock {clock}: evicted {got_ev:?} != {want_evicted:?}"))?;
        kb.end_round(&snap).map_err(|e| e.to_string())?;
        for e in model.iter_mut() {
            if snap.reads().contains(&EntryId(e.id as u128)) && e.read < clock {
                e.read = clock;
            }
        }
        let live: BTreeSet<u64> = kb.live().map(|e| e.id.0 as u64).collect();
        let want: BTreeSet<u64> = model.iter().map(|e| e.id).collect();
        ensure(live == want, || format!("clock {clock}: live {live:?} != {want:?}"))?;
        ensure(kb.len() <= cfg.capacity, || format!("{} live over capacity {}", kb.len(), cfg.capacity))?;
    }
    Ok(evictions)
}

pub fn criterion_eviction(stores: usize, seed: u64) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evictions = 0;
    for i in 0..stores {
        evictions += eviction_case(&mut rng).map_err(|e| format!("store {i}: {e}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed.as_secs_f64() < 1.0, || format!("{stores} stores took {elapsed:?}"))?;
    Ok(format!("{stores} stores, {evictions} evictions match the reference in {} ms", elapsed.as_millis()))
}

// ---------------------------------------------------------------------------
// 4. plan selection

const OPS: [&str; 5] = ["gdb", "strings", "ltrace", "radare2", "python"];

pub struct SelectionCase {
    pub hypotheses: Vec<Hypothesis>,
    pub weights: UtilityWeights,
    pub remaining: Remaining,
    /// Successes and trials of the general's feedback per operator sequence.
    pub history: BTreeMap<Vec<String>, (u64, u64)>,
    /// Latest available cost profile per tool.
    pub profiles: BTreeMap<String, CostVector>,
    pub kb: KnowledgeBase,
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn random_node(rng: &mut ChaCha8Rng, step: u32) -> HypothesisNode {
    let op = pick(rng, &OPS);
    HypothesisNode {
        step_index: step,
        operator: op.into(),
        command: format!("{op} ./target"),
        expected_signals: Vec::new(),
        resource_cost: CostVector::new(
            pick(rng, &[0.0, 10.0, 20.0, 40.0]),
            pick(rng, &[0.0, 100.0, 500.0, 1000.0]),
            pick(rng, &[0.0, 0.1, 0.2]),
        ),
        prior_confidence: 0.5,
        matched_patterns: Vec::new(),
        depends_on: if step > 0 && rng.random_bool(0.5) { vec![step - 1] } else { Vec::new() },
        timeout_ms: 1000,
    }
}

pub fn random_hypotheses(rng: &mut ChaCha8Rng, max: usize) -> Vec<Hypothesis> {
    let n = rng.random_range(0..=max);
    let mut ids: Vec<u32> = (0..40).collect();
    (0..n)
        .map(|_| {
            let id = ids.remove(rng.random_range(0..ids.len()));
            let len = rng.random_range(1..=3u32);
            Hypothesis { id: format!("h{id:02}"), nodes: (0..len).map(|s| random_node(rng, s)).collect() }
        })
        .collect()
}

fn ops_of(h: &Hypothesis) -> Vec<String> {
    let mut nodes: Vec<&HypothesisNode> = h.nodes.iter().collect();
    nodes.sort_by_key(|n| n.step_index);
    nodes.iter().map(|n| n.operator.clone()).collect()
}

pub fn selection_case(rng: &mut ChaCha8Rng, max: usize) -> SelectionCase {
    let hypotheses = random_hypotheses(rng, max);
    let mut kb = KnowledgeBase::in_memory(KbConfig::default());
    let mut drafts = Vec::new();
    let mut history = BTreeMap::new();
    let mut prov = 0u64;
    let mut next_prov = || {
        prov += 1;
        ContentHash::digest(&prov.to_be_bytes())
    };
    for h in &hypotheses {
        let ops = ops_of(h);
        if history.contains_key(&ops) || !rng.random_bool(0.4) {
            continue;
        }
        let trials = rng.random_range(1..=4u64);
        let wins = rng.random_range(0..=trials);
        for t in 0..trials {
            let fb = FeedbackSummary {
                role: RoleId::General,
                round: t,
                outcome: if t < wins { Outcome::Success } else { Outcome::Fail },
                role_score: 70.0,
                signature: Some(h.signature()),
                fault: None,
                tool: None,
            };
            let payload = serde_json::to_value(fb).expect("feedback encodes");
            drafts.push(EntryDraft { key: EntryKey::Feedback(RoleId::General), payload, score: 0.9, prov_hash: next_prov() });
        }
        history.insert(ops, (wins, trials));
    }
    let mut profiles = BTreeMap::new();
    for op in OPS {
        for _ in 0..rng.random_range(0..=2) {
            let available = rng.random_bool(0.7);
            let ema = CostVector::new(pick(rng, &[5.0, 15.0]), pick(rng, &[50.0, 700.0]), pick(rng, &[0.0, 0.05]));
            let p = CapabilityProfile {
                role: RoleId::Executor(rng.random_range(0..2)),
                tool: op.into(),
                available,
                observations: 1,
                successes: 1,
                ema,
            };
            drafts.push(EntryDraft {
                key: EntryKey::Capability { role: p.role, tool: op.into() },
                payload: serde_json::to_value(&p).expect("profile encodes"),
                score: 0.9,
                prov_hash: next_prov(),
            });
            if available {
                profiles.insert(op.to_string(), ema);
            }
        }
    }
    kb.begin_round();
    kb.commit_batch(&validator_token(), drafts).expect("generated drafts commit");
    let weights = UtilityWeights {
        w1: pick(rng, &[0.0, 0.5, 1.0]),
        w2: pick(rng, &[0.0, 0.25, 1.0]),
        w3: pick(rng, &[0.0, 0.25, 1.0]),
        w4: pick(rng, &[0.0, 0.5]),
    };
    let remaining = Remaining {
        tok: pick(rng, &[30.0, 60.0, 200.0]),
        time_ms: pick(rng, &[400.0, 1500.0, 4000.0]),
        risk: pick(rng, &[0.15, 0.3, 0.9]),
    };
    SelectionCase { hypotheses, weights, remaining, history, profiles, kb }
}

/// Reference evaluation: (utility, p̂, actions, feasible).
fn oracle_eval(case: &SelectionCase, h: &Hypothesis) -> (f64, f64, usize, bool) {
    let ops = ops_of(h);
    let (wins, trials) = case.history.get(&ops).copied().unwrap_or((0, 0));
    let p = (wins as f64 + 1.0) / (trials as f64 + 2.0);
    let mut nodes: Vec<&HypothesisNode> = h.nodes.iter().collect();
    nodes.sort_by_key(|n| n.step_index);
    let (mut tok, mut time, mut safe) = (0.0, 0.0, 1.0);
    for n in nodes {
        let c = case.profiles.get(&n.operator).copied().unwrap_or(n.resource_cost);
        tok += c.tok;
        time += c.time_ms;
        safe *= 1.0 - c.risk;
    }
    let risk = 1.0 - safe;
    let r = case.remaining;
    let w = case.weights;
    let u = w.w1 * p - w.w2 * (tok / r.tok) - w.w3 * (time / r.time_ms) - w.w4 * (risk / r.risk);
    (u, p, h.nodes.len(), tok <= r.tok && time <= r.time_ms && risk <= r.risk)
}

/// Exhaustive argmax: scan everything, keep whatever beats the incumbent.
pub fn oracle_select(case: &SelectionCase) -> Option<(String, f64)> {
    let mut best: Option<(&Hypothesis, (f64, f64, usize, bool))> = None;
    for h in &case.hypotheses {
        let e = oracle_eval(case, h);
        if !e.3 {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bh, be)) => {
                e.0 > be.0
                    || (e.0 == be.0 && e.1 > be.1)
                    || (e.0 == be.0 && e.1 == be.1 && e.2 < be.2)
                    || (e.0 == be.0 && e.1 == be.1 && e.2 == be.2 && h.id < bh.id)
            }
        };
        if better {
            best = Some((h, e));
        }
    }
    best.map(|(h, e)| (h.id.clone(), e.0))
}

pub fn selection_agrees(case: &SelectionCase, executors: u32) -> Result<bool, String> {
    let snap = case.kb.snapshot();
    let ctx = SelectionContext { weights: case.weights, snapshot: &snap, remaining: case.remaining, executors };
    let got = select_plan(&case.hypotheses, &ctx);
    let want = oracle_select(case);
    match (got, want) {
        (Ok(plan), Some((id, u))) => {
            ensure(plan.source_hypothesis == id && plan.utility == u, || {
                format!("chose {} (u={}) but the oracle chose {id} (u={u})", plan.source_hypothesis, plan.utility)
            })?;
            ensure(plan.assignment.len() == plan.actions.len(), || "assignment length".into())?;
            Ok(true)
        }
        (Err(StrategyError::NoCandidates), None) if case.hypotheses.is_empty() => Ok(false),
        (Err(StrategyError::Infeasible(n)), None) if n == case.hypotheses.len() => Ok(false),
        (got, want) => Err(format!("select_plan {got:?} vs oracle {want:?}")),
    }
}

pub fn criterion_select_plan(sets: usize, seed: u64) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = 0;
    let mut ties = 0;
    for i in 0..sets {
        let case = selection_case(&mut rng, 20);
        let evals: Vec<f64> =
            case.hypotheses.iter().map(|h| oracle_eval(&case, h)).filter(|e| e.3).map(|e| e.0).collect();
        if evals.iter().filter(|u| Some(**u) == evals.iter().copied().reduce(f64::max)).count() > 1 {
            ties += 1;
        }
        if selection_agrees(&case, 2).map_err(|e| format!("set {i}: {e}"))? {
            chosen += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed.as_secs_f64() < 5.0, || format!("{sets} sets took {elapsed:?}"))?;
    Ok(format!(
        "{sets} sets ({chosen} with a plan, {ties} with utility ties) match enumeration in {} ms",
        elapsed.as_millis()
    ))
}

// ---------------------------------------------------------------------------
// 5. handshake

pub struct ScriptedCounterpart {
    pub replies: Vec<Reply>,
    pub seen: usize,
}

impl Counterpart for ScriptedCounterpart {
    type Error = ();
    fn respond(&mut self, _iteration: u32, _plan: &Plan) -> Result<Reply, ()> {
        let r = self.replies.get(self.seen).cloned().unwrap_or(Reply::Agree);
        self.seen += 1;
        Ok(r)
    }
}

fn plan_better(a: &Plan, b: &Plan) -> bool {
    a.utility > b.utility
        || (a.utility == b.utility && a.p_hat > b.p_hat)
        || (a.utility == b.utility && a.p_hat == b.p_hat && a.actions.len() < b.actions.len())
        || (a.utility == b.utility
            && a.p_hat == b.p_hat
            && a.actions.len() == b.actions.len()
            && a.source_hypothesis < b.source_hypothesis)
}

pub fn handshake_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let case = selection_case(rng, 6);
    if case.hypotheses.is_empty() {
        return Ok(());
    }
    let k = rng.random_range(1..=6u32);
    let replies: Vec<Reply> = (0..k + 1)
        .map(|_| if rng.random_bool(0.25) { Reply::Agree } else { Reply::Revise(random_hypotheses(rng, 5)) })
        .collect();
    let snap = case.kb.snapshot();
    let ctx = SelectionContext { weights: case.weights, snapshot: &snap, remaining: case.remaining, executors: 1 };
    let mut cp = ScriptedCounterpart { replies, seen: 0 };
    let Ok(n) = negotiate(&case.hypotheses, &ctx, k, &mut cp) else { return Ok(()) };
    ensure(n.messages() <= 2 * k as usize + 1, || format!("{} messages for k={k}", n.messages()))?;
    ensure(n.proposals.len() <= k as usize, || format!("{} proposals for k={k}", n.proposals.len()))?;
    let best = n.proposals.iter().fold(&n.proposals[0], |b, p| if plan_better(p, b) { p } else { b });
    ensure(n.plan() == best, || {
        format!("committed {} but {} was the best proposal", n.plan().source_hypothesis, best.source_hypothesis)
    })
}

/// Log-level: S4 handshake messages per round and the dispatched plan.
pub fn handshake_log_audit(log: &[LogRecord]) -> Result<usize, String> {
    let Some(LogRecord::Header { config, .. }) = log.first() else { return Err("missing header".into()) };
    let bound = 2 * config.k as usize + 1;
    let mut per_round: BTreeMap<u64, usize> = BTreeMap::new();
    let mut utilities: BTreeMap<u64, Vec<(warroom::model::ArtifactId, f64)>> = BTreeMap::new();
    let mut dispatched: BTreeMap<u64, warroom::model::ArtifactId> = BTreeMap::new();
    for r in log {
        match r {
            LogRecord::Message { round, message } => match message.kind {
                MessageKind::Propose | MessageKind::Revise | MessageKind::Agree => {
                    *per_round.entry(*round).or_default() += 1
                }
                MessageKind::Dispatch => {
                    if let Some(id) = message.refs.first() {
                        dispatched.insert(*round, *id);
                    }
                }
                MessageKind::Summary => {}
            },
            LogRecord::Artifact { round, artifact, .. } if artifact.kind() == ArtifactKind::Plan => {
                if let Some(u) = artifact.content().get("utility").and_then(Value::as_f64) {
                    utilities.entry(*round).or_default().push((artifact.id(), u));
                }
            }
            _ => {}
        }
    }
    for (round, n) in &per_round {
        ensure(*n <= bound, || format!("round {round}: {n} handshake messages > {bound}"))?;
    }
    for (round, id) in &dispatched {
        let plans = &utilities[round];
        let max = plans.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let got = plans.iter().find(|p| p.0 == *id).map(|p| p.1);
        ensure(got == Some(max), || format!("round {round}: dispatched utility {got:?}, best observed {max}"))?;
    }
    Ok(per_round.values().copied().max().unwrap_or(0))
}

pub fn criterion_handshake(cases: usize, seed: u64) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cases {
        handshake_case(&mut rng).map_err(|e| format!("case {i}: {e}"))?;
    }
    let mut busiest = 0;
    for (name, _) in BUNDLED {
        for (_, log) in run_family(&bundled(name))? {
            busiest = busiest.max(handshake_log_audit(&log).map_err(|e| format!("{name}: {e}"))?);
        }
    }
    Ok(format!("{cases} random exchanges and {} scenario logs within 2k+1 (max {busiest})", BUNDLED.len()))
}

// ---------------------------------------------------------------------------
// 6. termination

pub fn criterion_termination() -> Verdict {
    for (name, want) in [
        ("success_first_round", TerminationReason::Success),
        ("time_budget", TerminationReason::TimeBudget),
        ("stall", TerminationReason::Stall),
    ] {
        let runs = run_family(&bundled(name))?;
        let got = runs.last().expect("one mission").0.reason;
        ensure(got == want, || format!("{name} ended {} not {}", got.as_str(), want.as_str()))?;
    }
    let mut stalls = Vec::new();
    for k_stall in 1..=5u32 {
        let mut s = bundled("stall").remove(0);
        s.config.k_stall = k_stall;
        let r = s.run(None).map_err(|e| e.to_string())?.report;
        ensure(r.reason == TerminationReason::Stall && r.rounds == u64::from(k_stall), || {
            format!("k_stall={k_stall}: {} after {} rounds", r.reason.as_str(), r.rounds)
        })?;
        ensure(r.round_summaries.iter().all(|s| s.accepted == 0), || "a stalled round accepted entries".into())?;
        stalls.push(r.rounds);
    }
    Ok(format!("SUCCESS, TIME_BUDGET, STALL as named; STALL rounds for k_stall 1..5: {stalls:?}"))
}

// ---------------------------------------------------------------------------
// 7. cost identity

#[derive(Clone, Debug)]
pub enum RawEvent {
    Call { round: u64, role: RoleId, stage: Stage, tokens: u64 },
    Tool { round: u64, cost: u64 },
}

#[derive(Default)]
pub struct Recorder {
    pub events: RefCell<Vec<RawEvent>>,
    /// Round of the call in flight; tools only run inside calls.
    round: std::cell::Cell<u64>,
}

pub struct RecordingBackend {
    inner: Box<dyn RoleBackend>,
    rec: Rc<Recorder>,
}

impl RoleBackend for RecordingBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn propose(&mut self, req: &BackendRequest, tools: &mut dyn ToolPort) -> Result<BackendResponse, BackendError> {
        self.rec.round.set(req.round);
        let r = self.inner.propose(req, tools);
        let tokens = r.as_ref().map_or(0, |r| r.usage.tokens.min(req.token_cap));
        self.rec.events.borrow_mut().push(RawEvent::Call { round: req.round, role: req.role, stage: req.stage, tokens });
        r
    }

    fn serialize(&self) -> Value {
        self.inner.serialize()
    }
}

pub struct RecordingEnv<E> {
    pub inner: E,
    rec: Rc<Recorder>,
}

impl<E: Environment> Environment for RecordingEnv<E> {
    fn execute(&mut self, command: &str) -> Result<Observation, EnvError> {
        let r = self.inner.execute(command);
        if let Ok(o) = &r {
            self.rec.events.borrow_mut().push(RawEvent::Tool { round: self.rec.round.get(), cost: o.cost });
        }
        r
    }
    fn replay(&self, command: &str) -> Result<Observation, EnvError> {
        self.inner.replay(command)
    }
    fn is_success(&self, command: &str, stdout: &str) -> bool {
        self.inner.is_success(command, stdout)
    }
    fn tool_available(&self, tool: &str) -> bool {
        self.inner.tool_available(tool)
    }
    fn can_install(&self, tool: &str) -> bool {
        self.inner.can_install(tool)
    }
}

fn class(role: RoleId) -> &'static str {
    match role {
        RoleId::Detective => "D",
        RoleId::Strategist => "S",
        RoleId::General => "G",
        RoleId::Executor(_) => "E",
        RoleId::Validator => "V",
        RoleId::Controller => "ctrl",
    }
}

/// Runs a mission behind recording wrappers and recomputes each round's
/// cost total from what the backends and the environment actually reported.
/// Returns the mission total, or `None` when a budget refusal ended it.
pub fn cost_identity(s: &Scenario) -> Result<Option<u64>, String> {
    let rec: Rc<Recorder> = Rc::default();
    let wrap = |b: Box<dyn RoleBackend>| -> Box<dyn RoleBackend> {
        Box::new(RecordingBackend { inner: b, rec: Rc::clone(&rec) })
    };
    let r = s.roles();
    let mut roles = RoleSet {
        detective: wrap(r.detective),
        strategist: wrap(r.strategist),
        general: wrap(r.general),
        executor: wrap(r.executor),
    };
    let mut env = RecordingEnv { inner: s.environment(), rec: Rc::clone(&rec) };
    let mut kb = KnowledgeBase::in_memory(s.config.kb);
    let mut log = MissionLog::in_memory();
    let report = run_mission(&s.config, &mut env, &mut roles, &mut kb, &mut log).map_err(|e| e.to_string())?;
    if report.reason.is_budget() {
        // the refused charge was observed but never booked
        return Ok(None);
    }
    let records = log.into_records();
    let mut per_round: BTreeMap<u64, (BTreeMap<&str, u64>, u64)> = BTreeMap::new();
    for e in rec.events.borrow().iter() {
        match e {
            RawEvent::Call { round, role, tokens, .. } => {
                *per_round.entry(*round).or_default().0.entry(class(*role)).or_default() += tokens
            }
            RawEvent::Tool { round, cost } => per_round.entry(*round).or_default().1 += cost,
        }
    }
    for r in &records {
        if let LogRecord::Verdict { round, .. } = r {
            *per_round.entry(*round).or_default().0.entry("V").or_default() += s.config.validator_tokens;
        }
    }
    let k = u64::from(s.config.k);
    let mut mission = 0;
    for r in &records {
        let LogRecord::Cost { round, ledger, .. } = r else { continue };
        let (t, tool) = per_round.remove(round).unwrap_or_default();
        let g = |c: &str| t.get(c).copied().unwrap_or(0);
        let want = t.values().sum::<u64>() + k * (g("S") + g("G")) + tool;
        ensure(ledger.total == want, || format!("{} round {round}: COST total {} != recomputed {want}", s.name, ledger.total))?;
        mission += want;
    }
    ensure(per_round.is_empty(), || format!("{}: rounds {:?} charged without a COST record", s.name, per_round.keys()))?;
    ensure(report.cost_total == mission, || format!("{}: report total {} != recomputed {mission}", s.name, report.cost_total))?;
    Ok(Some(mission))
}

pub fn criterion_cost_identity() -> Verdict {
    let (mut checked, mut with_tools) = (0, 0);
    for (name, _) in BUNDLED {
        for base in bundled(name) {
            for (validator_tokens, priced) in [(0, false), (7, true)] {
                let mut m = base.clone();
                m.config.validator_tokens = validator_tokens;
                if priced {
                    for (i, c) in m.env.commands.iter_mut().enumerate() {
                        c.cost = 3 + i as u64;
                    }
                }
                let Some(total) = cost_identity(&m)? else { continue };
                checked += 1;
                let Some(plain) = cost_identity(&base)? else { continue };
                if total > plain {
                    with_tools += 1;
                }
            }
        }
    }
    ensure(with_tools > 0, || "no mission exercised tool or validator cost".into())?;
    Ok(format!(
        "{checked} missions ({with_tools} with tool and validator charges): \
         total == ΣT_X + k·(T_S+T_G) + C_tool from raw events"
    ))
}

// ---------------------------------------------------------------------------
// 8. isolation

const ROLES: [RoleId; 7] = [
    RoleId::Detective,
    RoleId::Strategist,
    RoleId::General,
    RoleId::Executor(0),
    RoleId::Executor(1),
    RoleId::Validator,
    RoleId::Controller,
];
const PARTS: [PartitionId; 5] =
    [PartitionId::Detective, PartitionId::Strategist, PartitionId::General, PartitionId::Executor, PartitionId::Controller];
const KINDS: [ArtifactKind; 4] = [ArtifactKind::Evidence, ArtifactKind::Hypothesis, ArtifactKind::Plan, ArtifactKind::Trace];

/// Cross-partition writes through every kind of token; all must bounce.
pub fn isolation_fuzz(writes: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mission = MissionId(7);
    let mut issuer = TokenIssuer::new(mission);
    let mut foreign = TokenIssuer::new(MissionId(8));
    let ws = Workspace::new(mission, 1, BTreeSet::new());
    let grants = [Grant::WriteOwnPartition, Grant::ReadAll, Grant::ValidatorWriteKb];
    let mut legit = 0;
    for i in 0..writes {
        let holder = pick(&mut rng, &ROLES);
        let grant = pick(&mut rng, &grants);
        let from_other_mission = rng.random_bool(0.1);
        let token = if from_other_mission { foreign.issue(holder, grant) } else { issuer.issue(holder, grant) };
        let own = holder.partition();
        let targets: Vec<PartitionId> = PARTS
            .iter()
            .copied()
            .filter(|p| from_other_mission || grant != Grant::WriteOwnPartition || Some(*p) != own)
            .collect();
        let Some(&target) = targets.get(rng.random_range(0..targets.len().max(1))) else { continue };
        let kind = pick(&mut rng, &KINDS);
        let r = ws.write(&token, target, kind, json!({ "i": i }), Vec::new());
        ensure(matches!(r, Err(WorkspaceError::WriteDenied(_))), || {
            format!("write {i}: {holder} ({grant:?}) into {target:?} gave {r:?}")
        })?;
        // an in-bounds write from the same holder still works
        if grant == Grant::WriteOwnPartition && !from_other_mission {
            if let Some(p) = own {
                ws.write(&token, p, kind, json!({ "ok": i }), Vec::new()).map_err(|e| format!("own write {i}: {e}"))?;
                legit += 1;
            }
        }
    }
    ensure(ws.len() == legit, || format!("{} artifacts stored, {legit} legitimate", ws.len()))?;
    Ok(legit)
}

/// A commit after a snapshot is taken never shows through that snapshot.
pub fn snapshot_isolation(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = KbConfig { capacity: 6, lambda: 0.1, tau_prom: 0.5 };
    let mut kb = KnowledgeBase::in_memory(cfg);
    let token = validator_token();
    kb.begin_round();
    kb.commit_batch(&token, (1..=5).map(|p| draft(EntryKind::Pattern, p, 0.8)).collect()).map_err(|e| e.to_string())?;
    for round in 0..20u64 {
        kb.begin_round();
        let readers: Vec<Snapshot> = (0..3).map(|_| kb.snapshot()).collect();
        let before: Vec<Vec<_>> = readers.iter().map(|s| s.entries().cloned().collect()).collect();
        let batch: Vec<EntryDraft> = (0..rng.random_range(1..=4u64))
            .map(|j| draft(pick(&mut rng, &[EntryKind::Pattern, EntryKind::Feedback]), 100 + round * 10 + j, 0.9))
            .collect();
        let receipt = kb.commit_batch(&token, batch).map_err(|e| e.to_string())?;
        for (s, b) in readers.iter().zip(&before) {
            let after: Vec<_> = s.entries().cloned().collect();
            ensure(&after == b, || format!("round {round}: snapshot changed under a commit"))?;
            for id in &receipt.accepted {
                ensure(s.get(*id).is_none(), || format!("round {round}: new entry {id} visible to an old reader"))?;
            }
            for id in &receipt.evicted {
                ensure(s.get(*id).is_some(), || format!("round {round}: evicted {id} vanished from an old reader"))?;
            }
        }
        let fresh = kb.snapshot();
        ensure(receipt.accepted.iter().all(|id| fresh.get(*id).is_some()), || "fresh snapshot misses commit".into())?;
        kb.end_round(&readers[0]).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// In-protocol: every logged artifact sits in its producer's partition.
pub fn partition_audit(log: &[LogRecord]) -> Result<usize, String> {
    let mut n = 0;
    for (i, r) in log.iter().enumerate() {
        if let LogRecord::Artifact { partition, artifact, .. } = r {
            ensure(artifact.producer().partition() == Some(*partition), || {
                format!("record {i}: {} artifact in {partition:?}", artifact.producer())
            })?;
            n += 1;
        }
    }
    Ok(n)
}

pub fn criterion_isolation() -> Verdict {
    let legit = isolation_fuzz(1000, 11)?;
    snapshot_isolation(12)?;
    let runs = run_family(&bundled("protocol_violations"))?;
    let (report, log) = &runs[0];
    let denied = report.round_summaries.iter().flat_map(|s| &s.rejected).filter(|c| *c == "WRITE_DENIED").count();
    ensure(denied > 0, || "protocol_violations logged no WRITE_DENIED".into())?;
    let n = partition_audit(log)?;
    Ok(format!(
        "1000 cross-partition writes denied ({legit} own writes accepted); commits invisible to open snapshots; \
         {denied} in-protocol denials, {n} artifacts in their own partitions"
    ))
}

// ---------------------------------------------------------------------------
// 9. faults

pub fn fault_case(kind: FaultKind, stage: Stage) -> Result<(), String> {
    let mut s = bundled("success_first_round").remove(0);
    s.faults = vec![FaultInjection { round: 1, stage, kind, role: None, action: None, tool: None }];
    let offender = match stage {
        Stage::S2 => RoleId::Detective,
        Stage::S3 => RoleId::Strategist,
        Stage::S4 => RoleId::General,
        _ => RoleId::Executor(0),
    };
    let mut kb = KnowledgeBase::in_memory(s.config.kb);
    let run = s.run(Some(&mut kb)).map_err(|e| e.to_string())?;
    let r1 = &run.report.round_summaries[0];
    let label = format!("{}@{stage}", kind.as_str());
    let f = r1.fault.as_ref().ok_or_else(|| format!("{label}: no fault recorded"))?;
    ensure(f.kind == kind && f.stage == stage && f.role == offender, || {
        format!("{label}: recorded {}@{} by {}", f.kind.as_str(), f.stage, f.role)
    })?;
    let want: Vec<Stage> = ORDER.iter().copied().take_while(|s| *s <= stage).chain([Stage::S6]).collect();
    ensure(r1.stages == want, || format!("{label}: stages {:?}", r1.stages))?;
    ensure(r1.outcome == Some(Outcome::Fail), || format!("{label}: outcome {:?}", r1.outcome))?;
    let negative = kb.live().chain(kb.tombstoned()).any(|e| {
        e.key == EntryKey::Feedback(offender)
            && serde_json::from_value::<FeedbackSummary>(e.payload.clone()).is_ok_and(|fb| {
                fb.round == 1 && fb.outcome == Outcome::Fail && fb.fault.as_deref() == Some(kind.as_str())
            })
    });
    ensure(negative, || format!("{label}: no negative FEEDBACK entry attributed to {offender}"))?;
    let replay = replay_records(&run.log);
    ensure(replay.passed(), || format!("{label}: replay\n{}", replay.render()))
}

pub fn criterion_faults() -> Verdict {
    let mut n = 0;
    for kind in FaultKind::ALL {
        for stage in [Stage::S2, Stage::S3, Stage::S4, Stage::S5] {
            fault_case(kind, stage)?;
            n += 1;
        }
    }
    Ok(format!("{n} fault × stage combinations short-circuit to S6 with attributed negative feedback"))
}

// ---------------------------------------------------------------------------
// 10. learning curves

pub fn criterion_learning() -> Verdict {
    let fam = bundled("learning_family");
    let persisted = learning_experiment(&fam, 3, true).map_err(|e| e.to_string())?;
    let cleared = learning_experiment(&fam, 3, false).map_err(|e| e.to_string())?;
    ensure(persisted == [3, 1, 1] && cleared == [3, 3, 3], || {
        format!("persisted {persisted:?}, cleared {cleared:?}")
    })?;
    Ok(format!("persisted {persisted:?}, cleared {cleared:?}"))
}

// ---------------------------------------------------------------------------
// 11. determinism

pub fn file_log(missions: &[Scenario], dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let mut kb = KnowledgeBase::in_memory(missions[0].config.kb);
    let mut out = Vec::new();
    for (i, m) in missions.iter().enumerate() {
        let path = dir.join(format!("{i}.jsonl"));
        let mut log = MissionLog::to_file(&path).map_err(|e| e.to_string())?;
        m.run_with(&mut kb, &mut log).map_err(|e| e.to_string())?;
        log.flush().map_err(|e| e.to_string())?;
        out.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

pub fn criterion_determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = 0;
    for (name, _) in BUNDLED {
        let fam = bundled(name);
        let a = tmp.path().join(format!("{name}-a"));
        let b = tmp.path().join(format!("{name}-b"));
        for d in [&a, &b] {
            std::fs::create_dir_all(d).map_err(|e| e.to_string())?;
        }
        let first = file_log(&fam, &a)?;
        let second = file_log(&fam, &b)?;
        let mem: Vec<Vec<u8>> = run_family(&fam)?.into_iter().map(|(_, l)| to_jsonl(&l)).collect();
        ensure(first == second, || format!("{name}: two file runs differ"))?;
        ensure(first == mem, || format!("{name}: file and in-memory logs differ"))?;
        bytes += first.iter().map(Vec::len).sum::<usize>();
    }
    Ok(format!("{} scenarios byte-identical across runs ({bytes} bytes per run)", BUNDLED.len()))
}

// ---------------------------------------------------------------------------
// 12. replay

pub const TAMPERED: [(&str, &str); 3] = [
    ("flipped_hash.log.jsonl", "hashes"),
    ("fabricated_promotion.log.jsonl", "gating"),
    ("reordered_stage.log.jsonl", "stages"),
];

pub fn criterion_replay() -> Verdict {
    let mut logs = 0;
    for (name, _) in BUNDLED {
        for (_, log) in run_family(&bundled(name))? {
            let r = replay_records(&log);
            ensure(r.passed(), || format!("{name}:\n{}", r.render()))?;
            logs += 1;
        }
    }
    let dir = manifest_dir().join("fixtures/tampered");
    for (file, check) in TAMPERED {
        let r = replay_file(&dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
        ensure(!r.passed(), || format!("{file} passed replay"))?;
        ensure(r.check(check).is_some_and(|c| !c.passed()), || format!("{file}: {check} did not fail\n{}", r.render()))?;
    }
    Ok(format!("{logs} suite logs pass; 3 tampered logs fail (hashes, gating, stages)"))
}

pub fn rank_cmp(a: &Plan, b: &Plan) -> Ordering {
    if plan_better(a, b) {
        Ordering::Less
    } else if plan_better(b, a) {
        Ordering::Greater
    } else {
        Ordering::Equal
    }
}
