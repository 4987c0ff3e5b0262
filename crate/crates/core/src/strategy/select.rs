//! Budget-constrained argmax over candidate hypotheses.

use std::cmp::Ordering;

use crate::knowledge::Snapshot;
use crate::model::{CostVector, RoleId, Remaining};

use super::estimate::{estimate_success, predict_costs, utility_value};
use super::{AtomicAction, CapabilityProfile, Hypothesis, Plan, StrategyError, UtilityWeights};

#[derive(Clone, Copy, Debug)]
pub struct SelectionContext<'a> {
    pub weights: UtilityWeights,
    pub snapshot: &'a Snapshot,
    pub remaining: Remaining,
    pub executors: u32,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Evaluation {
    pub p_hat: f64,
    pub cost: CostVector,
    pub utility: f64,
    pub feasible: bool,
    pub actions: usize,
}

pub fn evaluate(h: &Hypothesis, ctx: &SelectionContext<'_>) -> Evaluation {
    let p_hat = estimate_success(h, ctx.snapshot);
    let cost = predict_costs(h, ctx.snapshot);
    Evaluation {
        p_hat,
        cost,
        utility: utility_value(&ctx.weights, p_hat, &cost, &ctx.remaining),
        feasible: ctx.remaining.admits(&cost),
        actions: h.nodes.len(),
    }
}

/// Preference order: higher utility, higher p̂, fewer actions, smaller id.
/// `Less` means `a` is preferred.
pub fn rank(a: (&Evaluation, &str), b: (&Evaluation, &str)) -> Ordering {
    b.0.utility
        .total_cmp(&a.0.utility)
        .then(b.0.p_hat.total_cmp(&a.0.p_hat))
        .then(a.0.actions.cmp(&b.0.actions))
        .then(a.1.cmp(b.1))
}

/// Highest-scored available capability among executor instances for each
/// action's tool; round-robin when no profile exists.
pub fn assign_executors(actions: &[AtomicAction], snapshot: &Snapshot, executors: u32) -> Vec<RoleId> {
    let n = executors.max(1);
    actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut best: Option<(f64, u32)> = None;
            for e in 0..n {
                for entry in snapshot.capability(RoleId::Executor(e), &a.tool) {
                    let ok = serde_json::from_value::<CapabilityProfile>(entry.payload.clone())
                        .is_ok_and(|p| p.available);
                    if ok && best.is_none_or(|(s, _)| entry.score > s) {
                        best = Some((entry.score, e));
                    }
                }
            }
            RoleId::Executor(best.map_or(i as u32 % n, |(_, e)| e))
        })
        .collect()
}

pub fn select_plan(candidates: &[Hypothesis], ctx: &SelectionContext<'_>) -> Result<Plan, StrategyError> {
    ctx.weights.validate()?;
    if candidates.is_empty() {
        return Err(StrategyError::NoCandidates);
    }
    for h in candidates {
        h.validate()?;
    }
    let evals: Vec<Evaluation> = candidates.iter().map(|h| evaluate(h, ctx)).collect();
    let best = candidates
        .iter()
        .zip(&evals)
        .filter(|(_, e)| e.feasible)
        .min_by(|a, b| rank((a.1, &a.0.id), (b.1, &b.0.id)));
    let Some((h, e)) = best else {
        return Err(StrategyError::Infeasible(candidates.len()));
    };
    let actions = h.actions();
    let assignment = assign_executors(&actions, ctx.snapshot, ctx.executors);
    Ok(Plan {
        source_hypothesis: h.id.clone(),
        signature: h.signature(),
        actions,
        assignment,
        utility: e.utility,
        p_hat: e.p_hat,
        predicted_cost: e.cost,
    })
}
