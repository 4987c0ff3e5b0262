//! Success and cost estimators and the plan utility.

use crate::knowledge::Snapshot;
use crate::model::{CostVector, Outcome, RoleId, Remaining};

use super::{CapabilityProfile, FeedbackSummary, Hypothesis, UtilityWeights};

/// Smoothing factor of the capability cost moving average.
pub const EMA_FACTOR: f64 = 0.3;

pub fn laplace(successes: u64, trials: u64) -> f64 {
    (successes as f64 + 1.0) / (trials as f64 + 2.0)
}

/// Add-one smoothed success rate over the general's feedback entries whose
/// signature equals the hypothesis signature.
pub fn estimate_success(h: &Hypothesis, snapshot: &Snapshot) -> f64 {
    let sig = h.signature();
    let (mut s, mut n) = (0, 0);
    for e in snapshot.feedback(RoleId::General) {
        let Ok(fb) = serde_json::from_value::<FeedbackSummary>(e.payload.clone()) else { continue };
        if fb.signature == Some(sig) {
            n += 1;
            if fb.outcome == Outcome::Success {
                s += 1;
            }
        }
    }
    laplace(s, n)
}

/// Most recent available profile for `tool`, over every role.
fn latest_profile(tool: &str, snapshot: &Snapshot) -> Option<CapabilityProfile> {
    snapshot
        .capabilities_for_tool(tool)
        .into_iter()
        .filter_map(|e| {
            let p: CapabilityProfile = serde_json::from_value(e.payload.clone()).ok()?;
            p.available.then_some((e.created_at, e.id, p))
        })
        .max_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, _, p)| p)
}

/// Sums per-node costs; risk combines as `1 - Π(1 - r_i)`.
pub fn predict_costs(h: &Hypothesis, snapshot: &Snapshot) -> CostVector {
    let mut tok = 0.0;
    let mut time_ms = 0.0;
    let mut safe = 1.0;
    for n in h.ordered_nodes() {
        let c = latest_profile(&n.operator, snapshot).map_or(n.resource_cost, |p| p.ema);
        tok += c.tok;
        time_ms += c.time_ms;
        safe *= 1.0 - c.risk;
    }
    CostVector { tok, time_ms, risk: 1.0 - safe }
}

fn normalized(cost: f64, remaining: f64) -> f64 {
    if remaining > 0.0 {
        cost / remaining
    } else if cost == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `w1·p̂ − w2·ĉ_tok − w3·ĉ_time − w4·ĉ_risk`, each cost divided by the
/// matching remaining-budget component.
pub fn utility_value(w: &UtilityWeights, p_hat: f64, cost: &CostVector, remaining: &Remaining) -> f64 {
    w.w1 * p_hat
        - w.w2 * normalized(cost.tok, remaining.tok)
        - w.w3 * normalized(cost.time_ms, remaining.time_ms)
        - w.w4 * normalized(cost.risk, remaining.risk)
}

pub fn utility(h: &Hypothesis, w: &UtilityWeights, snapshot: &Snapshot, remaining: &Remaining) -> f64 {
    utility_value(w, estimate_success(h, snapshot), &predict_costs(h, snapshot), remaining)
}
