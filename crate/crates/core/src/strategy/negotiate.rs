//! Bounded propose/revise/agree exchange.

use serde::{Deserialize, Serialize};

use super::select::{rank, select_plan, SelectionContext};
use super::{Hypothesis, Plan, StrategyError};

#[derive(Clone, PartialEq, Debug)]
pub enum Reply {
    Agree,
    /// Replacement candidate set.
    Revise(Vec<Hypothesis>),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReplyKind {
    Agree,
    Revise,
}

/// The strategist side of the handshake, plus a hook the general side uses
/// to publish each proposal before it is answered.
pub trait Counterpart {
    type Error;

    fn propose(&mut self, _iteration: u32, _plan: &Plan) -> Result<(), Self::Error> {
        Ok(())
    }

    fn respond(&mut self, iteration: u32, plan: &Plan) -> Result<Reply, Self::Error>;
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum NegotiationError<E> {
    #[error(transparent)]
    Strategy(StrategyError),
    #[error("negotiation aborted")]
    Aborted(E),
}

#[derive(Clone, PartialEq, Debug)]
pub struct Negotiation {
    pub proposals: Vec<Plan>,
    pub replies: Vec<ReplyKind>,
    /// Index into `proposals` of the committed plan.
    pub committed: usize,
    pub agreed: bool,
}

impl Negotiation {
    pub fn plan(&self) -> &Plan {
        &self.proposals[self.committed]
    }

    pub fn messages(&self) -> usize {
        self.proposals.len() + self.replies.len()
    }
}

/// Runs at most `k` exchanges and commits the best plan proposed.
///
/// A revision whose candidates are all infeasible ends the exchange early;
/// the final revision after the `k`-th proposal is not evaluated.
pub fn negotiate<C: Counterpart>(
    initial: &[Hypothesis],
    ctx: &SelectionContext<'_>,
    k: u32,
    counterpart: &mut C,
) -> Result<Negotiation, NegotiationError<C::Error>> {
    let mut candidates = initial.to_vec();
    let mut n = Negotiation { proposals: Vec::new(), replies: Vec::new(), committed: 0, agreed: false };
    for it in 1..=k.max(1) {
        let plan = match select_plan(&candidates, ctx) {
            Ok(p) => p,
            Err(e) if n.proposals.is_empty() => return Err(NegotiationError::Strategy(e)),
            Err(e) => {
                tracing::debug!(iteration = it, error = %e, "revision unusable; committing best so far");
                break;
            }
        };
        counterpart.propose(it, &plan).map_err(NegotiationError::Aborted)?;
        n.proposals.push(plan);
        let reply = counterpart.respond(it, n.proposals.last().expect("just pushed")).map_err(NegotiationError::Aborted)?;
        match reply {
            Reply::Agree => {
                n.replies.push(ReplyKind::Agree);
                n.agreed = true;
                break;
            }
            Reply::Revise(hs) => {
                n.replies.push(ReplyKind::Revise);
                candidates = hs;
            }
        }
    }
    n.committed = best_index(&n.proposals);
    Ok(n)
}

fn best_index(plans: &[Plan]) -> usize {
    let mut best = 0;
    for i in 1..plans.len() {
        let (a, b) = (&plans[i], &plans[best]);
        if rank((&as_eval(a), &a.source_hypothesis), (&as_eval(b), &b.source_hypothesis)).is_lt() {
            best = i;
        }
    }
    best
}

fn as_eval(p: &Plan) -> super::Evaluation {
    super::Evaluation {
        p_hat: p.p_hat,
        cost: p.predicted_cost,
        utility: p.utility,
        feasible: true,
        actions: p.actions.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::Snapshot;
    use crate::model::{CostVector, Remaining};
    use crate::strategy::testutil::{hyp, node};
    use crate::strategy::UtilityWeights;

    struct Script {
        replies: Vec<Reply>,
        calls: u32,
    }

    impl Counterpart for Script {
        type Error = ();
        fn respond(&mut self, _it: u32, _plan: &Plan) -> Result<Reply, ()> {
            let r = self.replies.get(self.calls as usize).cloned().unwrap_or(Reply::Agree);
            self.calls += 1;
            Ok(r)
        }
    }

    fn ctx(s: &Snapshot) -> SelectionContext<'_> {
        SelectionContext {
            weights: UtilityWeights::default(),
            snapshot: s,
            remaining: Remaining { tok: 1000.0, time_ms: 1000.0, risk: 0.9 },
            executors: 1,
        }
    }

    fn cheap(id: &str, tok: f64) -> Hypothesis {
        hyp(id, vec![node(0, "x", CostVector::new(tok, 10.0, 0.0))])
    }

    #[test]
    fn immediate_agree() {
        let s = Snapshot::empty();
        let mut c = Script { replies: vec![Reply::Agree], calls: 0 };
        let n = negotiate(&[cheap("a", 1.0)], &ctx(&s), 3, &mut c).unwrap();
        assert_eq!(n.messages(), 2);
        assert!(n.agreed);
        assert_eq!(n.plan().source_hypothesis, "a");
    }

    #[test]
    fn always_revise_stops_at_k() {
        let s = Snapshot::empty();
        let replies = (0..10).map(|i| Reply::Revise(vec![cheap(&format!("r{i}"), 5.0)])).collect();
        let mut c = Script { replies, calls: 0 };
        let n = negotiate(&[cheap("a", 5.0)], &ctx(&s), 3, &mut c).unwrap();
        assert_eq!(n.proposals.len(), 3);
        assert_eq!(n.replies, vec![ReplyKind::Revise; 3]);
        assert_eq!(n.messages(), 6);
        assert!(!n.agreed);
    }

    #[test]
    fn worse_revision_does_not_win() {
        let s = Snapshot::empty();
        let mut c = Script { replies: vec![Reply::Revise(vec![cheap("worse", 400.0)]), Reply::Agree], calls: 0 };
        let n = negotiate(&[cheap("first", 10.0)], &ctx(&s), 3, &mut c).unwrap();
        assert_eq!(n.proposals.len(), 2);
        assert!(n.proposals[1].utility < n.proposals[0].utility);
        assert_eq!(n.plan().source_hypothesis, "first");
    }

    #[test]
    fn infeasible_revision_commits_best_so_far() {
        let s = Snapshot::empty();
        let mut c = Script { replies: vec![Reply::Revise(vec![cheap("huge", 1e9)])], calls: 0 };
        let n = negotiate(&[cheap("a", 1.0)], &ctx(&s), 3, &mut c).unwrap();
        assert_eq!(n.proposals.len(), 1);
        assert_eq!(n.plan().source_hypothesis, "a");
    }
}
