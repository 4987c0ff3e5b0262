//! The bounded propose/revise/agree exchange between general and strategist.

use warroom::knowledge::Snapshot;
use warroom::model::{CostVector, Remaining};
use warroom::strategy::{
    negotiate, Counterpart, Hypothesis, HypothesisNode, Plan, Reply, SelectionContext, UtilityWeights,
};

fn hyp(id: &str, time_ms: f64) -> Hypothesis {
    Hypothesis {
        id: id.into(),
        nodes: vec![HypothesisNode {
            step_index: 0,
            operator: "exploit".into(),
            command: format!("./exploit.py --{id}"),
            expected_signals: vec!["FLAG".into()],
            resource_cost: CostVector::new(20.0, time_ms, 0.0),
            prior_confidence: 0.5,
            matched_patterns: vec![],
            depends_on: vec![],
            timeout_ms: 30_000,
        }],
    }
}

/// Revises twice with fresh candidates, then agrees.
struct Strategist {
    revisions: Vec<Vec<Hypothesis>>,
}

impl Counterpart for Strategist {
    type Error = std::convert::Infallible;

    fn propose(&mut self, iteration: u32, plan: &Plan) -> Result<(), Self::Error> {
        println!("  G -> S  PROPOSE #{iteration}: {} (U={:+.4})", plan.source_hypothesis, plan.utility);
        Ok(())
    }

    fn respond(&mut self, iteration: u32, _plan: &Plan) -> Result<Reply, Self::Error> {
        if self.revisions.is_empty() {
            println!("  S -> G  AGREE #{iteration}");
            return Ok(Reply::Agree);
        }
        let next = self.revisions.remove(0);
        println!("  S -> G  REVISE #{iteration}: {:?}", next.iter().map(|h| &h.id).collect::<Vec<_>>());
        Ok(Reply::Revise(next))
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let snapshot = Snapshot::empty();
    let ctx = SelectionContext {
        weights: UtilityWeights::default(),
        snapshot: &snapshot,
        remaining: Remaining { tok: 10_000.0, time_ms: 3_600_000.0, risk: 0.9 },
        executors: 1,
    };
    for k in [1, 3] {
        println!("k = {k}");
        let mut s = Strategist { revisions: vec![vec![hyp("ret2win", 1_000.0)], vec![hyp("fuzz-first", 2_500_000.0)]] };
        let n = negotiate(&[hyp("rop-chain", 1_800_000.0)], &ctx, k, &mut s).map_err(|e| format!("{e:?}"))?;
        println!(
            "  committed {} after {} message(s) (bound {}), agreed={}",
            n.plan().source_hypothesis,
            n.messages(),
            2 * k + 1,
            n.agreed
        );
    }
    Ok(())
}
