//! Utility-maximizing plan choice under a budget, with the tie-break order
//! visible.

use warroom::knowledge::Snapshot;
use warroom::model::{CostVector, Remaining};
use warroom::strategy::{evaluate, select_plan, Hypothesis, HypothesisNode, SelectionContext, UtilityWeights};

fn hyp(id: &str, steps: &[(&str, f64, f64, f64)]) -> Hypothesis {
    let nodes = steps
        .iter()
        .enumerate()
        .map(|(i, (op, tok, time_ms, risk))| HypothesisNode {
            step_index: i as u32,
            operator: (*op).into(),
            command: format!("{op} ./target"),
            expected_signals: vec!["FLAG".into()],
            resource_cost: CostVector::new(*tok, *time_ms, *risk),
            prior_confidence: 0.5,
            matched_patterns: vec![],
            depends_on: if i > 0 { vec![i as u32 - 1] } else { vec![] },
            timeout_ms: 10_000,
        })
        .collect();
    Hypothesis { id: id.into(), nodes }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let candidates = vec![
        hyp("brute-force", &[("python", 200.0, 90_000.0, 0.05)]),
        hyp("patch-jump", &[("radare2", 40.0, 2_000.0, 0.1), ("target", 10.0, 100.0, 0.0)]),
        hyp("debug-check", &[("gdb", 60.0, 3_000.0, 0.05)]),
        // same cost as debug-check, loses on the id tie-break
        hyp("gdb-check", &[("gdb", 60.0, 3_000.0, 0.05)]),
    ];
    let snapshot = Snapshot::empty();
    let ctx = SelectionContext {
        weights: UtilityWeights::default(),
        snapshot: &snapshot,
        remaining: Remaining { tok: 1_000.0, time_ms: 60_000.0, risk: 0.5 },
        executors: 2,
    };
    for h in &candidates {
        let e = evaluate(h, &ctx);
        println!(
            "{:12} p̂={:.3} cost=({:.0} tok, {:.0} ms, risk {:.3}) U={:+.4} feasible={}",
            h.id, e.p_hat, e.cost.tok, e.cost.time_ms, e.cost.risk, e.utility, e.feasible
        );
    }
    let plan = select_plan(&candidates, &ctx)?;
    println!("selected {} with {} action(s) assigned to {:?}", plan.source_hypothesis, plan.actions.len(), plan.assignment);

    let tight = SelectionContext { remaining: Remaining { tok: 1_000.0, time_ms: 500.0, risk: 0.5 }, ..ctx };
    println!("with 500 ms left: {:?}", select_plan(&candidates, &tight).map(|p| p.source_hypothesis));
    Ok(())
}
