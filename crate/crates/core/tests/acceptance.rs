//! One PASS/FAIL line per acceptance criterion; exits nonzero on any FAIL.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 12] = [
        ("stage conformance", criterion_stage_conformance),
        ("validation gating", || gating_rounds(500, 2024)),
        ("eviction oracle", || criterion_eviction(200, 7)),
        ("plan selection oracle", || criterion_select_plan(500, 99)),
        ("handshake bound", || criterion_handshake(300, 5)),
        ("termination", criterion_termination),
        ("cost identity", criterion_cost_identity),
        ("isolation", criterion_isolation),
        ("fault short-circuit", criterion_faults),
        ("learning curve", criterion_learning),
        ("determinism", criterion_determinism),
        ("replay audit", criterion_replay),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let ms = start.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{ms} ms]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{ms} ms]", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
