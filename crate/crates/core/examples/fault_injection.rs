//! Each fault kind at each stage: the round short-circuits to S6, fails,
//! and the offending role receives negative feedback.

use warroom::controller::FaultKind;
use warroom::knowledge::KnowledgeBase;
use warroom::model::{EntryKind, Stage};
use warroom::sim::{FaultInjection, Scenario, BUNDLED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (_, src) = BUNDLED.iter().find(|(n, _)| *n == "success_first_round").expect("bundled");
    let base = Scenario::parse(src, "success_first_round")?;
    for kind in FaultKind::ALL {
        for stage in [Stage::S2, Stage::S3, Stage::S4, Stage::S5] {
            let mut s = base.clone();
            s.faults = vec![FaultInjection { round: 1, stage, kind, role: None, action: None, tool: None }];
            let mut kb = KnowledgeBase::in_memory(s.config.kb);
            let r = s.run(Some(&mut kb))?.report;
            let first = &r.round_summaries[0];
            let f = first.fault.as_ref().expect("fault recorded");
            let negative = kb
                .live()
                .filter(|e| e.kind() == EntryKind::Feedback && e.payload.get("fault").is_some())
                .map(|e| e.payload["role"].as_str().unwrap_or("?").to_owned())
                .collect::<Vec<_>>();
            println!(
                "{:18} @{stage}: stages {:?} outcome {:?}; blamed {}; negative feedback for {:?}; mission {} in {}",
                kind.as_str(),
                first.stages,
                first.outcome,
                f.role,
                negative,
                r.reason.as_str(),
                r.rounds
            );
        }
    }
    Ok(())
}
