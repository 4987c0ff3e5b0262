//! Audits a mission log offline, then shows the audit catching edits.

use warroom::controller::LogRecord;
use warroom::replay::replay_records;
use warroom::sim::{Scenario, BUNDLED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (_, src) = BUNDLED.iter().find(|(n, _)| *n == "fault_tool_crash").expect("bundled");
    let log = Scenario::parse(src, "fault_tool_crash")?.run(None)?.log;
    println!("untouched log:\n{}", replay_records(&log).render());

    let (_, src) = BUNDLED.iter().find(|(n, _)| *n == "stall").expect("bundled");
    let mut promoted = Scenario::parse(src, "stall")?.run(None)?.log;
    let edited = promoted.iter_mut().enumerate().find_map(|(i, rec)| match rec {
        LogRecord::Audit { row, .. } if !row.promoted => {
            row.promoted = true;
            Some((i, row.s))
        }
        _ => None,
    });
    let (i, s) = edited.expect("the stall log has an unpromoted row");
    println!("stall log, record {i} (s={s:.3}) marked promoted:\n{}", replay_records(&promoted).render());

    let mut reordered = log.clone();
    let stages: Vec<usize> =
        reordered.iter().enumerate().filter(|(_, r)| matches!(r, LogRecord::Stage { .. })).map(|(i, _)| i).collect();
    reordered.swap(stages[2], stages[3]);
    println!("two stage markers swapped:\n{}", replay_records(&reordered).render());
    Ok(())
}
