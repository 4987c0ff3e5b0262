//! Runs one bundled scenario and prints its report and log record types.

use std::path::PathBuf;

use warroom::sim::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/success_first_round.toml")
    });
    for scenario in Scenario::load(&path)? {
        let run = scenario.run(None)?;
        let r = &run.report;
        println!("{}: {} after {} round(s)", scenario.name, r.reason.as_str(), r.rounds);
        for s in &r.round_summaries {
            println!(
                "  round {} outcome {:?} plan {:?} stages {:?} promoted {} accepted {}",
                s.round, s.outcome, s.plan, s.stages, s.promoted, s.accepted
            );
        }
        for rec in &run.log {
            println!("    {}", serde_json::to_string(rec)?);
        }
        let bad = scenario.check(r);
        println!("  expectations: {}", if bad.is_empty() { "met".to_string() } else { bad.join("; ") });
    }
    Ok(())
}
