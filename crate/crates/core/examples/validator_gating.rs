//! Validator scores with a deterministic environment and with perturbed
//! replays: the same artifacts lose reproducibility and fall below τ.

use warroom::controller::LogRecord;
use warroom::sim::{ReplayMode, Scenario, BUNDLED};

fn audit(label: &str, s: &Scenario) -> Result<(), Box<dyn std::error::Error>> {
    let run = s.run(None)?;
    println!("{label}: {} after {} round(s)", run.report.reason.as_str(), run.report.rounds);
    for rec in &run.log {
        if let LogRecord::Audit { round, row } = rec {
            println!(
                "  r{round} {:10} {:?} rep={:.2} con={:.2} util={:.2} s={:.3} promoted={}",
                row.producer.to_string(),
                row.kind,
                row.rep,
                row.con,
                row.util,
                row.s,
                row.promoted
            );
        }
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (_, src) = BUNDLED.iter().find(|(n, _)| *n == "success_first_round").expect("bundled");
    let mut s = Scenario::parse(src, "success_first_round")?;
    println!("τ = {}", s.config.kb.tau_prom);
    audit("deterministic replay", &s)?;
    s.env.replay = ReplayMode::Perturbed { seed: 1, commands: Vec::new() };
    audit("perturbed replay", &s)?;
    Ok(())
}
