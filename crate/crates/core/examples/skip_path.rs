//! A plan that needs a missing tool: SKIP and fall back, or install first.

use warroom::sim::{skip_path_experiment, ToolState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for state in [ToolState::Unavailable, ToolState::Installable, ToolState::Available] {
        let r = skip_path_experiment(state)?;
        println!("{state:?}: {} after plans {:?}", r.reason.as_str(), r.plans);
        println!("  skip rounds {:?}", r.skip_rounds);
        println!("  executor commands {:?}", r.trace_commands);
    }
    Ok(())
}
