//! Runs every bundled scenario through expectations, stage checks, replay
//! and a determinism rerun.

use warroom::sim::{run_suite, SuiteEntry};

fn main() {
    let jobs = std::env::args().nth(1).and_then(|j| j.parse().ok()).unwrap_or(4);
    let report = run_suite(&SuiteEntry::bundled(), jobs);
    print!("{}", report.matrix());
    std::process::exit(if report.passed() { 0 } else { 2 });
}
