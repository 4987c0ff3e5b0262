//! Rounds-to-success over a family of related missions, with the knowledge
//! store kept between missions and with it cleared.

use warroom::sim::{learning_experiment, Scenario, BUNDLED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (_, src) = BUNDLED.iter().find(|(n, _)| *n == "learning_family").expect("bundled");
    let family = Scenario::parse_family(src, "learning_family")?;
    let missions = std::env::args().nth(1).and_then(|n| n.parse().ok()).unwrap_or(family.len());
    let persisted = learning_experiment(&family, missions, true)?;
    let cleared = learning_experiment(&family, missions, false)?;
    println!("mission  persisted  cleared");
    for (i, (p, c)) in persisted.iter().zip(&cleared).enumerate() {
        println!("{:7}  {p:9}  {c:7}", i + 1);
    }
    Ok(())
}
