//! Runs a scenario file and prints its settlements and per-node outcome.
//!
//!     cargo run --example run_scenario -- scenarios/dataset_basic.toml

use std::path::PathBuf;

use scynet::scenario::Scenario;
use scynet::sim::run_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/realtime_basic.toml"));
    let scenario = Scenario::load(&path)?;
    let out = run_scenario(&scenario)?;
    let report = &out.report;

    println!("{}: {} blocks, final state {}", report.scenario, report.blocks, report.final_state_hash);
    for s in &report.settlements {
        let ranking: Vec<String> = s.consensus.iter().map(|(_, owner, score)| format!("{owner} {score:.3}")).collect();
        println!("tournament {} pool {} rollover {}: {}", s.tournament, s.pool, s.rollover, ranking.join(", "));
    }
    for n in &report.nodes {
        println!(
            "  {:<14} {:<22} balance {:>6} income {:>5} disqualified {:?}",
            n.name,
            n.roles.join("+"),
            n.final_balance,
            n.total_income,
            n.disqualified_in
        );
    }
    Ok(())
}
