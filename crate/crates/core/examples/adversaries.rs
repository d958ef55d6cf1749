//! Runs the adversarial scenarios and prints how each misbehaving node fared.

use scynet::scenario::Scenario;
use scynet::sim::run_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for file in ["signal_copier.toml", "lazy_and_silent.toml", "tx_spammer.toml", "halt.toml"] {
        let scenario = Scenario::load(&dir.join(file))?;
        let out = run_scenario(&scenario)?;
        println!("{} ({} blocks)", scenario.name, out.report.blocks);
        for n in out.report.nodes.iter().filter(|n| n.adversary.is_some() || !n.disqualified_in.is_empty()) {
            println!(
                "  {:<10} {:<18} disqualified in {:?}, copies detected {}, rejected {:?}, agent income {}",
                n.name,
                n.adversary.as_deref().unwrap_or("-"),
                n.disqualified_in,
                n.copy_detected,
                n.rejected,
                n.agent_tranche_income
            );
        }
        if let Some(h) = &out.report.halted {
            println!("  chain halted at height {} (t={}): {}", h.height, h.time, h.reason);
        }
    }
    Ok(())
}
