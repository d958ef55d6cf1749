//! Replays a simulated chain from genesis, then shows that a forged state
//! root is caught at the exact height.

use scynet::scenario::Scenario;
use scynet::sim::run_scenario;
use scynet::state::{read_block_log, replay, write_block};
use scynet::types::Hash256;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/dataset_basic.toml");
    let scenario = Scenario::load(&path)?;
    let out = run_scenario(&scenario)?;

    // round-trip through the on-disk log format
    let mut log = Vec::new();
    for b in &out.blocks {
        write_block(&mut log, b)?;
    }
    let blocks = read_block_log(&mut log.as_slice())?;
    println!("block log: {} blocks, {} bytes", blocks.len(), log.len());

    let (state, _) = replay(out.genesis.clone(), &blocks)?;
    assert_eq!(state.state_hash().to_hex(), out.report.final_state_hash);
    println!("replayed state {} matches the simulator", out.report.final_state_hash);

    let mut forged = blocks.clone();
    forged[10].header.state_root = Hash256::digest(b"forged");
    match replay(out.genesis, &forged) {
        Err(e) => println!("forged log rejected: {e}"),
        Ok(_) => unreachable!("a forged state root must not replay"),
    }
    Ok(())
}
