//! Selects dataset challengers from a validator set by power-weighted draws,
//! skipping nodes whose own agents are competing.

use std::collections::BTreeSet;

use scynet::tournament::{challenger_seed, select_challengers, ChallengerRules};
use scynet::types::{Address, Hash256};

fn main() {
    let nodes: Vec<(Address, u128)> = (0..40u8).map(|i| (Address([i; 32]), 10 + (i as u128 * 7) % 30)).collect();
    let participating: BTreeSet<Address> = (0..40u8).step_by(5).map(|i| Address([i; 32])).collect();
    let rules = ChallengerRules { min_challengers: 12, min_power_pct: 30, max_share_pct: 10, max_draws: 10_000 };
    let seed = challenger_seed(&Hash256::digest(b"previous header"), b"commit signatures");

    let total: u128 = nodes.iter().map(|(_, p)| p).sum();
    let chosen = select_challengers(&nodes, &participating, seed, &rules).expect("feasible");
    let sum: u128 = chosen.iter().map(|c| c.power).sum();
    let max = chosen.iter().map(|c| c.power).max().unwrap_or(0);
    println!(
        "{} challengers holding {sum}/{total} power, largest share {:.1}%",
        chosen.len(),
        100.0 * max as f64 / sum as f64
    );
    for c in &chosen {
        println!("  {} power {}", &c.address.to_hex()[..8], c.power);
    }

    let strict = ChallengerRules { min_challengers: 40, ..rules };
    println!("min 40 with 8 participating: {}", select_challengers(&nodes, &participating, seed, &strict).unwrap_err());
}
