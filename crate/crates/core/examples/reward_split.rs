//! Splits a dataset tournament pool between agents, validators, challengers
//! and maintenance.

use std::collections::{BTreeMap, BTreeSet};

use scynet::config::ProblemType;
use scynet::tournament::{allocate_reward, RewardInputs, Tranches};
use scynet::types::{Address, Uuid};

fn main() {
    let addr = |b: u8| Address([b; 32]);
    let agent = |b: u8| Uuid([b; 16]);
    let pool = 1_000_003;

    let ranking = vec![(agent(1), 0.92), (agent(2), 0.71), (agent(3), 0.40), (agent(4), 0.05)];
    let owners: BTreeMap<_, _> = (1..=4).map(|i| (agent(i), addr(10 + i))).collect();
    let points = BTreeMap::from([(addr(1), 40), (addr(2), 25), (addr(3), 0)]);
    let powers = BTreeMap::from([(addr(1), 300u128), (addr(2), 200), (addr(4), 100)]);
    let disqualified_challengers = BTreeSet::from([addr(4)]);

    let t = Tranches::split(pool, ProblemType::Dataset);
    println!(
        "pool {pool}: agents {} validators {} challengers {} maintenance {}",
        t.agents, t.validators, t.challengers, t.maintenance
    );

    let alloc = allocate_reward(&RewardInputs {
        pool,
        problem: ProblemType::Dataset,
        ranking: &ranking,
        agent_owners: &owners,
        disqualified_agents: &BTreeSet::new(),
        validator_points: &points,
        disqualified_validators: &BTreeSet::new(),
        challenger_powers: &powers,
        disqualified_challengers: &disqualified_challengers,
        maintenance: addr(0xee),
    });
    for p in &alloc.payouts {
        println!("  {:?} {:<10} {:>7}", p.reason, p.address.to_hex()[..8].to_string(), p.amount);
    }
    let paid: u64 = alloc.payouts.iter().map(|p| p.amount).sum();
    println!("paid {paid} + rollover {} = {}", alloc.rollover, paid + alloc.rollover);
}
