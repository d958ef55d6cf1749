mod common;

use common::{load_scenario, Harness};
use proptest::prelude::*;
use scynet::config::DomainConfig;
use scynet::crypto::Keypair;
use scynet::scenario::DelayModel;
use scynet::sim::run_scenario;
use scynet::state::replay;
use scynet::transactions::{SignedTransaction, TxPayload};
use scynet::types::Uuid;

const USERS: [&str; 3] = ["user-a", "user-b", "user-c"];

/// Raw material for one random transaction.
#[derive(Debug, Clone)]
struct TxSeed {
    user: usize,
    kind: u8,
    slot: u8,
    amount: u64,
    age: u64,
}

fn tx_seed() -> impl Strategy<Value = TxSeed> {
    (0..USERS.len(), 0u8..4, 0u8..4, 0u64..400, 0u64..3_000).prop_map(|(user, kind, slot, amount, age)| TxSeed {
        user,
        kind,
        slot,
        amount,
        age,
    })
}

fn build(seed: &TxSeed, now: u64) -> SignedTransaction {
    let keys = Keypair::from_name(USERS[seed.user]);
    let id = Uuid::derive(&[b"prop/", USERS[seed.user].as_bytes(), &[seed.slot]]);
    let payload = match seed.kind {
        0 => TxPayload::SubmitAgent { agent: id, stake: seed.amount },
        1 => TxPayload::PublishDataPrice {
            data: id,
            params: vec![seed.slot],
            scheme: "per-request".into(),
            price: seed.amount % 20,
            stake: seed.amount,
        },
        2 => TxPayload::Rent {
            listing: Uuid::derive(&[b"prop/", USERS[(seed.user + 1) % USERS.len()].as_bytes(), &[seed.slot]]),
            quantity: 1 + seed.amount % 5,
        },
        _ => TxPayload::PublishAgentPrice {
            agent: id,
            scheme: "per-request".into(),
            price: seed.amount % 10,
            stake: seed.amount,
        },
    };
    SignedTransaction::sign(payload, &keys, now.saturating_sub(seed.age))
}

fn config() -> DomainConfig {
    DomainConfig {
        tournament_start_frequency: 10_000,
        real_time_frequency: Some(5_000),
        challenger_submission_timeout: 2_000,
        ranking_timeout: 4_000,
        dataset_signal_key_timeout: 2_000,
        min_agent_challengers: 1,
        min_agent_challenger_voting_power: 0,
        ..DomainConfig::real_time_default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Arbitrary transaction streams never break the ledger, and the blocks
    /// they produce replay to the same state.
    #[test]
    fn random_tx_streams_keep_the_chain_consistent(blocks in proptest::collection::vec(proptest::collection::vec(tx_seed(), 0..8), 1..40)) {
        let cfg = config();
        let mut h = Harness::new(cfg.clone(), &[("prop-v1", 50), ("prop-v2", 30)], &USERS);
        let genesis = h.state.clone();
        let supply = genesis.ledger.supply();
        let mut produced = Vec::new();
        for (i, seeds) in blocks.iter().enumerate() {
            let ts = (i as u64 + 1) * cfg.block_time;
            let txs: Vec<_> = seeds.iter().map(|s| build(s, ts)).collect();
            let signers: Vec<&Keypair> = h.validators.iter().collect();
            let (block, outcome) = h.state.produce_block(ts, txs, &signers).unwrap();
            prop_assert!(h.state.ledger.audit().is_ok());
            prop_assert_eq!(h.state.ledger.supply(), supply);
            prop_assert_eq!(block.txs.len() + outcome.rejected.len(), seeds.len());
            produced.push(block);
        }
        let (replayed, _) = replay(genesis, &produced).unwrap();
        prop_assert_eq!(replayed.state_hash(), h.state.state_hash());
    }

    /// Whatever the seed and network delay, a simulated run audits clean,
    /// conserves every settlement pool and replays to its reported state.
    #[test]
    fn simulated_runs_replay_for_any_seed_and_delay(seed in any::<u64>(), min in 0u64..400, spread in 0u64..600) {
        let mut scenario = load_scenario("realtime_basic.toml");
        scenario.simulation.seed = seed;
        scenario.simulation.tournaments = 1;
        scenario.simulation.delay = DelayModel { min, max: min + spread };
        let out = run_scenario(&scenario).unwrap();
        prop_assert_eq!(out.report.audits_passed, out.report.blocks);
        for s in &out.report.settlements {
            prop_assert_eq!(s.payouts.iter().map(|p| p.amount).sum::<u64>() + s.rollover, s.pool);
        }
        let (state, _) = replay(out.genesis.clone(), &out.blocks).unwrap();
        prop_assert_eq!(state.state_hash().to_hex(), out.report.final_state_hash);
    }
}
