mod common;

use std::collections::BTreeMap;

use common::{load_scenario, SCENARIO_FILES};
use scynet::crypto::Keypair;
use scynet::scenario::Scenario;
use scynet::sim::{run_scenario, SimOutput};
use scynet::state::{replay, write_block, ChainEvent};
use scynet::tournament::DisqualificationReason;
use scynet::transactions::TxKind;
use scynet::types::Address;

fn run(name: &str) -> (Scenario, SimOutput) {
    let scenario = load_scenario(name);
    let out = run_scenario(&scenario).unwrap_or_else(|e| panic!("{name}: {e}"));
    (scenario, out)
}

fn block_log_bytes(out: &SimOutput) -> Vec<u8> {
    let mut bytes = Vec::new();
    for b in &out.blocks {
        write_block(&mut bytes, b).unwrap();
    }
    bytes
}

/// Sums every token held anywhere by walking the serialized ledger, without
/// going through the ledger's own accessors.
fn tokens_in_serialized_ledger(out: &SimOutput) -> u128 {
    let v = serde_json::to_value(&out.final_state.ledger).unwrap();
    let mut total = 0u128;
    for acct in v["accounts"].as_object().unwrap().values() {
        total += acct["balance"].as_u64().unwrap() as u128;
        for stake in acct["stakes"].as_object().unwrap().values() {
            total += stake["amount"].as_u64().unwrap() as u128;
        }
    }
    for pool in v["pools"].as_object().unwrap().values() {
        total += pool.as_u64().unwrap() as u128;
    }
    total + v["burned"].as_u64().unwrap() as u128
}

fn chain_events(out: &SimOutput) -> Vec<ChainEvent> {
    out.log
        .iter()
        .filter(|r| r.kind == "chain")
        .map(|r| serde_json::from_value(r.detail.clone()).expect("chain event record"))
        .collect()
}

#[test]
fn every_scenario_audits_and_replays() {
    for name in SCENARIO_FILES {
        let (scenario, out) = run(name);
        assert!(out.report.blocks > 0, "{name}");
        assert_eq!(out.report.audits_passed, out.report.blocks, "{name}");
        assert_eq!(out.blocks.len() as u64, out.report.blocks, "{name}");

        let (state, _) = replay(out.genesis.clone(), &out.blocks).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(state.state_hash().to_hex(), out.report.final_state_hash, "{name}");

        let genesis_total: u128 = scenario.nodes.iter().map(|n| (n.balance + n.bond) as u128).sum();
        assert_eq!(tokens_in_serialized_ledger(&out), genesis_total, "{name}");
        for s in &out.report.settlements {
            let paid: u64 = s.payouts.iter().map(|p| p.amount).sum();
            assert_eq!(paid + s.rollover, s.pool, "{name} tournament {}", s.tournament);
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    for name in ["realtime_basic.toml", "dataset_basic.toml", "tx_spammer.toml"] {
        let (_, a) = run(name);
        let (_, b) = run(name);
        assert_eq!(block_log_bytes(&a), block_log_bytes(&b), "{name}");
        assert_eq!(a.report.final_state_hash, b.report.final_state_hash, "{name}");
        assert_eq!(serde_json::to_string(&a.log).unwrap(), serde_json::to_string(&b.log).unwrap(), "{name}");
    }
}

#[test]
fn different_seeds_diverge() {
    let mut scenario = load_scenario("realtime_basic.toml");
    let a = run_scenario(&scenario).unwrap();
    scenario.simulation.seed += 1;
    let b = run_scenario(&scenario).unwrap();
    assert_ne!(a.report.final_state_hash, b.report.final_state_hash);
}

#[test]
fn basic_scenarios_settle_every_tournament() {
    for name in ["realtime_basic.toml", "dataset_basic.toml"] {
        let (scenario, out) = run(name);
        let settled: Vec<u64> = out.report.settlements.iter().map(|s| s.tournament).collect();
        let want: Vec<u64> = (1..=scenario.simulation.tournaments).collect();
        assert_eq!(settled, want, "{name}");
        assert!(out.report.disqualifications.is_empty(), "{name}: {:?}", out.report.disqualifications);
    }
}

#[test]
fn client_rentals_pay_the_listing_owner() {
    let (_, out) = run("realtime_basic.toml");
    let owner = Keypair::from_name("data-node").address();
    let rentals = chain_events(&out)
        .into_iter()
        .filter(|e| matches!(e, ChainEvent::Rented { owner: o, .. } if *o == owner))
        .count();
    assert!(rentals > 0);
    assert!(out.log.iter().any(|r| r.kind == "service"));
}

#[test]
fn copier_is_caught_every_tournament() {
    let (scenario, out) = run("signal_copier.toml");
    let copier = out.report.node("copier").unwrap();
    let t = scenario.simulation.tournaments;
    assert_eq!(copier.disqualified_in, (1..=t).collect::<Vec<_>>());
    assert_eq!(copier.agent_tranche_income, 0);
    assert!(copier.copy_detected >= t);

    let address = Keypair::from_name("copier").address();
    let copied_keys = out
        .blocks
        .iter()
        .flat_map(|b| &b.txs)
        .filter(|tx| tx.sender == address && tx.kind() == TxKind::PublishSignalDecryptionKey)
        .count() as u64;
    assert_eq!(copier.copy_detected, copied_keys);
    for node in out.report.nodes.iter().filter(|n| n.name != "copier") {
        assert!(node.disqualified_in.is_empty(), "{}", node.name);
    }
}

#[test]
fn lazy_validator_and_silent_searcher_are_disqualified() {
    let (scenario, out) = run("lazy_and_silent.toml");
    let t = scenario.simulation.tournaments;
    let reasons = |node: &str| -> Vec<String> {
        out.report.disqualifications.iter().filter(|d| d.node == node).map(|d| d.reason.clone()).collect()
    };
    let name = |r: DisqualificationReason| serde_json::to_value(r).unwrap().as_str().unwrap().to_string();
    assert_eq!(reasons("lazy"), vec![name(DisqualificationReason::MissedRanking); t as usize]);
    assert_eq!(reasons("silent"), vec![name(DisqualificationReason::MissedSignal); t as usize]);
    assert_eq!(out.report.node("silent").unwrap().agent_tranche_income, 0);
}

#[test]
fn spam_is_rate_limited_and_never_included_past_the_limit() {
    let (scenario, out) = run("tx_spammer.toml");
    let spammer = out.report.node("spammer").unwrap();
    assert!(spammer.rejected.get("rate-limited").copied().unwrap_or(0) > 0);

    let window = scenario.domain.spam_window();
    let limit = scenario.domain.spam_rate_limit as usize;
    let mut included: BTreeMap<(Address, TxKind), Vec<u64>> = BTreeMap::new();
    for b in &out.blocks {
        for tx in &b.txs {
            if !tx.kind().is_fee_bearing() {
                included.entry((tx.sender, tx.kind())).or_default().push(b.header.timestamp);
            }
        }
    }
    for ((sender, kind), times) in &included {
        for &t in times {
            let in_window = times.iter().filter(|&&u| u <= t && u + window > t).count();
            assert!(in_window <= limit, "{sender:?} {kind:?} has {in_window} in the window ending {t}");
        }
    }
}

#[test]
fn halting_scenario_stops_and_replays() {
    let (_, out) = run("halt.toml");
    let halt = out.report.halted.as_ref().expect("the chain halts");
    assert_eq!(halt.height, out.report.blocks + 1);
    let (state, _) = replay(out.genesis.clone(), &out.blocks).unwrap();
    assert_eq!(state.state_hash().to_hex(), out.report.final_state_hash);
}

#[test]
fn restart_searchers_record_convergence() {
    let mut scenario = load_scenario("rastrigin_restart.toml");
    scenario.simulation.tournaments = 5;
    let out = run_scenario(&scenario).unwrap();
    for n in out.report.nodes.iter().filter(|n| n.roles.iter().any(|r| r == "searcher")) {
        let best = n.best_ever.expect("searchers report best_ever");
        let series: Vec<f64> = out.convergence.iter().filter(|r| r.node == n.name).map(|r| r.best_ever).collect();
        assert!(!series.is_empty());
        assert!(series.windows(2).all(|w| w[1] <= w[0]), "{} best_ever must not increase", n.name);
        assert_eq!(*series.last().unwrap(), best);
    }
}
