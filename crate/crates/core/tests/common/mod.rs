#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use scynet::commit_reveal::{seal_signal, BlobStore, DatasetCommitment, EnvelopeContext};
use scynet::config::{DomainConfig, ProblemType};
use scynet::crypto::Keypair;
use scynet::scenario::Scenario;
use scynet::scoring::codec;
use scynet::state::{Block, BlockOutcome, ChainEvent, ChainState, Subject};
use scynet::tournament::DisqualificationReason;
use scynet::transactions::{SignedTransaction, TxPayload};
use scynet::types::{AgentId, SymmetricKey, Timestamp, Uuid};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn load_scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub const SCENARIO_FILES: [&str; 8] = [
    "realtime_basic.toml",
    "dataset_basic.toml",
    "signal_copier.toml",
    "corrupt_challengers.toml",
    "tx_spammer.toml",
    "lazy_and_silent.toml",
    "halt.toml",
    "rastrigin_restart.toml",
];

/// A chain driven block by block at chosen timestamps, with every
/// validator online.
pub struct Harness {
    pub state: ChainState,
    pub validators: Vec<Keypair>,
    pub events: Vec<(Timestamp, ChainEvent)>,
}

impl Harness {
    pub fn new(cfg: DomainConfig, validators: &[(&str, u64)], users: &[&str]) -> Self {
        let keys: Vec<Keypair> = validators.iter().map(|(n, _)| Keypair::from_name(n)).collect();
        let mut alloc: Vec<_> =
            validators.iter().map(|(n, bond)| (Keypair::from_name(n).address(), 10_000, *bond)).collect();
        alloc.extend(users.iter().map(|n| (Keypair::from_name(n).address(), 10_000, 0)));
        Self { state: ChainState::genesis(cfg, alloc).expect("valid config"), validators: keys, events: Vec::new() }
    }

    pub fn produce(&mut self, ts: Timestamp, txs: Vec<SignedTransaction>) -> (Block, BlockOutcome) {
        let signers: Vec<&Keypair> = self.validators.iter().collect();
        let (block, outcome) = self.state.produce_block(ts, txs, &signers).expect("block produced");
        self.state.ledger.audit().expect("ledger audit");
        self.events.extend(outcome.events.iter().cloned().map(|e| (ts, e)));
        (block, outcome)
    }

    pub fn disqualifications(&self) -> Vec<(u64, Subject, DisqualificationReason)> {
        self.events
            .iter()
            .filter_map(|(_, e)| match e {
                ChainEvent::Disqualified { tournament, subject, reason } => Some((*tournament, *subject, *reason)),
                _ => None,
            })
            .collect()
    }
}

/// Deadlines whose one-block lateness is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deadline {
    ChallengerSubmission,
    TickSignal,
    TickSignalKey,
    DatasetKey,
    DatasetSignalKey,
    Ranking,
}

pub struct DeadlineOutcome {
    pub harness: Harness,
    pub agent: Vec<AgentId>,
    pub searcher: Keypair,
    pub validator: Keypair,
}

pub fn deadline_config(problem: ProblemType) -> DomainConfig {
    let base = match problem {
        ProblemType::RealTime => DomainConfig::real_time_default(),
        ProblemType::Dataset => DomainConfig::dataset_default(),
    };
    DomainConfig {
        tournament_start_frequency: 20_000,
        challenger_submission_timeout: 5_000,
        dataset_signal_key_timeout: 4_000,
        ranking_timeout: 8_000,
        real_time_frequency: (problem == ProblemType::RealTime).then_some(5_000),
        min_agent_challengers: 1,
        min_agent_challenger_voting_power: 0,
        max_challenger_power_share: 100,
        block_time: 1_000,
        ..base
    }
}

/// Runs two tournaments with one searcher, one agent per tournament and one
/// validator (which is also the only challenger), submitting everything in
/// the last block before its deadline, except `late`, which lands exactly one
/// block after the last valid block in tournament 1.
pub fn run_deadline_script(problem: ProblemType, late: Option<Deadline>) -> DeadlineOutcome {
    let cfg = deadline_config(problem);
    let bt = cfg.block_time;
    let mut h = Harness::new(cfg.clone(), &[("deadline-validator", 100)], &["deadline-searcher"]);
    let searcher = Keypair::from_name("deadline-searcher");
    let validator = Keypair::from_name("deadline-validator");
    let agents: Vec<AgentId> = (1..=2u64).map(|k| Uuid::derive(&[b"deadline-agent", &k.to_be_bytes()])).collect();
    let mut blobs = BlobStore::new();
    let dim = cfg.signal_dimension as usize;
    let rtf = cfg.tick_interval();
    let signal_key = |k: u64, slot: u64| SymmetricKey([(k * 16 + slot) as u8; 32]);
    let dataset_key = |k: u64| SymmetricKey([k as u8 + 100; 32]);
    let last = cfg.ranking_deadline(2);
    // Due time of an on-time action with deadline `d`: the last block before it.
    let due = |d: Timestamp, kind: Deadline, k: u64| if late == Some(kind) && k == 1 { d } else { d - bt };

    let mut ts = bt;
    while ts <= last {
        let mut txs = Vec::new();
        let sign = |keys: &Keypair, p: TxPayload| SignedTransaction::sign(p, keys, ts);
        for k in 1..=2u64 {
            let agent = agents[k as usize - 1];
            if ts == cfg.tournament_start(k) - 5_000 {
                txs.push(sign(&searcher, TxPayload::SubmitAgent { agent, stake: cfg.min_agent_submit_stake }));
            }
            match problem {
                ProblemType::RealTime => {
                    for t_m in cfg.schedule_for(k).ticks {
                        let m = t_m / rtf;
                        if ts == due(t_m, Deadline::TickSignal, k) {
                            let signal = codec::encode_vector(&vec![0.5; dim]);
                            let envelope = seal_signal(
                                &signal_key(k, m),
                                agent,
                                EnvelopeContext::Tick(m),
                                &signal,
                                &searcher.address(),
                            );
                            txs.push(sign(&searcher, TxPayload::SubmitSignal { agent, envelope, tick: Some(m) }));
                        }
                        if ts == due(t_m + rtf, Deadline::TickSignalKey, k) {
                            txs.push(sign(
                                &searcher,
                                TxPayload::PublishSignalDecryptionKey { agent, key: signal_key(k, m), tick: Some(m) },
                            ));
                        }
                    }
                }
                ProblemType::Dataset => {
                    if ts == due(cfg.challenger_deadline(k), Deadline::ChallengerSubmission, k) {
                        let rows = vec![vec![0.1, 0.2, 0.3]];
                        let outputs = codec::encode_vector(&vec![1.0; dim]);
                        let c = DatasetCommitment::publish(
                            &mut blobs,
                            &validator.address(),
                            codec::encode_matrix(&rows),
                            &outputs,
                            &dataset_key(k),
                        );
                        txs.push(sign(
                            &validator,
                            TxPayload::PublishDataset {
                                inputs_blob: c.inputs_blob,
                                inputs_hash: c.inputs_hash,
                                outputs_blob: c.outputs_blob,
                                outputs_hash: c.outputs_hash,
                            },
                        ));
                    }
                    if ts == cfg.challenger_deadline(k) + bt {
                        let answers = codec::encode_dataset_answers(&[(validator.address(), vec![1.0; dim])]);
                        let envelope = seal_signal(
                            &signal_key(k, k),
                            agent,
                            EnvelopeContext::Tournament(k),
                            &answers,
                            &searcher.address(),
                        );
                        txs.push(sign(&searcher, TxPayload::SubmitSignal { agent, envelope, tick: None }));
                    }
                    if ts == due(cfg.dataset_key_deadline(k), Deadline::DatasetKey, k) {
                        txs.push(sign(&validator, TxPayload::PublishDatasetDecryptionKey { key: dataset_key(k) }));
                    }
                    if ts == due(cfg.dataset_key_deadline(k), Deadline::DatasetSignalKey, k) {
                        txs.push(sign(
                            &searcher,
                            TxPayload::PublishSignalDecryptionKey { agent, key: signal_key(k, k), tick: None },
                        ));
                    }
                }
            }
            if ts == due(cfg.ranking_deadline(k), Deadline::Ranking, k) {
                let ranking = vec![(agent, 0.5)];
                txs.push(sign(&validator, TxPayload::PublishTournamentRanking { ranking }));
            }
        }
        h.produce(ts, txs);
        ts += bt;
    }
    DeadlineOutcome { harness: h, agent: agents, searcher, validator }
}

impl DeadlineOutcome {
    /// Disqualifications in the two scripted tournaments. Tournament 3 opens
    /// before tournament 2's ranking deadline but nobody acts in it.
    pub fn disqualifications(&self) -> Vec<(u64, Subject, DisqualificationReason)> {
        self.harness.disqualifications().into_iter().filter(|(k, _, _)| *k <= 2).collect()
    }
}

/// The single disqualification a one-block-late action must cause.
pub fn expected_disqualification(outcome: &DeadlineOutcome, late: Deadline) -> (u64, Subject, DisqualificationReason) {
    let agent = Subject::Agent(outcome.agent[0]);
    let validator = outcome.validator.address();
    match late {
        Deadline::ChallengerSubmission => (1, Subject::Challenger(validator), DisqualificationReason::MissedDataset),
        Deadline::TickSignal => (1, agent, DisqualificationReason::MissedSignal),
        Deadline::TickSignalKey | Deadline::DatasetSignalKey => (1, agent, DisqualificationReason::MissedSignalKey),
        Deadline::DatasetKey => (1, Subject::Challenger(validator), DisqualificationReason::MissedDatasetKey),
        Deadline::Ranking => (1, Subject::Validator(validator), DisqualificationReason::MissedRanking),
    }
}

pub fn problem_of(late: Deadline) -> ProblemType {
    match late {
        Deadline::TickSignal | Deadline::TickSignalKey => ProblemType::RealTime,
        Deadline::ChallengerSubmission | Deadline::DatasetKey | Deadline::DatasetSignalKey => ProblemType::Dataset,
        Deadline::Ranking => ProblemType::RealTime,
    }
}

/// Checks one late case: exactly the prescribed disqualification in
/// tournament 1, none in tournament 2, and a clean on-time baseline.
pub fn check_late_case(late: Deadline) -> Result<(), String> {
    let problem = problem_of(late);
    let baseline = run_deadline_script(problem, None);
    let base_dq = baseline.disqualifications();
    if !base_dq.is_empty() {
        return Err(format!("{late:?}: on-time baseline disqualified {base_dq:?}"));
    }
    let outcome = run_deadline_script(problem, Some(late));
    let got = outcome.disqualifications();
    let want = expected_disqualification(&outcome, late);
    if got != vec![want] {
        return Err(format!("{late:?}: expected exactly {want:?}, got {got:?}"));
    }
    let settled: BTreeSet<u64> = outcome
        .harness
        .events
        .iter()
        .filter_map(|(_, e)| match e {
            ChainEvent::TournamentSettled { tournament, .. } => Some(*tournament),
            _ => None,
        })
        .collect();
    if !settled.contains(&2) {
        return Err(format!("{late:?}: tournament 2 never settled"));
    }
    Ok(())
}

pub const ALL_DEADLINES: [Deadline; 6] = [
    Deadline::ChallengerSubmission,
    Deadline::TickSignal,
    Deadline::TickSignalKey,
    Deadline::DatasetKey,
    Deadline::DatasetSignalKey,
    Deadline::Ranking,
];
