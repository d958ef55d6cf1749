//! Discrete-event simulation of a node population running the chain.
//!
//! Events are ordered by `(virtual time, sequence number)`. Every channel
//! delivers in order with a uniform random delay; each node has its own
//! delay and behaviour streams derived from the scenario seed, so changing
//! one node's traffic never perturbs another node's randomness. Blocks are
//! produced every `blockTime` by the selected proposer and include, in
//! arrival order, every transaction that reached the mempool by the block
//! timestamp.

pub(crate) mod node;
pub mod report;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::commit_reveal::BlobStore;
use crate::crypto::Keypair;
use crate::scenario::{DelayModel, Scenario, ScenarioError};
use crate::searcher::TruthProcess;
use crate::state::{Block, BlockError, ChainEvent, ChainState, Subject};
use crate::tournament::PayoutReason;
use crate::transactions::SignedTransaction;
use crate::types::{Address, Timestamp};

use node::{Node, NodeCtx};
pub use report::{
    BlockStat, ConvergenceRow, DisqualificationRow, HaltInfo, LogRecord, NodeSummary, PayoutRow, SettlementRow,
    SimReport,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invariant violated at height {height}: {detail}")]
    Invariant { height: u64, detail: String },
    #[error("block production failed at height {height}: {error}")]
    Block { height: u64, error: BlockError },
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: SimReport,
    pub genesis: ChainState,
    pub final_state: ChainState,
    pub blocks: Vec<Block>,
    pub log: Vec<LogRecord>,
    pub convergence: Vec<ConvergenceRow>,
}

/// The genesis state a scenario's chain starts from.
pub fn genesis_state(scenario: &Scenario) -> Result<ChainState, ScenarioError> {
    let allocations = scenario.nodes.iter().map(|n| (Keypair::from_name(&n.name).address(), n.balance, n.bond));
    Ok(ChainState::genesis(scenario.domain.clone(), allocations)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    ProduceBlock,
    DeliverBlock { node: usize, index: usize },
}

struct PendingTx {
    arrival: Timestamp,
    seq: u64,
    tx: SignedTransaction,
}

struct Channel {
    rng: ChaCha8Rng,
    last: Timestamp,
}

impl Channel {
    /// Arrival time of a message sent at `now`, never before an earlier message.
    fn send(&mut self, now: Timestamp, delay: DelayModel) -> Timestamp {
        let d = if delay.min == delay.max { delay.min } else { self.rng.gen_range(delay.min..=delay.max) };
        self.last = self.last.max(now + d);
        self.last
    }
}

#[derive(Default)]
struct Tally {
    sent: u64,
    included: u64,
    rejected: BTreeMap<String, u64>,
}

struct Engine<'s> {
    scenario: &'s Scenario,
    state: ChainState,
    nodes: Vec<Node>,
    by_address: BTreeMap<Address, usize>,
    queue: BinaryHeap<Reverse<(Timestamp, u64, Event)>>,
    seq: u64,
    mempool: Vec<PendingTx>,
    tx_channels: Vec<Channel>,
    block_channels: Vec<Channel>,
    blobs: BlobStore,
    truth: TruthProcess,
    blocks: Vec<Block>,
    block_events: Vec<Vec<ChainEvent>>,
    log: Vec<LogRecord>,
    convergence: Vec<ConvergenceRow>,
    tallies: Vec<Tally>,
    block_stats: Vec<BlockStat>,
    settlements: Vec<SettlementRow>,
    disqualifications: Vec<DisqualificationRow>,
    halted: Option<HaltInfo>,
    audits: u64,
}

/// Runs a scenario to completion: until the last tournament's ranking
/// deadline has passed, or the chain halts.
pub fn run_scenario(scenario: &Scenario) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let genesis = genesis_state(scenario)?;
    let seed = scenario.simulation.seed;
    let nodes: Vec<Node> = scenario.nodes.iter().map(|spec| Node::new(spec.clone(), seed)).collect();
    let channel = |purpose: &str, name: &str| Channel { rng: node::stream(seed, purpose, name), last: 0 };
    let mut engine = Engine {
        scenario,
        state: genesis.clone(),
        by_address: nodes.iter().enumerate().map(|(i, n)| (n.address, i)).collect(),
        tx_channels: nodes.iter().map(|n| channel("tx-delay", &n.name)).collect(),
        block_channels: nodes.iter().map(|n| channel("block-delay", &n.name)).collect(),
        tallies: nodes.iter().map(|_| Tally::default()).collect(),
        nodes,
        queue: BinaryHeap::new(),
        seq: 0,
        mempool: Vec::new(),
        blobs: BlobStore::new(),
        truth: TruthProcess::from_seed(scenario.truth_seed()),
        blocks: Vec::new(),
        block_events: Vec::new(),
        log: Vec::new(),
        convergence: Vec::new(),
        block_stats: Vec::new(),
        settlements: Vec::new(),
        disqualifications: Vec::new(),
        halted: None,
        audits: 0,
    };
    engine.run()?;
    Ok(engine.finish(genesis))
}

impl Engine<'_> {
    fn schedule(&mut self, at: Timestamp, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq, event)));
    }

    fn name_of(&self, address: &Address) -> String {
        match self.by_address.get(address) {
            Some(&i) => self.nodes[i].name.clone(),
            None if *address == self.scenario.domain.maintenance_address => "maintenance".into(),
            None => address.to_hex()[..16].to_string(),
        }
    }

    fn end_time(&self) -> Timestamp {
        let cfg = &self.scenario.domain;
        cfg.ranking_deadline(self.scenario.simulation.tournaments) + cfg.block_time
    }

    fn run(&mut self) -> Result<(), SimError> {
        let bt = self.scenario.domain.block_time;
        self.schedule(bt, Event::ProduceBlock);
        while let Some(Reverse((now, _, event))) = self.queue.pop() {
            match event {
                Event::ProduceBlock => {
                    if !self.produce(now)? {
                        break;
                    }
                }
                Event::DeliverBlock { node, index } => self.deliver(now, node, index),
            }
        }
        Ok(())
    }

    /// Returns false once the chain has halted.
    fn produce(&mut self, now: Timestamp) -> Result<bool, SimError> {
        let mut ready: Vec<PendingTx> = Vec::new();
        let mut waiting = Vec::new();
        for p in self.mempool.drain(..) {
            if p.arrival <= now {
                ready.push(p);
            } else {
                waiting.push(p);
            }
        }
        self.mempool = waiting;
        ready.sort_by_key(|p| (p.arrival, p.seq));

        let signers: Vec<&Keypair> =
            self.nodes.iter().filter(|n| n.spec.is_validator() && !n.spec.is_offline(now)).map(|n| &n.keys).collect();
        let height = self.state.height + 1;
        let (block, outcome) = match self.state.produce_block(now, ready.into_iter().map(|p| p.tx), &signers) {
            Ok(produced) => produced,
            Err(error @ (BlockError::InsufficientCommit { .. } | BlockError::NoValidators)) => {
                let reason = error.to_string();
                self.log.push(LogRecord {
                    time: now,
                    node: None,
                    kind: "halt".into(),
                    detail: json!({ "height": height, "reason": reason }),
                });
                self.halted = Some(HaltInfo { height, time: now, reason });
                return Ok(false);
            }
            Err(error) => return Err(SimError::Block { height, error }),
        };

        self.state.ledger.audit().map_err(|e| SimError::Invariant { height, detail: e.to_string() })?;
        self.audits += 1;

        let proposer = self.name_of(&block.header.proposer);
        self.log.push(LogRecord {
            time: now,
            node: Some(proposer.clone()),
            kind: "block".into(),
            detail: json!({
                "height": height,
                "hash": block.header.hash().to_hex(),
                "stateRoot": block.header.state_root.to_hex(),
                "txs": block.txs.len(),
                "rejected": outcome.rejected.len(),
            }),
        });
        let mut honest_txs = 0;
        for tx in &block.txs {
            if let Some(&i) = self.by_address.get(&tx.sender) {
                self.tallies[i].included += 1;
                if self.nodes[i].spec.adversary.is_none() {
                    honest_txs += 1;
                }
            }
        }
        for r in &outcome.rejected {
            if let Some(&i) = self.by_address.get(&r.sender) {
                *self.tallies[i].rejected.entry(r.reason.code().to_string()).or_default() += 1;
            }
            self.log.push(LogRecord {
                time: now,
                node: Some(self.name_of(&r.sender)),
                kind: "tx-rejected".into(),
                detail: json!({ "tx": r.tx.to_hex(), "type": r.kind.name(), "reason": r.reason.code() }),
            });
        }
        self.block_stats.push(BlockStat {
            height,
            timestamp: now,
            proposer,
            txs: block.txs.len(),
            honest_txs,
            rejected: outcome.rejected.len(),
        });
        for event in &outcome.events {
            self.record_event(now, height, event)?;
        }

        self.blocks.push(block);
        self.block_events.push(outcome.events);
        let bt = self.scenario.domain.block_time;
        if now + bt <= self.end_time() {
            self.schedule(now + bt, Event::ProduceBlock);
        }
        let index = self.blocks.len() - 1;
        let delay = self.scenario.simulation.delay;
        for i in 0..self.nodes.len() {
            if self.nodes[i].spec.is_offline(now) {
                continue;
            }
            let at = self.block_channels[i].send(now, delay);
            self.schedule(at, Event::DeliverBlock { node: i, index });
        }
        Ok(true)
    }

    fn record_event(&mut self, now: Timestamp, height: u64, event: &ChainEvent) -> Result<(), SimError> {
        self.log.push(LogRecord {
            time: now,
            node: None,
            kind: "chain".into(),
            detail: serde_json::to_value(event).expect("events serialize"),
        });
        match event {
            ChainEvent::TournamentSettled { tournament, settlement } => {
                let paid: u128 = settlement.payouts.iter().map(|p| p.amount as u128).sum();
                if paid + settlement.rollover as u128 != settlement.pool as u128 {
                    return Err(SimError::Invariant {
                        height,
                        detail: format!(
                            "tournament {tournament}: payouts {paid} + rollover {} != pool {}",
                            settlement.rollover, settlement.pool
                        ),
                    });
                }
                let consensus = settlement
                    .consensus
                    .iter()
                    .map(|(a, s)| {
                        let owner =
                            self.state.agents.get(a).map_or_else(|| "?".to_string(), |r| self.name_of(&r.owner));
                        (*a, owner, *s)
                    })
                    .collect();
                let payouts = settlement
                    .payouts
                    .iter()
                    .map(|p| PayoutRow {
                        recipient: self.name_of(&p.address),
                        reason: p.reason,
                        amount: p.amount,
                        agent: p.agent,
                    })
                    .collect();
                self.settlements.push(SettlementRow {
                    tournament: *tournament,
                    time: now,
                    pool: settlement.pool,
                    rollover: settlement.rollover,
                    consensus,
                    payouts,
                });
            }
            ChainEvent::Disqualified { tournament, subject, reason } => {
                let (node, role) = match subject {
                    Subject::Agent(a) => {
                        (self.state.agents.get(a).map_or_else(|| a.to_hex(), |r| self.name_of(&r.owner)), "agent")
                    }
                    Subject::Challenger(c) => (self.name_of(c), "challenger"),
                    Subject::Validator(v) => (self.name_of(v), "validator"),
                };
                let reason = serde_json::to_value(reason).expect("reason serializes");
                self.disqualifications.push(DisqualificationRow {
                    tournament: *tournament,
                    time: now,
                    node,
                    role: role.into(),
                    reason: reason.as_str().unwrap_or_default().to_string(),
                });
            }
            ChainEvent::Rented { listing, renter, owner, quantity, .. } => {
                // The data node fulfils the rental off-chain.
                self.log.push(LogRecord {
                    time: now,
                    node: Some(self.name_of(owner)),
                    kind: "service".into(),
                    detail: json!({ "listing": listing, "renter": self.name_of(renter), "quantity": quantity }),
                });
            }
            _ => {}
        }
        Ok(())
    }

    fn deliver(&mut self, now: Timestamp, i: usize, index: usize) {
        let sim = &self.scenario.simulation;
        let block_time = self.blocks[index].header.timestamp;
        let mut ctx = NodeCtx {
            state: &self.state,
            blobs: &mut self.blobs,
            truth: &self.truth,
            tournaments: sim.tournaments,
            dataset_rows: sim.dataset_rows,
            submit_lead: self.scenario.submit_lead(),
            outbox: Vec::new(),
            notes: Vec::new(),
        };
        let node = &mut self.nodes[i];
        node.on_block(block_time, &self.block_events[index], &mut ctx);
        let NodeCtx { outbox, notes, .. } = ctx;

        if let Some(search) = &node.search {
            self.convergence.push(ConvergenceRow {
                time: now,
                node: node.name.clone(),
                best_ever: search.state.best_ever,
            });
        }
        for (kind, detail) in notes {
            self.log.push(LogRecord { time: now, node: Some(node.name.clone()), kind: kind.into(), detail });
        }
        for payload in outbox {
            let tx = SignedTransaction::sign(payload, &node.keys, now);
            let arrival = self.tx_channels[i].send(now, sim.delay);
            self.tallies[i].sent += 1;
            self.seq += 1;
            self.mempool.push(PendingTx { arrival, seq: self.seq, tx });
        }
    }

    fn finish(self, genesis: ChainState) -> SimOutput {
        let mut summaries: Vec<NodeSummary> = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let mut s = NodeSummary {
                name: n.name.clone(),
                roles: n.spec.roles().into_iter().map(String::from).collect(),
                adversary: n.spec.adversary.map(|a| a.name().to_string()),
                sent: self.tallies[i].sent,
                included: self.tallies[i].included,
                rejected: self.tallies[i].rejected.clone(),
                final_balance: self.state.ledger.balance(&n.address),
                best_ever: n.search.as_ref().map(|s| s.state.best_ever),
                restarts: n.search.as_ref().map(|s| s.state.restarts),
                ..NodeSummary::default()
            };
            for row in &self.settlements {
                for p in row.payouts.iter().filter(|p| p.recipient == n.name) {
                    s.total_income += p.amount;
                    if p.reason == PayoutReason::Agent {
                        s.agent_tranche_income += p.amount;
                    }
                }
            }
            s.disqualified_in = self
                .disqualifications
                .iter()
                .filter(|d| d.node == n.name)
                .map(|d| d.tournament)
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            s.copy_detected = self
                .block_events
                .iter()
                .flatten()
                .filter(|e| matches!(e, ChainEvent::CopyDetected { copier, .. } if *copier == n.address))
                .count() as u64;
            summaries.push(s);
        }
        let report = SimReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.simulation.seed,
            tournaments: self.scenario.simulation.tournaments,
            blocks: self.blocks.len() as u64,
            final_time: self.state.time,
            final_state_hash: self.state.state_hash().to_hex(),
            halted: self.halted,
            audits_passed: self.audits,
            supply: self.state.ledger.supply(),
            settlements: self.settlements,
            disqualifications: self.disqualifications,
            nodes: summaries,
            block_stats: self.block_stats,
        };
        SimOutput {
            report,
            genesis,
            final_state: self.state,
            blocks: self.blocks,
            log: self.log,
            convergence: self.convergence,
        }
    }
}
