//! The replicated state machine: chain state, blocks, time-triggered
//! tournament sweeps, settlement, and block-log replay.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, CutoffMode, DomainConfig, ProblemType, SubmissionFeeMode};
use crate::crypto::{self, Keypair};
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::ledger::{CoinAge, Ledger, StakeId};
use crate::tournament::{
    aggregate_rankings, allocate_reward, challenger_seed, select_challengers, select_proposer, ChallengerRules,
    DisqualificationReason, Participant, Payout, PayoutReason, Phase, RewardInputs, Settlement, TournamentRecord,
};
use crate::transactions::{apply_tx, RejectReason, SignedTransaction, TxKind};
use crate::types::{hex_bytes, Address, AgentId, Hash256, Timestamp, TokenAmount, Uuid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum AgentStatus {
    Pending {
        tournament: u64,
    },
    Participating {
        tournament: u64,
    },
    /// Missed the participation cutoff; stake returned.
    NotSelected {
        tournament: u64,
    },
    Verified {
        tournament: u64,
        score: f64,
    },
    /// Completed a tournament without a consensus score.
    Unscored {
        tournament: u64,
    },
    Disqualified {
        tournament: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub owner: Address,
    pub stake: TokenAmount,
    pub stake_id: Option<StakeId>,
    pub status: AgentStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ListingKind {
    Agent,
    Data {
        #[serde(with = "hex_bytes")]
        params: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Listing {
    pub owner: Address,
    pub kind: ListingKind,
    pub scheme: String,
    pub price: TokenAmount,
    pub stake: TokenAmount,
    pub stake_id: Option<StakeId>,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subject {
    Agent(AgentId),
    Challenger(Address),
    Validator(Address),
}

/// Protocol-level happenings reported by block application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum ChainEvent {
    AgentSubmitted { tournament: u64, agent: AgentId, owner: Address, stake: TokenAmount },
    TournamentStarted { tournament: u64, participants: Vec<AgentId>, not_selected: Vec<AgentId> },
    ChallengersSelected { tournament: u64, challengers: Vec<Address> },
    ChallengerSelectionFailed { tournament: u64, reason: String },
    TournamentClosed { tournament: u64 },
    CopyDetected { tournament: u64, agent: AgentId, copier: Address, original: Address },
    Disqualified { tournament: u64, subject: Subject, reason: DisqualificationReason },
    TournamentSettled { tournament: u64, settlement: Settlement },
    ListingUpdated { listing: Uuid, owner: Address, price: TokenAmount, active: bool },
    Rented { listing: Uuid, renter: Address, owner: Address, quantity: u64, cost: TokenAmount, fee: TokenAmount },
}

/// A consensus signature by `validator` over the previous block's header hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitSig {
    pub validator: Address,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

impl Encode for CommitSig {
    fn encode(&self, e: &mut Encoder) {
        e.put(&self.validator).bytes(&self.signature);
    }
}

impl Decode for CommitSig {
    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { validator: d.get()?, signature: d.bytes()?.to_vec() })
    }
}

pub fn commit_message(prev_hash: &Hash256, height: u64) -> Vec<u8> {
    let mut e = Encoder::new();
    e.str("commit").put(prev_hash).u64(height);
    e.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub timestamp: Timestamp,
    pub proposer: Address,
    pub prev_hash: Hash256,
    pub last_commit: Vec<CommitSig>,
    pub tx_root: Hash256,
    /// State hash after executing this block.
    pub state_root: Hash256,
}

impl BlockHeader {
    pub fn hash(&self) -> Hash256 {
        Hash256::digest(&self.to_canonical_bytes())
    }

    pub fn commit_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.seq(&self.last_commit);
        e.finish()
    }
}

impl Encode for BlockHeader {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.height)
            .u64(self.timestamp)
            .put(&self.proposer)
            .put(&self.prev_hash)
            .seq(&self.last_commit)
            .put(&self.tx_root)
            .put(&self.state_root);
    }
}

impl Decode for BlockHeader {
    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            height: d.u64()?,
            timestamp: d.u64()?,
            proposer: d.get()?,
            prev_hash: d.get()?,
            last_commit: d.seq()?,
            tx_root: d.get()?,
            state_root: d.get()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub txs: Vec<SignedTransaction>,
}

impl Encode for Block {
    fn encode(&self, e: &mut Encoder) {
        e.put(&self.header).seq(&self.txs);
    }
}

impl Decode for Block {
    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { header: d.get()?, txs: d.seq()? })
    }
}

pub fn tx_root(txs: &[SignedTransaction]) -> Hash256 {
    let hashes: Vec<Hash256> = txs.iter().map(|t| t.hash()).collect();
    let parts: Vec<&[u8]> = hashes.iter().map(|h| h.as_bytes().as_slice()).collect();
    Hash256::digest_parts(&parts)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error("expected height {expected}, got {got}")]
    BadHeight { expected: u64, got: u64 },
    #[error("timestamp {got} does not advance past {prev}")]
    NonIncreasingTime { prev: Timestamp, got: Timestamp },
    #[error("previous hash does not match the chain tip")]
    BadPrevHash,
    #[error("no validator holds consensus power")]
    NoValidators,
    #[error("proposer {got:?} is not the selected proposer {expected:?}")]
    WrongProposer { expected: Address, got: Address },
    #[error("invalid or duplicate commit signature from {0:?}")]
    BadCommitSignature(Address),
    #[error("commit signatures carry {signed} of {total} power, below two thirds")]
    InsufficientCommit { signed: u128, total: u128 },
    #[error("transaction {index} rejected: {reason}")]
    TxRejected { index: usize, reason: RejectReason },
    #[error("transaction root mismatch")]
    TxRootMismatch,
    #[error("state root mismatch")]
    StateRootMismatch,
}

/// A transaction the proposer left out of its block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub tx: Hash256,
    pub kind: TxKind,
    pub sender: Address,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockOutcome {
    pub events: Vec<ChainEvent>,
    pub rejected: Vec<Rejection>,
}

/// Points in time at which the state machine acts on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Boundary {
    SignalKeyDeadline { tick: u64 },
    End { tournament: u64 },
    DatasetKeyDeadline { tournament: u64 },
    RankingDeadline { tournament: u64 },
    Start { tournament: u64 },
    ChallengerDeadline { tournament: u64 },
    SignalDeadline { tick: u64 },
}

/// Indices `j >= min_j` with `prev < j * period + offset <= now`.
fn crossings(prev: Timestamp, now: Timestamp, period: u64, offset: u64, min_j: u64) -> std::ops::RangeInclusive<u64> {
    if now < offset {
        return std::ops::RangeInclusive::new(1, 0);
    }
    let lo = if prev < offset { 0 } else { (prev - offset) / period + 1 };
    lo.max(min_j)..=(now - offset) / period
}

/// Boundaries in `(prev, now]`, in firing order.
fn boundaries(cfg: &DomainConfig, prev: Timestamp, now: Timestamp) -> Vec<(Timestamp, Boundary)> {
    let f = cfg.tournament_start_frequency;
    let mut out = Vec::new();
    for k in crossings(prev, now, f, 0, 1) {
        if k >= 2 {
            out.push((k * f, Boundary::End { tournament: k - 1 }));
        }
        out.push((k * f, Boundary::Start { tournament: k }));
    }
    for j in crossings(prev, now, f, cfg.ranking_timeout, 2) {
        out.push((j * f + cfg.ranking_timeout, Boundary::RankingDeadline { tournament: j - 1 }));
    }
    match cfg.problem_type {
        ProblemType::Dataset => {
            for k in crossings(prev, now, f, cfg.challenger_submission_timeout, 1) {
                out.push((k * f + cfg.challenger_submission_timeout, Boundary::ChallengerDeadline { tournament: k }));
            }
            for j in crossings(prev, now, f, cfg.dataset_signal_key_timeout, 2) {
                out.push((j * f + cfg.dataset_signal_key_timeout, Boundary::DatasetKeyDeadline { tournament: j - 1 }));
            }
        }
        ProblemType::RealTime => {
            let r = cfg.tick_interval();
            let first_tick = f / r;
            for j in crossings(prev, now, r, 0, first_tick) {
                if j > first_tick {
                    out.push((j * r, Boundary::SignalKeyDeadline { tick: j - 1 }));
                }
                out.push((j * r, Boundary::SignalDeadline { tick: j }));
            }
        }
    }
    out.sort();
    out
}

/// Replicated chain state. Everything here is covered by [`ChainState::state_hash`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainState {
    pub config: DomainConfig,
    pub ledger: Ledger,
    pub agents: BTreeMap<AgentId, AgentRecord>,
    pub listings: BTreeMap<Uuid, Listing>,
    pub tournaments: BTreeMap<u64, TournamentRecord>,
    pub height: u64,
    pub time: Timestamp,
    pub last_block_hash: Hash256,
    /// Inclusion times of rate-limited transactions, per sender and type.
    pub rate_counters: BTreeMap<Address, BTreeMap<TxKind, Vec<Timestamp>>>,
    /// Included transaction hashes with their submission times, kept for the
    /// time-to-live so a transaction cannot be included twice.
    pub seen_txs: BTreeMap<Hash256, Timestamp>,
}

impl ChainState {
    /// Genesis state from `(address, liquid balance, consensus bond)` allocations.
    pub fn genesis(
        config: DomainConfig,
        allocations: impl IntoIterator<Item = (Address, TokenAmount, TokenAmount)>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut state = Self {
            config,
            ledger: Ledger::genesis(allocations),
            agents: BTreeMap::new(),
            listings: BTreeMap::new(),
            tournaments: BTreeMap::new(),
            height: 0,
            time: 0,
            last_block_hash: Hash256::default(),
            rate_counters: BTreeMap::new(),
            seen_txs: BTreeMap::new(),
        };
        state.last_block_hash = Hash256::digest_parts(&[b"genesis/", state.state_hash().as_bytes()]);
        Ok(state)
    }

    pub fn state_hash(&self) -> Hash256 {
        Hash256::digest(&serde_json::to_vec(self).expect("chain state serializes"))
    }

    pub fn coin_age(&self) -> CoinAge {
        CoinAge { period: self.config.block_time, cap: self.config.coin_age_cap }
    }

    pub fn validators_at(&self, t: Timestamp) -> Vec<(Address, u128)> {
        self.ledger.validators(t, self.coin_age())
    }

    pub fn tournament(&self, k: u64) -> Option<&TournamentRecord> {
        self.tournaments.get(&k)
    }

    pub fn tournament_mut(&mut self, k: u64) -> &mut TournamentRecord {
        self.tournaments.entry(k).or_insert_with(|| TournamentRecord::new(k))
    }

    /// Blocks proposed plus transactions included by `validator` during tournament `k`.
    pub fn block_creator_points(&self, k: u64, validator: &Address) -> u64 {
        self.tournaments.get(&k).and_then(|t| t.points.get(validator)).copied().unwrap_or(0)
    }

    pub fn recent_count(&self, sender: &Address, kind: TxKind, now: Timestamp) -> usize {
        let window = self.config.spam_window();
        self.rate_counters
            .get(sender)
            .and_then(|m| m.get(&kind))
            .map_or(0, |times| times.iter().filter(|t| **t + window > now).count())
    }

    pub(crate) fn record_included(&mut self, tx: &SignedTransaction, now: Timestamp) {
        self.seen_txs.insert(tx.hash(), tx.submitted_at);
        let kind = tx.kind();
        if !kind.is_fee_bearing() {
            let window = self.config.spam_window();
            let times = self.rate_counters.entry(tx.sender).or_default().entry(kind).or_default();
            times.retain(|t| *t + window > now);
            times.push(now);
        }
    }

    /// Power-weighted proposer for a block at `timestamp` on top of the current tip.
    pub fn expected_proposer(&self, timestamp: Timestamp) -> Option<Address> {
        select_proposer(&self.validators_at(timestamp), self.last_block_hash)
    }

    fn check_header(&self, header: &BlockHeader) -> Result<(), BlockError> {
        if header.height != self.height + 1 {
            return Err(BlockError::BadHeight { expected: self.height + 1, got: header.height });
        }
        if header.timestamp <= self.time {
            return Err(BlockError::NonIncreasingTime { prev: self.time, got: header.timestamp });
        }
        if header.prev_hash != self.last_block_hash {
            return Err(BlockError::BadPrevHash);
        }
        let validators = self.validators_at(header.timestamp);
        let expected = select_proposer(&validators, self.last_block_hash).ok_or(BlockError::NoValidators)?;
        if header.proposer != expected {
            return Err(BlockError::WrongProposer { expected, got: header.proposer });
        }
        let powers: BTreeMap<Address, u128> = validators.into_iter().collect();
        let total: u128 = powers.values().sum();
        let msg = commit_message(&header.prev_hash, header.height);
        let mut signed = 0u128;
        let mut seen = BTreeSet::new();
        for sig in &header.last_commit {
            let power = powers.get(&sig.validator).copied().unwrap_or(0);
            if power == 0 || !seen.insert(sig.validator) || !crypto::verify(&sig.validator, &msg, &sig.signature) {
                return Err(BlockError::BadCommitSignature(sig.validator));
            }
            signed += power;
        }
        if signed * 3 < total * 2 {
            return Err(BlockError::InsufficientCommit { signed, total });
        }
        Ok(())
    }

    /// Verifies and applies a block received from the network or a block log.
    pub fn apply_block(&mut self, block: &Block) -> Result<BlockOutcome, BlockError> {
        let header = &block.header;
        self.check_header(header)?;
        if tx_root(&block.txs) != header.tx_root {
            return Err(BlockError::TxRootMismatch);
        }
        let mut scratch = self.clone();
        let mut outcome = BlockOutcome { events: scratch.begin_block(header), rejected: Vec::new() };
        for (index, tx) in block.txs.iter().enumerate() {
            let events = apply_tx(&mut scratch, tx, header.timestamp)
                .map_err(|reason| BlockError::TxRejected { index, reason })?;
            outcome.events.extend(events);
        }
        scratch.end_block(header.proposer, block.txs.len());
        if scratch.state_hash() != header.state_root {
            return Err(BlockError::StateRootMismatch);
        }
        scratch.last_block_hash = header.hash();
        *self = scratch;
        Ok(outcome)
    }

    /// Builds, executes and returns the next block at `timestamp`. Invalid
    /// candidates are dropped and reported. `signers` are the key pairs of the
    /// validators that are online; production fails (the chain halts) if they
    /// hold less than two thirds of the power.
    pub fn produce_block(
        &mut self,
        timestamp: Timestamp,
        candidates: impl IntoIterator<Item = SignedTransaction>,
        signers: &[&Keypair],
    ) -> Result<(Block, BlockOutcome), BlockError> {
        if timestamp <= self.time {
            return Err(BlockError::NonIncreasingTime { prev: self.time, got: timestamp });
        }
        let validators = self.validators_at(timestamp);
        let powers: BTreeMap<Address, u128> = validators.iter().copied().collect();
        let proposer = select_proposer(&validators, self.last_block_hash).ok_or(BlockError::NoValidators)?;
        let height = self.height + 1;
        let msg = commit_message(&self.last_block_hash, height);
        let mut last_commit: Vec<CommitSig> = signers
            .iter()
            .filter(|k| powers.contains_key(&k.address()))
            .map(|k| CommitSig { validator: k.address(), signature: k.sign(&msg).to_vec() })
            .collect();
        last_commit.sort_by_key(|c| c.validator);
        last_commit.dedup_by(|a, b| a.validator == b.validator);
        let signed: u128 = last_commit.iter().map(|c| powers[&c.validator]).sum();
        let total: u128 = powers.values().sum();
        if signed * 3 < total * 2 {
            return Err(BlockError::InsufficientCommit { signed, total });
        }

        let mut header = BlockHeader {
            height,
            timestamp,
            proposer,
            prev_hash: self.last_block_hash,
            last_commit,
            tx_root: Hash256::default(),
            state_root: Hash256::default(),
        };
        let mut outcome = BlockOutcome { events: self.begin_block(&header), rejected: Vec::new() };
        let mut txs = Vec::new();
        for tx in candidates {
            match apply_tx(self, &tx, timestamp) {
                Ok(events) => {
                    outcome.events.extend(events);
                    txs.push(tx);
                }
                Err(reason) => {
                    outcome.rejected.push(Rejection { tx: tx.hash(), kind: tx.kind(), sender: tx.sender, reason })
                }
            }
        }
        self.end_block(proposer, txs.len());
        header.tx_root = tx_root(&txs);
        header.state_root = self.state_hash();
        self.last_block_hash = header.hash();
        Ok((Block { header, txs }, outcome))
    }

    /// Runs every protocol boundary crossed since the previous block, in
    /// chronological order.
    pub fn begin_block(&mut self, header: &BlockHeader) -> Vec<ChainEvent> {
        let prev = self.time;
        let now = header.timestamp;
        self.time = now;
        self.height = header.height;
        let mut events = Vec::new();
        for (_, boundary) in boundaries(&self.config, prev, now) {
            match boundary {
                Boundary::Start { tournament } => self.start_tournament(tournament, header, &mut events),
                Boundary::ChallengerDeadline { tournament } => self.challenger_deadline(tournament, &mut events),
                Boundary::SignalDeadline { tick } => self.signal_deadline(tick, &mut events),
                Boundary::SignalKeyDeadline { tick } => self.signal_key_deadline(tick, &mut events),
                Boundary::End { tournament } => self.end_tournament(tournament, &mut events),
                Boundary::DatasetKeyDeadline { tournament } => self.dataset_key_deadline(tournament, &mut events),
                Boundary::RankingDeadline { tournament } => self.settle(tournament, &mut events),
            }
        }
        events
    }

    /// Credits block creator points and prunes expired replay entries.
    pub fn end_block(&mut self, proposer: Address, tx_count: usize) {
        if let Some(k) = self.config.tournament_index_at(self.time) {
            *self.tournament_mut(k).points.entry(proposer).or_default() += 1 + tx_count as u64;
        }
        let (now, ttl) = (self.time, self.config.tx_ttl);
        self.seen_txs.retain(|_, submitted| *submitted + ttl >= now);
    }

    fn start_tournament(&mut self, k: u64, header: &BlockHeader, events: &mut Vec<ChainEvent>) {
        let mut pending: Vec<(AgentId, Address, TokenAmount, Option<StakeId>)> = self
            .agents
            .iter()
            .filter(|(_, r)| r.status == AgentStatus::Pending { tournament: k })
            .map(|(id, r)| (*id, r.owner, r.stake, r.stake_id))
            .collect();
        pending.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
        let admitted = admitted_count(&pending.iter().map(|p| p.2).collect::<Vec<_>>(), &self.config);

        let (mut participants, mut not_selected) = (Vec::new(), Vec::new());
        for (i, (agent, owner, stake, stake_id)) in pending.into_iter().enumerate() {
            let stake_id = stake_id.expect("pending agent holds a stake");
            let rec = self.agents.get_mut(&agent).expect("pending agent exists");
            rec.stake_id = None;
            if i < admitted {
                self.ledger.consume_stake_into_pool(&owner, stake_id, k).expect("pending stake exists");
                rec.status = AgentStatus::Participating { tournament: k };
                participants.push((agent, owner, stake));
            } else {
                self.ledger.release_stake(&owner, stake_id).expect("pending stake exists");
                rec.status = AgentStatus::NotSelected { tournament: k };
                not_selected.push(agent);
            }
        }

        let validators = self.validators_at(self.time);
        let problem = self.config.problem_type;
        let rules = ChallengerRules::from(&self.config);
        let rec = self.tournament_mut(k);
        rec.phase = Phase::Running;
        for (agent, owner, stake) in &participants {
            rec.participants.insert(*agent, Participant { owner: *owner, stake: *stake });
        }
        for agent in &not_selected {
            rec.envelopes.remove(agent);
        }
        events.push(ChainEvent::TournamentStarted {
            tournament: k,
            participants: participants.iter().map(|p| p.0).collect(),
            not_selected,
        });

        if problem == ProblemType::Dataset {
            let searchers: BTreeSet<Address> = rec.participants.values().map(|p| p.owner).collect();
            let seed = challenger_seed(&header.prev_hash, &header.commit_bytes());
            match select_challengers(&validators, &searchers, seed, &rules) {
                Ok(challengers) => {
                    events.push(ChainEvent::ChallengersSelected {
                        tournament: k,
                        challengers: challengers.iter().map(|c| c.address).collect(),
                    });
                    rec.challengers = challengers;
                }
                Err(e) => events.push(ChainEvent::ChallengerSelectionFailed { tournament: k, reason: e.to_string() }),
            }
        }
    }

    fn challenger_deadline(&mut self, k: u64, events: &mut Vec<ChainEvent>) {
        let rec = self.tournament_mut(k);
        let missing: Vec<Address> =
            rec.challengers.iter().map(|c| c.address).filter(|a| !rec.datasets.contains_key(a)).collect();
        for c in missing {
            disqualify_challenger(rec, c, DisqualificationReason::MissedDataset, events);
        }
    }

    fn tick_tournament(&self, tick: u64) -> Option<u64> {
        self.config.tournament_index_at(tick * self.config.tick_interval())
    }

    fn signal_deadline(&mut self, tick: u64, events: &mut Vec<ChainEvent>) {
        let Some(k) = self.tick_tournament(tick) else { return };
        let rec = self.tournament_mut(k);
        let missing: Vec<AgentId> =
            rec.participants.keys().filter(|a| rec.envelope(a, tick).is_none()).copied().collect();
        for agent in missing {
            disqualify_agent(rec, agent, DisqualificationReason::MissedSignal, events);
        }
    }

    fn signal_key_deadline(&mut self, tick: u64, events: &mut Vec<ChainEvent>) {
        let Some(k) = self.tick_tournament(tick) else { return };
        let rec = self.tournament_mut(k);
        let missing: Vec<AgentId> =
            rec.participants.keys().filter(|a| rec.signal_key(a, tick).is_none()).copied().collect();
        for agent in missing {
            disqualify_agent(rec, agent, DisqualificationReason::MissedSignalKey, events);
        }
    }

    fn end_tournament(&mut self, k: u64, events: &mut Vec<ChainEvent>) {
        let validators = self.validators_at(self.time);
        let dataset = self.config.problem_type == ProblemType::Dataset;
        let rec = self.tournament_mut(k);
        rec.phase = Phase::Closing;
        rec.validators = validators.into_iter().collect();
        if dataset {
            let missing: Vec<AgentId> =
                rec.participants.keys().filter(|a| rec.envelope(a, k).is_none()).copied().collect();
            for agent in missing {
                disqualify_agent(rec, agent, DisqualificationReason::MissedSignal, events);
            }
        }
        events.push(ChainEvent::TournamentClosed { tournament: k });
    }

    fn dataset_key_deadline(&mut self, k: u64, events: &mut Vec<ChainEvent>) {
        let rec = self.tournament_mut(k);
        let missing: Vec<AgentId> =
            rec.participants.keys().filter(|a| rec.signal_key(a, k).is_none()).copied().collect();
        for agent in missing {
            disqualify_agent(rec, agent, DisqualificationReason::MissedSignalKey, events);
        }
        let silent: Vec<Address> = rec.datasets.iter().filter(|(_, d)| d.key.is_none()).map(|(a, _)| *a).collect();
        for c in silent {
            disqualify_challenger(rec, c, DisqualificationReason::MissedDatasetKey, events);
        }
    }

    fn settle(&mut self, k: u64, events: &mut Vec<ChainEvent>) {
        let cfg = self.config.clone();
        let pool = self.ledger.pool(k);
        let rec = self.tournaments.entry(k).or_insert_with(|| TournamentRecord::new(k));

        let silent: Vec<Address> = rec.validators.keys().filter(|v| !rec.rankings.contains_key(v)).copied().collect();
        for v in silent {
            rec.disqualified_validators.insert(v, DisqualificationReason::MissedRanking);
            events.push(ChainEvent::Disqualified {
                tournament: k,
                subject: Subject::Validator(v),
                reason: DisqualificationReason::MissedRanking,
            });
        }
        let dq_validators: BTreeSet<Address> = rec.disqualified_validators.keys().copied().collect();
        let dq_agents: BTreeSet<AgentId> = rec.disqualified_agents.keys().copied().collect();
        let dq_challengers: BTreeSet<Address> = rec.disqualified_challengers.keys().copied().collect();
        let consensus: Vec<(AgentId, f64)> = aggregate_rankings(&rec.rankings, &rec.validators, &dq_validators)
            .unwrap_or_default()
            .into_iter()
            .filter(|(a, _)| rec.participants.contains_key(a) && !dq_agents.contains(a))
            .collect();
        let owners: BTreeMap<AgentId, Address> = rec.participants.iter().map(|(a, p)| (*a, p.owner)).collect();

        let mut payouts: Vec<Payout> = Vec::new();
        let mut remaining = pool;
        if cfg.submission_fee_mode == SubmissionFeeMode::RefundNonWinners {
            let winners: BTreeSet<AgentId> = consensus.iter().take(consensus.len().div_ceil(2)).map(|c| c.0).collect();
            for (agent, p) in &rec.participants {
                if winners.contains(agent) || dq_agents.contains(agent) {
                    continue;
                }
                let amount = p.stake.min(remaining);
                if amount > 0 {
                    remaining -= amount;
                    payouts.push(Payout {
                        address: p.owner,
                        amount,
                        reason: PayoutReason::Refund,
                        agent: Some(*agent),
                    });
                }
            }
        }
        let challenger_powers: BTreeMap<Address, u128> = rec.challengers.iter().map(|c| (c.address, c.power)).collect();
        let allocation = allocate_reward(&RewardInputs {
            pool: remaining,
            problem: cfg.problem_type,
            ranking: &consensus,
            agent_owners: &owners,
            disqualified_agents: &dq_agents,
            validator_points: &rec.points,
            disqualified_validators: &dq_validators,
            challenger_powers: &challenger_powers,
            disqualified_challengers: &dq_challengers,
            maintenance: cfg.maintenance_address,
        });
        payouts.extend(allocation.payouts);

        let scores: BTreeMap<AgentId, f64> = consensus.iter().copied().collect();
        for agent in rec.participants.keys() {
            let status = if dq_agents.contains(agent) {
                AgentStatus::Disqualified { tournament: k }
            } else if let Some(score) = scores.get(agent) {
                AgentStatus::Verified { tournament: k, score: *score }
            } else {
                AgentStatus::Unscored { tournament: k }
            };
            if let Some(a) = self.agents.get_mut(agent) {
                a.status = status;
            }
        }
        rec.phase = Phase::Settled;
        rec.prune();
        let settlement = Settlement { pool, consensus, payouts, rollover: allocation.rollover };
        rec.settlement = Some(settlement.clone());

        for p in &settlement.payouts {
            self.ledger.payout_from_pool(k, &p.address, p.amount).expect("payouts never exceed the pool");
        }
        self.ledger.roll_over(k, k + 1, settlement.rollover).expect("rollover is what remains of the pool");
        debug_assert_eq!(self.ledger.pool(k), 0);
        events.push(ChainEvent::TournamentSettled { tournament: k, settlement });
    }
}

/// Number of stake-sorted pending agents admitted by the cutoff rule. Agents
/// tied with the last admitted stake are admitted too.
fn admitted_count(stakes_desc: &[TokenAmount], cfg: &DomainConfig) -> usize {
    let n = stakes_desc.len();
    if n == 0 {
        return 0;
    }
    let cutoff = cfg.tournament_cutoff as u128;
    let base = match cfg.cutoff_mode {
        CutoffMode::AgentCount => ((n as u128 * cutoff).div_ceil(100) as usize).clamp(1, n),
        CutoffMode::StakeShare => {
            let total: u128 = stakes_desc.iter().map(|s| *s as u128).sum();
            let mut acc = 0u128;
            let mut count = n;
            for (i, s) in stakes_desc.iter().enumerate() {
                acc += *s as u128;
                if acc * 100 >= cutoff * total {
                    count = i + 1;
                    break;
                }
            }
            count
        }
    };
    let last = stakes_desc[base - 1];
    base + stakes_desc[base..].iter().take_while(|s| **s == last).count()
}

fn disqualify_agent(
    rec: &mut TournamentRecord,
    agent: AgentId,
    reason: DisqualificationReason,
    events: &mut Vec<ChainEvent>,
) {
    if rec.disqualify_agent(agent, reason) {
        events.push(ChainEvent::Disqualified { tournament: rec.index, subject: Subject::Agent(agent), reason });
    }
}

fn disqualify_challenger(
    rec: &mut TournamentRecord,
    challenger: Address,
    reason: DisqualificationReason,
    events: &mut Vec<ChainEvent>,
) {
    if let std::collections::btree_map::Entry::Vacant(e) = rec.disqualified_challengers.entry(challenger) {
        e.insert(reason);
        events.push(ChainEvent::Disqualified {
            tournament: rec.index,
            subject: Subject::Challenger(challenger),
            reason,
        });
    }
}

/// Appends one block to a block log: `u64 BE length || canonical block`.
pub fn write_block(out: &mut impl Write, block: &Block) -> io::Result<()> {
    let bytes = block.to_canonical_bytes();
    out.write_all(&(bytes.len() as u64).to_be_bytes())?;
    out.write_all(&bytes)
}

#[derive(Debug, Error)]
pub enum BlockLogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("block {index} is malformed: {error}")]
    Decode { index: usize, error: DecodeError },
}

pub fn read_block_log(input: &mut impl Read) -> Result<Vec<Block>, BlockLogError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut blocks = Vec::new();
    let mut rest = bytes.as_slice();
    while !rest.is_empty() {
        let index = blocks.len();
        let err = |error| BlockLogError::Decode { index, error };
        let len_bytes: [u8; 8] = rest.get(..8).ok_or(err(DecodeError::Truncated(0)))?.try_into().expect("8 bytes");
        let len = u64::from_be_bytes(len_bytes) as usize;
        let body = rest
            .get(8..8usize.saturating_add(len))
            .ok_or(err(DecodeError::BadLength { offset: 0, len: len as u64 }))?;
        blocks.push(Block::from_canonical_bytes(body).map_err(err)?);
        rest = &rest[8 + len..];
    }
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("replay diverged at height {height}: {error}")]
pub struct ReplayError {
    pub height: u64,
    pub error: BlockError,
}

/// Applies `blocks` to `genesis`, checking every header and state root.
/// Returns the state roots by height.
pub fn replay(mut state: ChainState, blocks: &[Block]) -> Result<(ChainState, Vec<Hash256>), ReplayError> {
    let mut roots = Vec::with_capacity(blocks.len());
    for block in blocks {
        state.apply_block(block).map_err(|error| ReplayError { height: state.height + 1, error })?;
        roots.push(block.header.state_root);
    }
    Ok((state, roots))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_rt() -> DomainConfig {
        DomainConfig {
            tournament_start_frequency: 10_000,
            real_time_frequency: Some(5_000),
            challenger_submission_timeout: 2_000,
            dataset_signal_key_timeout: 2_000,
            ranking_timeout: 4_000,
            ..DomainConfig::real_time_default()
        }
    }

    #[test]
    fn boundary_order_at_shared_timestamps() {
        let b = boundaries(&cfg_rt(), 19_000, 20_000);
        let kinds: Vec<Boundary> = b.into_iter().map(|(_, b)| b).collect();
        assert_eq!(
            kinds,
            vec![
                Boundary::SignalKeyDeadline { tick: 3 },
                Boundary::End { tournament: 1 },
                Boundary::Start { tournament: 2 },
                Boundary::SignalDeadline { tick: 4 },
            ]
        );
    }

    #[test]
    fn skipped_boundaries_fire_chronologically() {
        let b = boundaries(&cfg_rt(), 0, 25_000);
        let times: Vec<Timestamp> = b.iter().map(|(t, _)| *t).collect();
        let mut sorted = times.clone();
        sorted.sort();
        assert_eq!(times, sorted);
        assert!(b.contains(&(24_000, Boundary::RankingDeadline { tournament: 1 })));
        assert!(!b.iter().any(|(_, x)| matches!(x, Boundary::SignalDeadline { tick: 1 })));
    }

    #[test]
    fn cutoff_includes_ties() {
        let mut cfg = cfg_rt();
        cfg.tournament_cutoff = 50;
        assert_eq!(admitted_count(&[9, 7, 7, 7, 1, 1], &cfg), 4);
        assert_eq!(admitted_count(&[9, 8], &cfg), 1);
        cfg.cutoff_mode = CutoffMode::StakeShare;
        assert_eq!(admitted_count(&[50, 30, 20], &cfg), 1);
        cfg.tournament_cutoff = 100;
        assert_eq!(admitted_count(&[50, 30, 20], &cfg), 3);
        assert_eq!(admitted_count(&[], &cfg), 0);
    }

    fn genesis_one() -> (ChainState, Keypair) {
        let k = Keypair::from_name("v");
        let s = ChainState::genesis(cfg_rt(), [(k.address(), 1_000, 100)]).unwrap();
        (s, k)
    }

    #[test]
    fn single_validator_proposes_and_replays() {
        let (mut s, k) = genesis_one();
        let start = s.clone();
        let mut blocks = Vec::new();
        for h in 1..=30u64 {
            let (b, _) = s.produce_block(h * 1_000, Vec::new(), &[&k]).unwrap();
            assert_eq!(b.header.proposer, k.address());
            blocks.push(b);
        }
        let (replayed, roots) = replay(start, &blocks).unwrap();
        assert_eq!(replayed.state_hash(), s.state_hash());
        assert_eq!(roots.len(), 30);
    }

    #[test]
    fn block_log_round_trip_and_corruption() {
        let (mut s, k) = genesis_one();
        let start = s.clone();
        let mut log = Vec::new();
        for h in 1..=5u64 {
            let (b, _) = s.produce_block(h * 1_000, Vec::new(), &[&k]).unwrap();
            write_block(&mut log, &b).unwrap();
        }
        let blocks = read_block_log(&mut log.as_slice()).unwrap();
        assert_eq!(blocks.len(), 5);
        replay(start.clone(), &blocks).unwrap();

        let mut tampered = blocks.clone();
        tampered[2].header.timestamp += 1;
        let err = replay(start, &tampered).unwrap_err();
        assert_eq!(err.height, 3);
    }

    #[test]
    fn halts_without_two_thirds() {
        let a = Keypair::from_name("a");
        let b = Keypair::from_name("b");
        let mut s = ChainState::genesis(cfg_rt(), [(a.address(), 0, 2), (b.address(), 0, 2)]).unwrap();
        assert!(matches!(s.produce_block(1_000, Vec::new(), &[&a]), Err(BlockError::InsufficientCommit { .. })));
        assert!(s.produce_block(1_000, Vec::new(), &[&a, &b]).is_ok());
    }

    #[test]
    fn state_hash_is_stable_and_sensitive() {
        let (s1, _) = genesis_one();
        let (s2, _) = genesis_one();
        assert_eq!(s1.state_hash(), s2.state_hash());
        let mut s3 = s1.clone();
        s3.height = 7;
        assert_ne!(s1.state_hash(), s3.state_hash());
    }
}
