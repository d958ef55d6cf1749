//! The nine transaction payloads, the signed wrapper, and the validity rules
//! that decide whether a transaction may enter a block.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commit_reveal::{open_signal, DatasetCommitment, OpenError, SignalEnvelope};
use crate::config::{ProblemType, RentFeeSink};
use crate::crypto::{self, Keypair};
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::ledger::StakePurpose;
use crate::scoring::codec;
use crate::state::{AgentRecord, AgentStatus, ChainEvent, ChainState, Listing, ListingKind, Subject};
use crate::tournament::{ChallengerDataset, DisqualificationReason, TournamentRecord};
use crate::types::{hex_bytes, Address, AgentId, BlobId, Hash256, SymmetricKey, Timestamp, TokenAmount, Uuid};

/// Longest accepted pricing scheme string, in bytes.
pub const MAX_SCHEME_BYTES: usize = 64;
/// Longest accepted data listing parameter blob, in bytes.
pub const MAX_PARAMS_BYTES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxKind {
    SubmitAgent,
    PublishDataset,
    SubmitSignal,
    PublishDatasetDecryptionKey,
    PublishSignalDecryptionKey,
    PublishTournamentRanking,
    PublishAgentPrice,
    PublishDataPrice,
    Rent,
}

impl TxKind {
    pub const ALL: [TxKind; 9] = [
        TxKind::SubmitAgent,
        TxKind::PublishDataset,
        TxKind::SubmitSignal,
        TxKind::PublishDatasetDecryptionKey,
        TxKind::PublishSignalDecryptionKey,
        TxKind::PublishTournamentRanking,
        TxKind::PublishAgentPrice,
        TxKind::PublishDataPrice,
        TxKind::Rent,
    ];

    pub fn tag(self) -> u64 {
        self as u64 + 1
    }

    pub fn from_tag(tag: u64) -> Option<Self> {
        Self::ALL.get(tag.checked_sub(1)? as usize).copied()
    }

    /// Types that move tokens to someone else. All others are free and
    /// therefore rate-limited.
    pub fn is_fee_bearing(self) -> bool {
        matches!(self, TxKind::SubmitAgent | TxKind::Rent)
    }

    pub fn name(self) -> &'static str {
        match self {
            TxKind::SubmitAgent => "submit_agent",
            TxKind::PublishDataset => "publish_dataset",
            TxKind::SubmitSignal => "submit_signal",
            TxKind::PublishDatasetDecryptionKey => "publish_dataset_decryption_key",
            TxKind::PublishSignalDecryptionKey => "publish_signal_decryption_key",
            TxKind::PublishTournamentRanking => "publish_tournament_ranking",
            TxKind::PublishAgentPrice => "publish_agent_price",
            TxKind::PublishDataPrice => "publish_data_price",
            TxKind::Rent => "rent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TxPayload {
    SubmitAgent {
        agent: AgentId,
        stake: TokenAmount,
    },
    PublishDataset {
        inputs_blob: BlobId,
        inputs_hash: Hash256,
        outputs_blob: BlobId,
        outputs_hash: Hash256,
    },
    SubmitSignal {
        agent: AgentId,
        envelope: SignalEnvelope,
        tick: Option<u64>,
    },
    PublishDatasetDecryptionKey {
        key: SymmetricKey,
    },
    PublishSignalDecryptionKey {
        agent: AgentId,
        key: SymmetricKey,
        tick: Option<u64>,
    },
    PublishTournamentRanking {
        ranking: Vec<(AgentId, f64)>,
    },
    PublishAgentPrice {
        agent: AgentId,
        scheme: String,
        price: TokenAmount,
        stake: TokenAmount,
    },
    PublishDataPrice {
        data: Uuid,
        #[serde(with = "hex_bytes")]
        params: Vec<u8>,
        scheme: String,
        price: TokenAmount,
        stake: TokenAmount,
    },
    Rent {
        listing: Uuid,
        quantity: u64,
    },
}

impl TxPayload {
    pub fn kind(&self) -> TxKind {
        match self {
            TxPayload::SubmitAgent { .. } => TxKind::SubmitAgent,
            TxPayload::PublishDataset { .. } => TxKind::PublishDataset,
            TxPayload::SubmitSignal { .. } => TxKind::SubmitSignal,
            TxPayload::PublishDatasetDecryptionKey { .. } => TxKind::PublishDatasetDecryptionKey,
            TxPayload::PublishSignalDecryptionKey { .. } => TxKind::PublishSignalDecryptionKey,
            TxPayload::PublishTournamentRanking { .. } => TxKind::PublishTournamentRanking,
            TxPayload::PublishAgentPrice { .. } => TxKind::PublishAgentPrice,
            TxPayload::PublishDataPrice { .. } => TxKind::PublishDataPrice,
            TxPayload::Rent { .. } => TxKind::Rent,
        }
    }
}

impl Encode for TxPayload {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.kind().tag());
        match self {
            TxPayload::SubmitAgent { agent, stake } => {
                e.put(agent).u64(*stake);
            }
            TxPayload::PublishDataset { inputs_blob, inputs_hash, outputs_blob, outputs_hash } => {
                e.put(inputs_blob).put(inputs_hash).put(outputs_blob).put(outputs_hash);
            }
            TxPayload::SubmitSignal { agent, envelope, tick } => {
                e.put(agent).put(envelope).option(tick);
            }
            TxPayload::PublishDatasetDecryptionKey { key } => {
                e.put(key);
            }
            TxPayload::PublishSignalDecryptionKey { agent, key, tick } => {
                e.put(agent).put(key).option(tick);
            }
            TxPayload::PublishTournamentRanking { ranking } => {
                e.seq(ranking);
            }
            TxPayload::PublishAgentPrice { agent, scheme, price, stake } => {
                e.put(agent).str(scheme).u64(*price).u64(*stake);
            }
            TxPayload::PublishDataPrice { data, params, scheme, price, stake } => {
                e.put(data).bytes(params).str(scheme).u64(*price).u64(*stake);
            }
            TxPayload::Rent { listing, quantity } => {
                e.put(listing).u64(*quantity);
            }
        }
    }
}

impl Decode for TxPayload {
    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tag = d.u64()?;
        let kind = TxKind::from_tag(tag).ok_or(DecodeError::UnknownTag { what: "transaction payload", tag })?;
        Ok(match kind {
            TxKind::SubmitAgent => TxPayload::SubmitAgent { agent: d.get()?, stake: d.u64()? },
            TxKind::PublishDataset => TxPayload::PublishDataset {
                inputs_blob: d.get()?,
                inputs_hash: d.get()?,
                outputs_blob: d.get()?,
                outputs_hash: d.get()?,
            },
            TxKind::SubmitSignal => TxPayload::SubmitSignal { agent: d.get()?, envelope: d.get()?, tick: d.option()? },
            TxKind::PublishDatasetDecryptionKey => TxPayload::PublishDatasetDecryptionKey { key: d.get()? },
            TxKind::PublishSignalDecryptionKey => {
                TxPayload::PublishSignalDecryptionKey { agent: d.get()?, key: d.get()?, tick: d.option()? }
            }
            TxKind::PublishTournamentRanking => TxPayload::PublishTournamentRanking { ranking: d.seq()? },
            TxKind::PublishAgentPrice => {
                TxPayload::PublishAgentPrice { agent: d.get()?, scheme: d.string()?, price: d.u64()?, stake: d.u64()? }
            }
            TxKind::PublishDataPrice => TxPayload::PublishDataPrice {
                data: d.get()?,
                params: d.bytes()?.to_vec(),
                scheme: d.string()?,
                price: d.u64()?,
                stake: d.u64()?,
            },
            TxKind::Rent => TxPayload::Rent { listing: d.get()?, quantity: d.u64()? },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedTransaction {
    pub payload: TxPayload,
    pub sender: Address,
    pub submitted_at: Timestamp,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

/// Bytes covered by a transaction signature: payload, sender, submission time.
pub fn signing_bytes(payload: &TxPayload, sender: &Address, submitted_at: Timestamp) -> Vec<u8> {
    let mut e = Encoder::new();
    e.put(payload).put(sender).u64(submitted_at);
    e.finish()
}

impl SignedTransaction {
    pub fn sign(payload: TxPayload, keys: &Keypair, submitted_at: Timestamp) -> Self {
        let sender = keys.address();
        let signature = keys.sign(&signing_bytes(&payload, &sender, submitted_at)).to_vec();
        Self { payload, sender, submitted_at, signature }
    }

    pub fn verify_signature(&self) -> bool {
        crypto::verify(&self.sender, &signing_bytes(&self.payload, &self.sender, self.submitted_at), &self.signature)
    }

    pub fn hash(&self) -> Hash256 {
        Hash256::digest(&self.to_canonical_bytes())
    }

    pub fn kind(&self) -> TxKind {
        self.payload.kind()
    }
}

impl Encode for SignedTransaction {
    fn encode(&self, e: &mut Encoder) {
        e.put(&self.payload).put(&self.sender).u64(self.submitted_at).bytes(&self.signature);
    }
}

impl Decode for SignedTransaction {
    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { payload: d.get()?, sender: d.get()?, submitted_at: d.u64()?, signature: d.bytes()?.to_vec() })
    }
}

/// Why a transaction was refused. [`RejectReason::code`] gives a stable
/// machine-readable identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Error, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    #[error("signature does not verify")]
    BadSignature,
    #[error("submitted after the block timestamp")]
    FromFuture,
    #[error("older than the transaction time-to-live")]
    Expired,
    #[error("already included")]
    Duplicate,
    #[error("rate limit for this transaction type exceeded")]
    RateLimited,
    #[error("not allowed in this problem type")]
    WrongProblemType,
    #[error("stake below the minimum")]
    StakeTooLow,
    #[error("insufficient funds")]
    InsufficientFunds,
    #[error("agent id already registered")]
    AgentExists,
    #[error("unknown agent")]
    UnknownAgent,
    #[error("sender does not own this object")]
    NotOwner,
    #[error("agent is not participating in this tournament")]
    NotParticipating,
    #[error("agent is disqualified for this tournament")]
    Disqualified,
    #[error("sender is not a challenger of this tournament")]
    NotChallenger,
    #[error("sender is not a validator of this tournament")]
    NotValidator,
    #[error("outside the submission window")]
    OutsideWindow,
    #[error("tick id missing or not expected")]
    BadTick,
    #[error("already submitted")]
    AlreadySubmitted,
    #[error("envelope does not match its commitment, agent or context")]
    BadEnvelope,
    #[error("signal exceeds the size limit")]
    SignalTooLarge,
    #[error("no envelope to reveal")]
    NothingToReveal,
    #[error("revealed key does not open the committed ciphertext")]
    DecryptFailure,
    #[error("ranking malformed")]
    InvalidRanking,
    #[error("agent has not completed a tournament")]
    NotVerified,
    #[error("unknown listing")]
    UnknownListing,
    #[error("listing is not active")]
    ListingInactive,
    #[error("listing id belongs to another kind of listing")]
    WrongListingKind,
    #[error("field too long")]
    FieldTooLong,
    #[error("quantity must be at least 1")]
    ZeroQuantity,
    #[error("amount overflow")]
    Overflow,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::BadSignature => "bad-signature",
            RejectReason::FromFuture => "from-future",
            RejectReason::Expired => "expired",
            RejectReason::Duplicate => "duplicate",
            RejectReason::RateLimited => "rate-limited",
            RejectReason::WrongProblemType => "wrong-problem-type",
            RejectReason::StakeTooLow => "stake-too-low",
            RejectReason::InsufficientFunds => "insufficient-funds",
            RejectReason::AgentExists => "agent-exists",
            RejectReason::UnknownAgent => "unknown-agent",
            RejectReason::NotOwner => "not-owner",
            RejectReason::NotParticipating => "not-participating",
            RejectReason::Disqualified => "disqualified",
            RejectReason::NotChallenger => "not-challenger",
            RejectReason::NotValidator => "not-validator",
            RejectReason::OutsideWindow => "outside-window",
            RejectReason::BadTick => "bad-tick",
            RejectReason::AlreadySubmitted => "already-submitted",
            RejectReason::BadEnvelope => "bad-envelope",
            RejectReason::SignalTooLarge => "signal-too-large",
            RejectReason::NothingToReveal => "nothing-to-reveal",
            RejectReason::DecryptFailure => "decrypt-failure",
            RejectReason::InvalidRanking => "invalid-ranking",
            RejectReason::NotVerified => "not-verified",
            RejectReason::UnknownListing => "unknown-listing",
            RejectReason::ListingInactive => "listing-inactive",
            RejectReason::WrongListingKind => "wrong-listing-kind",
            RejectReason::FieldTooLong => "field-too-long",
            RejectReason::ZeroQuantity => "zero-quantity",
            RejectReason::Overflow => "overflow",
        }
    }
}

/// What revealing a signal key showed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevealOutcome {
    Valid,
    Copied { original: Address },
    Malformed,
}

/// The checked effect of a valid transaction, computed by [`validate_tx`]
/// and executed by [`apply_tx`].
#[derive(Debug, Clone, PartialEq)]
pub enum TxPlan {
    SubmitAgent { tournament: u64 },
    PublishDataset { tournament: u64 },
    SubmitSignal { tournament: u64, slot: u64 },
    DatasetKey { tournament: u64 },
    SignalKey { tournament: u64, slot: u64, outcome: RevealOutcome },
    Ranking { tournament: u64 },
    Listing,
    Delist,
    Rent { cost: TokenAmount },
}

/// Tournament whose post-end window of length `len` contains `t`.
fn closing_tournament(state: &ChainState, t: Timestamp, len: u64) -> Option<u64> {
    let k = state.config.tournament_index_at(t)?;
    (k >= 2 && t - state.config.tournament_start(k) < len).then_some(k - 1)
}

fn record(state: &ChainState, k: u64) -> Result<&TournamentRecord, RejectReason> {
    state.tournaments.get(&k).ok_or(RejectReason::OutsideWindow)
}

fn owned_agent<'a>(state: &'a ChainState, agent: &AgentId, sender: &Address) -> Result<&'a AgentRecord, RejectReason> {
    let rec = state.agents.get(agent).ok_or(RejectReason::UnknownAgent)?;
    if rec.owner != *sender {
        return Err(RejectReason::NotOwner);
    }
    Ok(rec)
}

/// Checks a transaction against the state for inclusion in a block with
/// timestamp `now`. Pure: the same inputs always give the same answer.
pub fn validate_tx(state: &ChainState, tx: &SignedTransaction, now: Timestamp) -> Result<TxPlan, RejectReason> {
    let cfg = &state.config;
    if !tx.verify_signature() {
        return Err(RejectReason::BadSignature);
    }
    if tx.submitted_at > now {
        return Err(RejectReason::FromFuture);
    }
    if now - tx.submitted_at > cfg.tx_ttl {
        return Err(RejectReason::Expired);
    }
    if state.seen_txs.contains_key(&tx.hash()) {
        return Err(RejectReason::Duplicate);
    }
    let kind = tx.kind();
    if !kind.is_fee_bearing() && state.recent_count(&tx.sender, kind, now) >= cfg.spam_rate_limit as usize {
        return Err(RejectReason::RateLimited);
    }
    let sender = &tx.sender;
    let dataset = cfg.problem_type == ProblemType::Dataset;

    match &tx.payload {
        TxPayload::SubmitAgent { agent, stake } => {
            if *stake < cfg.min_agent_submit_stake || *stake == 0 {
                return Err(RejectReason::StakeTooLow);
            }
            if state.agents.contains_key(agent) {
                return Err(RejectReason::AgentExists);
            }
            if state.ledger.balance(sender) < *stake {
                return Err(RejectReason::InsufficientFunds);
            }
            let tournament = cfg.tournament_index_at(now).map_or(1, |k| k + 1);
            Ok(TxPlan::SubmitAgent { tournament })
        }

        TxPayload::PublishDataset { .. } => {
            if !dataset {
                return Err(RejectReason::WrongProblemType);
            }
            let k = cfg.tournament_index_at(now).ok_or(RejectReason::OutsideWindow)?;
            if now >= cfg.challenger_deadline(k) {
                return Err(RejectReason::OutsideWindow);
            }
            let rec = record(state, k)?;
            if !rec.is_challenger(sender) {
                return Err(RejectReason::NotChallenger);
            }
            if rec.datasets.contains_key(sender) {
                return Err(RejectReason::AlreadySubmitted);
            }
            Ok(TxPlan::PublishDataset { tournament: k })
        }

        TxPayload::SubmitSignal { agent, envelope, tick } => {
            let agent_rec = owned_agent(state, agent, sender)?;
            let (k, slot) = if dataset {
                if tick.is_some() {
                    return Err(RejectReason::BadTick);
                }
                let k = cfg.tournament_index_at(now).ok_or(RejectReason::OutsideWindow)?;
                if agent_rec.status != (AgentStatus::Participating { tournament: k }) {
                    return Err(RejectReason::NotParticipating);
                }
                (k, k)
            } else {
                let m = tick.ok_or(RejectReason::BadTick)?;
                let rtf = cfg.tick_interval();
                let t_m = m.checked_mul(rtf).ok_or(RejectReason::BadTick)?;
                if now >= t_m || now + rtf < t_m {
                    return Err(RejectReason::OutsideWindow);
                }
                let k = cfg.tournament_index_at(t_m).ok_or(RejectReason::BadTick)?;
                let admitted = match agent_rec.status {
                    AgentStatus::Participating { tournament } => tournament == k,
                    // The first tick's window opens before the cutoff runs.
                    AgentStatus::Pending { tournament } => tournament == k && now < cfg.tournament_start(k),
                    _ => false,
                };
                if !admitted {
                    return Err(RejectReason::NotParticipating);
                }
                (k, m)
            };
            if let Some(rec) = state.tournaments.get(&k) {
                if rec.disqualified_agents.contains_key(agent) {
                    return Err(RejectReason::Disqualified);
                }
                if rec.envelope(agent, slot).is_some() {
                    return Err(RejectReason::AlreadySubmitted);
                }
            }
            let context = if dataset {
                crate::commit_reveal::EnvelopeContext::Tournament(k)
            } else {
                crate::commit_reveal::EnvelopeContext::Tick(slot)
            };
            if envelope.agent != *agent || envelope.context != context || !envelope.commitment_matches() {
                return Err(RejectReason::BadEnvelope);
            }
            if envelope.ciphertext.len() as u64 > cfg.max_signal_bytes {
                return Err(RejectReason::SignalTooLarge);
            }
            Ok(TxPlan::SubmitSignal { tournament: k, slot })
        }

        TxPayload::PublishDatasetDecryptionKey { .. } => {
            if !dataset {
                return Err(RejectReason::WrongProblemType);
            }
            let k =
                closing_tournament(state, now, cfg.dataset_signal_key_timeout).ok_or(RejectReason::OutsideWindow)?;
            let rec = record(state, k)?;
            if !rec.is_challenger(sender) {
                return Err(RejectReason::NotChallenger);
            }
            match rec.datasets.get(sender) {
                None => Err(RejectReason::NothingToReveal),
                Some(d) if d.key.is_some() => Err(RejectReason::AlreadySubmitted),
                Some(_) => Ok(TxPlan::DatasetKey { tournament: k }),
            }
        }

        TxPayload::PublishSignalDecryptionKey { agent, key, tick } => {
            owned_agent(state, agent, sender)?;
            let (k, slot) = if dataset {
                if tick.is_some() {
                    return Err(RejectReason::BadTick);
                }
                let k = closing_tournament(state, now, cfg.dataset_signal_key_timeout)
                    .ok_or(RejectReason::OutsideWindow)?;
                (k, k)
            } else {
                let m = tick.ok_or(RejectReason::BadTick)?;
                let rtf = cfg.tick_interval();
                let t_m = m.checked_mul(rtf).ok_or(RejectReason::BadTick)?;
                if now < t_m || now >= t_m + rtf {
                    return Err(RejectReason::OutsideWindow);
                }
                (cfg.tournament_index_at(t_m).ok_or(RejectReason::BadTick)?, m)
            };
            let rec = record(state, k)?;
            let envelope = rec.envelope(agent, slot).ok_or(RejectReason::NothingToReveal)?;
            if rec.signal_key(agent, slot).is_some() {
                return Err(RejectReason::AlreadySubmitted);
            }
            let outcome = match open_signal(envelope, key, sender) {
                Err(OpenError::DecryptFailure) => return Err(RejectReason::DecryptFailure),
                Err(OpenError::CopyDetected { embedded }) => RevealOutcome::Copied { original: embedded },
                Err(OpenError::Malformed) => RevealOutcome::Malformed,
                Ok(signal) => {
                    let well_formed = if dataset {
                        codec::decode_dataset_answers(&signal).is_some()
                    } else {
                        codec::decode_prediction(&signal, cfg.signal_dimension as usize).is_some()
                    };
                    if well_formed {
                        RevealOutcome::Valid
                    } else {
                        RevealOutcome::Malformed
                    }
                }
            };
            Ok(TxPlan::SignalKey { tournament: k, slot, outcome })
        }

        TxPayload::PublishTournamentRanking { ranking } => {
            let k = closing_tournament(state, now, cfg.ranking_timeout).ok_or(RejectReason::OutsideWindow)?;
            let rec = record(state, k)?;
            if !rec.validators.contains_key(sender) {
                return Err(RejectReason::NotValidator);
            }
            if rec.rankings.contains_key(sender) {
                return Err(RejectReason::AlreadySubmitted);
            }
            let mut seen = BTreeSet::new();
            for (agent, score) in ranking {
                if !score.is_finite() || *score < 0.0 || !rec.participants.contains_key(agent) || !seen.insert(*agent) {
                    return Err(RejectReason::InvalidRanking);
                }
            }
            Ok(TxPlan::Ranking { tournament: k })
        }

        TxPayload::PublishAgentPrice { agent, scheme, stake, .. } => {
            let rec = owned_agent(state, agent, sender)?;
            if !matches!(rec.status, AgentStatus::Verified { .. }) {
                return Err(RejectReason::NotVerified);
            }
            check_listing(state, sender, agent, scheme, *stake, false)
        }

        TxPayload::PublishDataPrice { data, params, scheme, stake, .. } => {
            if params.len() > MAX_PARAMS_BYTES {
                return Err(RejectReason::FieldTooLong);
            }
            check_listing(state, sender, data, scheme, *stake, true)
        }

        TxPayload::Rent { listing, quantity } => {
            if *quantity == 0 {
                return Err(RejectReason::ZeroQuantity);
            }
            let l = state.listings.get(listing).ok_or(RejectReason::UnknownListing)?;
            if !l.active {
                return Err(RejectReason::ListingInactive);
            }
            let cost = l.price.checked_mul(*quantity).ok_or(RejectReason::Overflow)?;
            let total = cost.checked_add(cfg.rent_fee).ok_or(RejectReason::Overflow)?;
            if state.ledger.balance(sender) < total {
                return Err(RejectReason::InsufficientFunds);
            }
            Ok(TxPlan::Rent { cost })
        }
    }
}

fn check_listing(
    state: &ChainState,
    sender: &Address,
    id: &Uuid,
    scheme: &str,
    stake: TokenAmount,
    data: bool,
) -> Result<TxPlan, RejectReason> {
    if scheme.len() > MAX_SCHEME_BYTES {
        return Err(RejectReason::FieldTooLong);
    }
    let existing = state.listings.get(id);
    if let Some(l) = existing {
        if l.owner != *sender {
            return Err(RejectReason::NotOwner);
        }
        if matches!(l.kind, ListingKind::Data { .. }) != data {
            return Err(RejectReason::WrongListingKind);
        }
    }
    if stake == 0 {
        return match existing {
            None => Err(RejectReason::UnknownListing),
            Some(l) if !l.active => Err(RejectReason::ListingInactive),
            Some(_) => Ok(TxPlan::Delist),
        };
    }
    if stake < state.config.min_price_publish_stake {
        return Err(RejectReason::StakeTooLow);
    }
    let refundable = existing.map_or(0, |l| l.stake);
    if state.ledger.balance(sender) + refundable < stake {
        return Err(RejectReason::InsufficientFunds);
    }
    Ok(TxPlan::Listing)
}

/// Validates and, if valid, applies a transaction atomically. Returns the
/// protocol events it caused.
pub fn apply_tx(
    state: &mut ChainState,
    tx: &SignedTransaction,
    now: Timestamp,
) -> Result<Vec<ChainEvent>, RejectReason> {
    let plan = validate_tx(state, tx, now)?;
    let mut events = Vec::new();
    let sender = tx.sender;
    let ledger_ok = "validated transaction has the funds it needs";

    match (&tx.payload, plan) {
        (TxPayload::SubmitAgent { agent, stake }, TxPlan::SubmitAgent { tournament }) => {
            let stake_id =
                state.ledger.stake(&sender, *stake, StakePurpose::AgentSubmission(*agent), now).expect(ledger_ok);
            state.agents.insert(
                *agent,
                AgentRecord {
                    owner: sender,
                    stake: *stake,
                    stake_id: Some(stake_id),
                    status: AgentStatus::Pending { tournament },
                },
            );
            events.push(ChainEvent::AgentSubmitted { tournament, agent: *agent, owner: sender, stake: *stake });
        }
        (
            TxPayload::PublishDataset { inputs_blob, inputs_hash, outputs_blob, outputs_hash },
            TxPlan::PublishDataset { tournament },
        ) => {
            let commitment = DatasetCommitment {
                inputs_blob: *inputs_blob,
                inputs_hash: *inputs_hash,
                outputs_blob: *outputs_blob,
                outputs_hash: *outputs_hash,
            };
            state.tournament_mut(tournament).datasets.insert(sender, ChallengerDataset { commitment, key: None });
        }
        (TxPayload::SubmitSignal { agent, envelope, .. }, TxPlan::SubmitSignal { tournament, slot }) => {
            state.tournament_mut(tournament).envelopes.entry(*agent).or_default().insert(slot, envelope.clone());
        }
        (TxPayload::PublishDatasetDecryptionKey { key }, TxPlan::DatasetKey { tournament }) => {
            if let Some(d) = state.tournament_mut(tournament).datasets.get_mut(&sender) {
                d.key = Some(*key);
            }
        }
        (TxPayload::PublishSignalDecryptionKey { agent, key, .. }, TxPlan::SignalKey { tournament, slot, outcome }) => {
            let rec = state.tournament_mut(tournament);
            rec.signal_keys.entry(*agent).or_default().insert(slot, *key);
            let reason = match outcome {
                RevealOutcome::Valid => None,
                RevealOutcome::Copied { original } => {
                    events.push(ChainEvent::CopyDetected { tournament, agent: *agent, copier: sender, original });
                    Some(DisqualificationReason::CopyDetected)
                }
                RevealOutcome::Malformed => Some(DisqualificationReason::MalformedSignal),
            };
            if let Some(reason) = reason {
                if rec.participants.contains_key(agent) && rec.disqualify_agent(*agent, reason) {
                    events.push(ChainEvent::Disqualified { tournament, subject: Subject::Agent(*agent), reason });
                }
            }
        }
        (TxPayload::PublishTournamentRanking { ranking }, TxPlan::Ranking { tournament }) => {
            state.tournament_mut(tournament).rankings.insert(sender, ranking.clone());
        }
        (TxPayload::PublishAgentPrice { agent, scheme, price, stake }, plan) => {
            update_listing(state, &mut events, sender, *agent, ListingKind::Agent, scheme, *price, *stake, plan, now);
        }
        (TxPayload::PublishDataPrice { data, params, scheme, price, stake }, plan) => {
            let kind = ListingKind::Data { params: params.clone() };
            update_listing(state, &mut events, sender, *data, kind, scheme, *price, *stake, plan, now);
        }
        (TxPayload::Rent { listing, quantity }, TxPlan::Rent { cost }) => {
            let owner = state.listings[listing].owner;
            let fee = state.config.rent_fee;
            state.ledger.transfer(&sender, &owner, cost).expect(ledger_ok);
            match state.config.rent_fee_sink {
                RentFeeSink::Maintenance => {
                    let maintenance = state.config.maintenance_address;
                    state.ledger.transfer(&sender, &maintenance, fee).expect(ledger_ok);
                }
                RentFeeSink::Burn => state.ledger.burn(&sender, fee).expect(ledger_ok),
            }
            events.push(ChainEvent::Rented {
                listing: *listing,
                renter: sender,
                owner,
                quantity: *quantity,
                cost,
                fee,
            });
        }
        (payload, plan) => unreachable!("plan {plan:?} does not match payload {:?}", payload.kind()),
    }

    state.record_included(tx, now);
    Ok(events)
}

#[allow(clippy::too_many_arguments)]
fn update_listing(
    state: &mut ChainState,
    events: &mut Vec<ChainEvent>,
    owner: Address,
    id: Uuid,
    kind: ListingKind,
    scheme: &str,
    price: TokenAmount,
    stake: TokenAmount,
    plan: TxPlan,
    now: Timestamp,
) {
    let previous = state.listings.get(&id).and_then(|l| l.stake_id);
    if let Some(stake_id) = previous {
        state.ledger.release_stake(&owner, stake_id).expect("listing stake exists");
    }
    let listing = match plan {
        TxPlan::Delist => {
            let l = state.listings.get_mut(&id).expect("delisted listing exists");
            l.active = false;
            l.stake = 0;
            l.stake_id = None;
            l.clone()
        }
        TxPlan::Listing => {
            let stake_id = state
                .ledger
                .stake(&owner, stake, StakePurpose::PricePublish(id), now)
                .expect("validated listing stake is affordable");
            let l = Listing {
                owner,
                kind,
                scheme: scheme.to_string(),
                price,
                stake,
                stake_id: Some(stake_id),
                active: true,
            };
            state.listings.insert(id, l.clone());
            l
        }
        other => unreachable!("listing transaction with plan {other:?}"),
    };
    events.push(ChainEvent::ListingUpdated { listing: id, owner, price: listing.price, active: listing.active });
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_payloads() -> Vec<TxPayload> {
        let agent = AgentId::derive(&[b"agent"]);
        let envelope = crate::commit_reveal::seal_signal(
            &SymmetricKey([7; 32]),
            agent,
            crate::commit_reveal::EnvelopeContext::Tick(3),
            b"signal",
            &Address([1; 32]),
        );
        vec![
            TxPayload::SubmitAgent { agent, stake: 10 },
            TxPayload::PublishDataset {
                inputs_blob: BlobId([1; 32]),
                inputs_hash: Hash256([2; 32]),
                outputs_blob: BlobId([3; 32]),
                outputs_hash: Hash256([4; 32]),
            },
            TxPayload::SubmitSignal { agent, envelope, tick: Some(3) },
            TxPayload::PublishDatasetDecryptionKey { key: SymmetricKey([5; 32]) },
            TxPayload::PublishSignalDecryptionKey { agent, key: SymmetricKey([6; 32]), tick: None },
            TxPayload::PublishTournamentRanking { ranking: vec![(agent, 0.5), (Uuid([9; 16]), 0.25)] },
            TxPayload::PublishAgentPrice { agent, scheme: "per-call".into(), price: 3, stake: 5 },
            TxPayload::PublishDataPrice {
                data: Uuid([8; 16]),
                params: vec![1, 2, 3],
                scheme: "per-row".into(),
                price: 2,
                stake: 0,
            },
            TxPayload::Rent { listing: Uuid([8; 16]), quantity: 2 },
        ]
    }

    #[test]
    fn every_payload_round_trips_and_tags_follow_declaration_order() {
        for (i, p) in sample_payloads().into_iter().enumerate() {
            assert_eq!(p.kind().tag(), i as u64 + 1);
            let bytes = p.to_canonical_bytes();
            assert_eq!(&bytes[..8], &(i as u64 + 1).to_be_bytes());
            assert_eq!(TxPayload::from_canonical_bytes(&bytes).unwrap(), p);
        }
    }

    #[test]
    fn signature_covers_payload_sender_and_time() {
        let keys = Keypair::from_name("alice");
        let tx = SignedTransaction::sign(TxPayload::Rent { listing: Uuid([1; 16]), quantity: 1 }, &keys, 500);
        assert!(tx.verify_signature());
        let mut later = tx.clone();
        later.submitted_at += 1;
        assert!(!later.verify_signature());
        let mut other = tx.clone();
        other.payload = TxPayload::Rent { listing: Uuid([1; 16]), quantity: 2 };
        assert!(!other.verify_signature());
        let mut impostor = tx.clone();
        impostor.sender = Keypair::from_name("mallory").address();
        assert!(!impostor.verify_signature());
        let decoded = SignedTransaction::from_canonical_bytes(&tx.to_canonical_bytes()).unwrap();
        assert_eq!(decoded, tx);
    }

    #[test]
    fn signing_bytes_layout() {
        let payload = TxPayload::Rent { listing: Uuid([0xab; 16]), quantity: 2 };
        let sender = Address([0xcd; 32]);
        let bytes = signing_bytes(&payload, &sender, 0x0102);
        let mut expected = Vec::new();
        expected.extend_from_slice(&9u64.to_be_bytes());
        expected.extend_from_slice(&16u64.to_be_bytes());
        expected.extend_from_slice(&[0xab; 16]);
        expected.extend_from_slice(&2u64.to_be_bytes());
        expected.extend_from_slice(&32u64.to_be_bytes());
        expected.extend_from_slice(&[0xcd; 32]);
        expected.extend_from_slice(&0x0102u64.to_be_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn unknown_tag_rejected() {
        let bytes = 10u64.to_canonical_bytes();
        assert!(matches!(TxPayload::from_canonical_bytes(&bytes), Err(DecodeError::UnknownTag { tag: 10, .. })));
        assert_eq!(TxKind::from_tag(0), None);
    }

    #[test]
    fn reason_codes_match_serde_names() {
        for r in [RejectReason::RateLimited, RejectReason::StakeTooLow, RejectReason::NotChallenger] {
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.code()));
        }
    }

    proptest! {
        #[test]
        fn ranking_payload_round_trip(scores in proptest::collection::vec((any::<[u8; 16]>(), 0.0f64..10.0), 0..20)) {
            let ranking: Vec<(AgentId, f64)> = scores.into_iter().map(|(b, s)| (Uuid(b), s)).collect();
            let p = TxPayload::PublishTournamentRanking { ranking };
            prop_assert_eq!(TxPayload::from_canonical_bytes(&p.to_canonical_bytes()).unwrap(), p);
        }
    }
}
