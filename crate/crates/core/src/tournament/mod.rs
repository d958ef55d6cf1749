//! Tournament records plus the three tournament algorithms: challenger
//! selection, ranking aggregation, and reward allocation.

pub mod aggregation;
pub mod reward;
pub mod selection;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::commit_reveal::{DatasetCommitment, SignalEnvelope};
use crate::types::{Address, AgentId, SymmetricKey, TokenAmount};

pub use aggregation::{aggregate_rankings, weighted_median, AggregationError};
pub use reward::{allocate_reward, Allocation, Payout, PayoutReason, RewardInputs, Tranches};
pub use selection::{
    challenger_seed, select_challengers, select_proposer, Challenger, ChallengerRules, SelectionError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    /// Known to the chain (pending agents or early signals) but not started.
    Announced,
    Running,
    /// Submission closed; reveals and rankings outstanding.
    Closing,
    Settled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisqualificationReason {
    MissedSignal,
    MissedSignalKey,
    CopyDetected,
    MalformedSignal,
    MissedDataset,
    MissedDatasetKey,
    MissedRanking,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub owner: Address,
    pub stake: TokenAmount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengerDataset {
    pub commitment: DatasetCommitment,
    pub key: Option<SymmetricKey>,
}

/// Outcome of a settled tournament.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub pool: TokenAmount,
    pub consensus: Vec<(AgentId, f64)>,
    pub payouts: Vec<Payout>,
    pub rollover: TokenAmount,
}

/// Everything the chain tracks about tournament `index`. Envelope and key
/// maps are keyed by tick number (real-time) or the tournament index
/// (dataset). Bulky submission data is pruned after settlement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentRecord {
    pub index: u64,
    pub phase: Phase,
    pub participants: BTreeMap<AgentId, Participant>,
    pub challengers: Vec<Challenger>,
    pub envelopes: BTreeMap<AgentId, BTreeMap<u64, SignalEnvelope>>,
    pub signal_keys: BTreeMap<AgentId, BTreeMap<u64, SymmetricKey>>,
    pub datasets: BTreeMap<Address, ChallengerDataset>,
    pub rankings: BTreeMap<Address, Vec<(AgentId, f64)>>,
    /// Validator powers snapshotted when the tournament ends.
    pub validators: BTreeMap<Address, u128>,
    /// Block creator points: blocks proposed plus transactions included.
    pub points: BTreeMap<Address, u64>,
    pub disqualified_agents: BTreeMap<AgentId, DisqualificationReason>,
    pub disqualified_challengers: BTreeMap<Address, DisqualificationReason>,
    pub disqualified_validators: BTreeMap<Address, DisqualificationReason>,
    pub settlement: Option<Settlement>,
}

impl TournamentRecord {
    pub fn new(index: u64) -> Self {
        Self {
            index,
            phase: Phase::Announced,
            participants: BTreeMap::new(),
            challengers: Vec::new(),
            envelopes: BTreeMap::new(),
            signal_keys: BTreeMap::new(),
            datasets: BTreeMap::new(),
            rankings: BTreeMap::new(),
            validators: BTreeMap::new(),
            points: BTreeMap::new(),
            disqualified_agents: BTreeMap::new(),
            disqualified_challengers: BTreeMap::new(),
            disqualified_validators: BTreeMap::new(),
            settlement: None,
        }
    }

    pub fn is_challenger(&self, who: &Address) -> bool {
        self.challengers.iter().any(|c| c.address == *who)
    }

    pub fn envelope(&self, agent: &AgentId, slot: u64) -> Option<&SignalEnvelope> {
        self.envelopes.get(agent)?.get(&slot)
    }

    pub fn signal_key(&self, agent: &AgentId, slot: u64) -> Option<&SymmetricKey> {
        self.signal_keys.get(agent)?.get(&slot)
    }

    /// First reason wins; later disqualifications of the same agent are ignored.
    pub fn disqualify_agent(&mut self, agent: AgentId, reason: DisqualificationReason) -> bool {
        if self.disqualified_agents.contains_key(&agent) {
            return false;
        }
        self.disqualified_agents.insert(agent, reason);
        true
    }

    pub fn prune(&mut self) {
        self.envelopes.clear();
        self.signal_keys.clear();
        self.datasets.clear();
        self.rankings.clear();
    }
}
