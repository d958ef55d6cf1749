//! Splitting a settled tournament pool between agents, validators,
//! challengers, and the maintenance account.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::ProblemType;
use crate::types::{Address, AgentId, TokenAmount};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PayoutReason {
    Agent,
    Validator,
    Challenger,
    Maintenance,
    Refund,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payout {
    pub address: Address,
    pub amount: TokenAmount,
    pub reason: PayoutReason,
    pub agent: Option<AgentId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tranches {
    pub agents: TokenAmount,
    pub validators: TokenAmount,
    pub challengers: TokenAmount,
    pub maintenance: TokenAmount,
}

impl Tranches {
    /// Percent split: 10% validators, 10% challengers (dataset only),
    /// 5% maintenance, remainder to agents. Each share is floored.
    pub fn split(pool: TokenAmount, problem: ProblemType) -> Self {
        let pct = |p: u128| (pool as u128 * p / 100) as TokenAmount;
        let validators = pct(10);
        let challengers = match problem {
            ProblemType::Dataset => pct(10),
            ProblemType::RealTime => 0,
        };
        let maintenance = pct(5);
        Self { agents: pool - validators - challengers - maintenance, validators, challengers, maintenance }
    }
}

pub struct RewardInputs<'a> {
    pub pool: TokenAmount,
    pub problem: ProblemType,
    /// Consensus ranking, best first.
    pub ranking: &'a [(AgentId, f64)],
    pub agent_owners: &'a BTreeMap<AgentId, Address>,
    pub disqualified_agents: &'a BTreeSet<AgentId>,
    /// Blocks plus transactions each block creator produced during the tournament.
    pub validator_points: &'a BTreeMap<Address, u64>,
    pub disqualified_validators: &'a BTreeSet<Address>,
    pub challenger_powers: &'a BTreeMap<Address, u128>,
    pub disqualified_challengers: &'a BTreeSet<Address>,
    pub maintenance: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub tranches: Tranches,
    pub payouts: Vec<Payout>,
    /// Undistributed remainder carried into the next tournament's pool.
    pub rollover: TokenAmount,
}

/// Fixed-point weight for a score so that pro-rata splits stay in integers.
pub fn score_weight(score: f64) -> u128 {
    if score.is_finite() && score > 0.0 {
        (score.min(1e6) * 1e12).round() as u128
    } else {
        0
    }
}

/// Pro-rata floor split. If every weight is zero the amount is split
/// equally. Returns the shares and the undistributed dust.
pub fn pro_rata<K: Copy>(amount: TokenAmount, weights: &[(K, u128)]) -> (Vec<(K, TokenAmount)>, TokenAmount) {
    if weights.is_empty() || amount == 0 {
        return (Vec::new(), amount);
    }
    let total: u128 = weights.iter().map(|(_, w)| w).sum();
    let shares: Vec<(K, TokenAmount)> = if total == 0 {
        let each = amount / weights.len() as u64;
        weights.iter().map(|(k, _)| (*k, each)).collect()
    } else {
        weights.iter().map(|(k, w)| (*k, (amount as u128 * w / total) as TokenAmount)).collect()
    };
    let paid: TokenAmount = shares.iter().map(|(_, a)| a).sum();
    (shares, amount - paid)
}

pub fn allocate_reward(inputs: &RewardInputs<'_>) -> Allocation {
    let tranches = Tranches::split(inputs.pool, inputs.problem);
    let mut payouts = Vec::new();
    let mut rollover = 0;

    let eligible: Vec<&(AgentId, f64)> = inputs
        .ranking
        .iter()
        .filter(|(a, _)| !inputs.disqualified_agents.contains(a) && inputs.agent_owners.contains_key(a))
        .collect();
    let winners = eligible.len().div_ceil(2);
    let weights: Vec<(AgentId, u128)> = eligible[..winners].iter().map(|(a, s)| (*a, score_weight(*s))).collect();
    let (shares, dust) = pro_rata(tranches.agents, &weights);
    rollover += dust;
    for (agent, amount) in shares {
        payouts.push(Payout {
            address: inputs.agent_owners[&agent],
            amount,
            reason: PayoutReason::Agent,
            agent: Some(agent),
        });
    }

    let weights: Vec<(Address, u128)> = inputs
        .validator_points
        .iter()
        .filter(|(a, p)| **p > 0 && !inputs.disqualified_validators.contains(a))
        .map(|(a, p)| (*a, *p as u128))
        .collect();
    let (shares, dust) = pro_rata(tranches.validators, &weights);
    rollover += dust;
    for (address, amount) in shares {
        payouts.push(Payout { address, amount, reason: PayoutReason::Validator, agent: None });
    }

    if inputs.problem == ProblemType::Dataset {
        let weights: Vec<(Address, u128)> = inputs
            .challenger_powers
            .iter()
            .filter(|(a, p)| **p > 0 && !inputs.disqualified_challengers.contains(a))
            .map(|(a, p)| (*a, *p))
            .collect();
        let (shares, dust) = pro_rata(tranches.challengers, &weights);
        rollover += dust;
        for (address, amount) in shares {
            payouts.push(Payout { address, amount, reason: PayoutReason::Challenger, agent: None });
        }
    }

    if tranches.maintenance > 0 {
        payouts.push(Payout {
            address: inputs.maintenance,
            amount: tranches.maintenance,
            reason: PayoutReason::Maintenance,
            agent: None,
        });
    }
    payouts.retain(|p| p.amount > 0);
    Allocation { tranches, payouts, rollover }
}
