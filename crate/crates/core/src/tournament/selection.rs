//! Power-weighted pseudorandom walks: block proposer choice and challenger
//! selection for dataset tournaments.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::DomainConfig;
use crate::crypto::SeedStream;
use crate::types::{Address, Hash256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenger {
    pub address: Address,
    pub power: u128,
}

/// Stopping rules for challenger selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChallengerRules {
    pub min_challengers: u32,
    /// Whole percent of total validator power the challengers must hold.
    pub min_power_pct: u32,
    /// No challenger may hold more than this whole percent of challenger power.
    pub max_share_pct: u32,
    pub max_draws: u64,
}

impl From<&DomainConfig> for ChallengerRules {
    fn from(cfg: &DomainConfig) -> Self {
        Self {
            min_challengers: cfg.min_agent_challengers,
            min_power_pct: cfg.min_agent_challenger_voting_power,
            max_share_pct: cfg.max_challenger_power_share,
            max_draws: cfg.max_challenger_draws,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("total validator power is zero")]
    NoPower,
    #[error("selection infeasible: {0}")]
    Infeasible(&'static str),
    #[error("no admissible challenger set after {0} draws")]
    DrawLimit(u64),
}

/// Seed for challenger selection: digest of the previous block header hash
/// and the consensus signatures carried by the current block.
pub fn challenger_seed(prev_header_hash: &Hash256, commit_bytes: &[u8]) -> Hash256 {
    Hash256::digest_parts(&[b"challengers/", prev_header_hash.as_bytes(), commit_bytes])
}

/// Nodes with nonzero power, strongest first, ties by ascending address.
pub fn power_sorted(nodes: &[(Address, u128)]) -> Vec<(Address, u128)> {
    let mut v: Vec<_> = nodes.iter().copied().filter(|(_, p)| *p > 0).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Draws `r` uniform in `1..=total` and returns the index where the running
/// power sum first reaches `r`.
pub fn weighted_pick(sorted: &[(Address, u128)], total: u128, stream: &mut SeedStream) -> usize {
    let r = stream.uniform_1_to(total);
    let mut acc = 0u128;
    for (i, (_, p)) in sorted.iter().enumerate() {
        acc += p;
        if acc >= r {
            return i;
        }
    }
    unreachable!("r <= total power")
}

/// Single draw from a seed; `None` when nobody has power.
pub fn select_proposer(nodes: &[(Address, u128)], seed: Hash256) -> Option<Address> {
    let sorted = power_sorted(nodes);
    let total: u128 = sorted.iter().map(|(_, p)| p).sum();
    if total == 0 {
        return None;
    }
    let mut stream = SeedStream::new(seed);
    Some(sorted[weighted_pick(&sorted, total, &mut stream)].0)
}

fn satisfied(chosen: &[Challenger], total: u128, rules: &ChallengerRules) -> bool {
    if chosen.len() < rules.min_challengers as usize {
        return false;
    }
    let sum: u128 = chosen.iter().map(|c| c.power).sum();
    if sum * 100 < rules.min_power_pct as u128 * total {
        return false;
    }
    let max = chosen.iter().map(|c| c.power).max().unwrap_or(0);
    max * 100 <= rules.max_share_pct as u128 * sum
}

/// Whether some subset of `eligible` satisfies every stopping rule. Adding a
/// weaker member never breaks a rule, so it is enough to try, for each power
/// level, every eligible node at or below it.
fn any_admissible_set(eligible: &[&(Address, u128)], total: u128, rules: &ChallengerRules) -> bool {
    // `eligible` is sorted strongest first.
    let mut sum: u128 = 0;
    let mut count = 0usize;
    let mut ascending = eligible.iter().rev().peekable();
    while let Some((_, p)) = ascending.next() {
        sum += p;
        count += 1;
        if ascending.peek().is_some_and(|(_, q)| q == p) {
            continue;
        }
        if count >= rules.min_challengers as usize
            && sum * 100 >= rules.min_power_pct as u128 * total
            && p * 100 <= rules.max_share_pct as u128 * sum
        {
            return true;
        }
    }
    false
}

/// Repeats power-weighted draws, marking each hit node that is neither a
/// participating searcher nor already marked, until the challenger set is
/// large enough, powerful enough, and not dominated by one member. A draw
/// that lands on an ineligible or already marked node still counts.
pub fn select_challengers(
    nodes: &[(Address, u128)],
    participating: &BTreeSet<Address>,
    seed: Hash256,
    rules: &ChallengerRules,
) -> Result<Vec<Challenger>, SelectionError> {
    let sorted = power_sorted(nodes);
    let total: u128 = sorted.iter().map(|(_, p)| p).sum();
    if total == 0 {
        return Err(SelectionError::NoPower);
    }
    let eligible: Vec<_> = sorted.iter().filter(|(a, _)| !participating.contains(a)).collect();
    if eligible.len() < rules.min_challengers as usize {
        return Err(SelectionError::Infeasible("fewer eligible nodes than minAgentChallengers"));
    }
    let eligible_power: u128 = eligible.iter().map(|(_, p)| p).sum();
    if eligible_power * 100 < rules.min_power_pct as u128 * total {
        return Err(SelectionError::Infeasible("eligible nodes hold too little power"));
    }
    if !any_admissible_set(&eligible, total, rules) {
        return Err(SelectionError::Infeasible("no eligible set keeps every share under maxChallengerPowerShare"));
    }

    let mut stream = SeedStream::new(seed);
    let mut marked = vec![false; sorted.len()];
    let mut chosen: Vec<Challenger> = Vec::new();
    for _ in 0..rules.max_draws {
        let i = weighted_pick(&sorted, total, &mut stream);
        let (address, power) = sorted[i];
        if marked[i] || participating.contains(&address) {
            continue;
        }
        marked[i] = true;
        chosen.push(Challenger { address, power });
        if satisfied(&chosen, total, rules) {
            return Ok(chosen);
        }
    }
    Err(SelectionError::DrawLimit(rules.max_draws))
}
