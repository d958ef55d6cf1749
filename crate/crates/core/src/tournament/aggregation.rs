//! Consensus ranking: per-agent power-weighted median of validator scores.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::types::{Address, AgentId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregationError {
    #[error("no ranking from a non-disqualified validator")]
    NoValidRankings,
}

/// Weighted median of `(value, weight)` pairs. When the cumulative weight
/// hits exactly half at some value, the result is the mean of that value and
/// the next one, which reduces to the ordinary median for equal weights.
pub fn weighted_median(values: &mut [(f64, u128)]) -> Option<f64> {
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: u128 = values.iter().map(|(_, w)| w).sum();
    if total == 0 {
        return None;
    }
    let mut acc = 0u128;
    for (i, (v, w)) in values.iter().enumerate() {
        acc += w;
        if acc * 2 == total {
            let next = values[i + 1..].iter().find(|(_, w)| *w > 0).map_or(*v, |(n, _)| *n);
            return Some((v + next) / 2.0);
        }
        if acc * 2 > total {
            return Some(*v);
        }
    }
    unreachable!("cumulative weight reaches the total")
}

/// Combines validator rankings into one list sorted by consensus score,
/// highest first, ties broken by ascending agent id. Validators that omit an
/// agent contribute nothing to that agent's score.
pub fn aggregate_rankings(
    rankings: &BTreeMap<Address, Vec<(AgentId, f64)>>,
    powers: &BTreeMap<Address, u128>,
    disqualified: &BTreeSet<Address>,
) -> Result<Vec<(AgentId, f64)>, AggregationError> {
    let mut reports: BTreeMap<AgentId, Vec<(f64, u128)>> = BTreeMap::new();
    let mut any = false;
    for (validator, ranking) in rankings {
        if disqualified.contains(validator) {
            continue;
        }
        let weight = powers.get(validator).copied().unwrap_or(0);
        if weight == 0 {
            continue;
        }
        any = true;
        for (agent, score) in ranking {
            reports.entry(*agent).or_default().push((*score, weight));
        }
    }
    if !any {
        return Err(AggregationError::NoValidRankings);
    }
    let mut out: Vec<(AgentId, f64)> =
        reports.into_iter().filter_map(|(agent, mut v)| weighted_median(&mut v).map(|s| (agent, s.max(0.0)))).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}
