//! Domain parameters and the absolute tournament timetable derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Keypair;
use crate::types::{Address, Timestamp, TokenAmount};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ProblemType {
    RealTime,
    Dataset,
}

/// How `tournament_cutoff` limits the agents admitted to a tournament.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CutoffMode {
    /// Admit the top `cutoff`% of pending agents by count, ranked by stake.
    #[default]
    AgentCount,
    /// Admit agents by descending stake until `cutoff`% of pending stake is covered.
    StakeShare,
}

/// Where the rent fee goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RentFeeSink {
    #[default]
    Maintenance,
    Burn,
}

/// Fate of submission stakes of agents that finish outside the winners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SubmissionFeeMode {
    /// Every admitted stake is a fee and funds the reward pool.
    #[default]
    Consumed,
    /// Non-winning, non-disqualified agents get their stake back at settlement.
    RefundNonWinners,
}

fn default_cutoff() -> u32 {
    100
}
fn default_block_time() -> u64 {
    1_000
}
fn default_maintenance() -> Address {
    Keypair::from_name("maintenance").address()
}
fn default_max_share() -> u32 {
    10
}
fn default_max_draws() -> u64 {
    10_000
}
fn default_age_cap() -> u64 {
    10_000
}
fn default_rate_limit() -> u32 {
    4
}
fn default_tx_ttl() -> u64 {
    60_000
}
fn default_signal_dimension() -> u32 {
    1
}
fn default_max_signal_bytes() -> u64 {
    1 << 20
}

/// Protocol parameters of a domain. Field names in scenario files follow the
/// protocol's camelCase parameter names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DomainConfig {
    pub problem_type: ProblemType,
    pub tournament_start_frequency: u64,
    pub challenger_submission_timeout: u64,
    pub dataset_signal_key_timeout: u64,
    pub ranking_timeout: u64,
    #[serde(default)]
    pub real_time_frequency: Option<u64>,
    pub min_agent_challengers: u32,
    /// Whole percent of total validator power.
    pub min_agent_challenger_voting_power: u32,
    pub min_agent_submit_stake: TokenAmount,
    pub min_price_publish_stake: TokenAmount,
    pub rent_fee: TokenAmount,
    #[serde(default = "default_cutoff")]
    pub tournament_cutoff: u32,
    #[serde(default)]
    pub cutoff_mode: CutoffMode,
    #[serde(default = "default_block_time")]
    pub block_time: u64,
    #[serde(default = "default_maintenance")]
    pub maintenance_address: Address,
    /// Largest share (whole percent) of total challenger power one challenger may hold.
    #[serde(default = "default_max_share")]
    pub max_challenger_power_share: u32,
    #[serde(default = "default_max_draws")]
    pub max_challenger_draws: u64,
    /// Coin-age cap in block periods.
    #[serde(default = "default_age_cap")]
    pub coin_age_cap: u64,
    /// Accepted fee-less transactions per sender, per type, per window.
    #[serde(default = "default_rate_limit")]
    pub spam_rate_limit: u32,
    /// Rate-limit window; defaults to one block time.
    #[serde(default)]
    pub spam_window: Option<u64>,
    #[serde(default = "default_tx_ttl")]
    pub tx_ttl: u64,
    #[serde(default)]
    pub rent_fee_sink: RentFeeSink,
    #[serde(default)]
    pub submission_fee_mode: SubmissionFeeMode,
    /// Number of `f64` values in one prediction or one dataset output row.
    #[serde(default = "default_signal_dimension")]
    pub signal_dimension: u32,
    #[serde(default = "default_max_signal_bytes")]
    pub max_signal_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid domain config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

fn err(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError { field, reason: reason.into() }
}

impl DomainConfig {
    /// A small real-time domain useful as a starting point.
    pub fn real_time_default() -> Self {
        Self {
            problem_type: ProblemType::RealTime,
            tournament_start_frequency: 60_000,
            challenger_submission_timeout: 10_000,
            dataset_signal_key_timeout: 10_000,
            ranking_timeout: 20_000,
            real_time_frequency: Some(15_000),
            min_agent_challengers: 1,
            min_agent_challenger_voting_power: 0,
            min_agent_submit_stake: 10,
            min_price_publish_stake: 5,
            rent_fee: 1,
            tournament_cutoff: default_cutoff(),
            cutoff_mode: CutoffMode::default(),
            block_time: default_block_time(),
            maintenance_address: default_maintenance(),
            max_challenger_power_share: default_max_share(),
            max_challenger_draws: default_max_draws(),
            coin_age_cap: default_age_cap(),
            spam_rate_limit: default_rate_limit(),
            spam_window: None,
            tx_ttl: default_tx_ttl(),
            rent_fee_sink: RentFeeSink::default(),
            submission_fee_mode: SubmissionFeeMode::default(),
            signal_dimension: default_signal_dimension(),
            max_signal_bytes: default_max_signal_bytes(),
        }
    }

    /// A small dataset domain useful as a starting point.
    pub fn dataset_default() -> Self {
        Self {
            problem_type: ProblemType::Dataset,
            real_time_frequency: None,
            min_agent_challengers: 3,
            min_agent_challenger_voting_power: 20,
            ..Self::real_time_default()
        }
    }

    pub fn is_real_time(&self) -> bool {
        self.problem_type == ProblemType::RealTime
    }

    pub fn spam_window(&self) -> u64 {
        self.spam_window.unwrap_or(self.block_time)
    }

    /// Tick interval; only meaningful for real-time domains.
    pub fn tick_interval(&self) -> u64 {
        self.real_time_frequency.unwrap_or(self.tournament_start_frequency)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = self.tournament_start_frequency;
        for (name, v) in [
            ("tournamentStartFrequency", f),
            ("challengerSubmissionTimeout", self.challenger_submission_timeout),
            ("datasetSignalKeyTimeout", self.dataset_signal_key_timeout),
            ("rankingTimeout", self.ranking_timeout),
            ("blockTime", self.block_time),
            ("spamWindow", self.spam_window()),
            ("txTtl", self.tx_ttl),
        ] {
            if v == 0 {
                return Err(err(name, "duration must be > 0"));
            }
        }
        if self.is_real_time() {
            match self.real_time_frequency {
                None => return Err(err("realTimeFrequency", "required for real-time domains")),
                Some(0) => return Err(err("realTimeFrequency", "duration must be > 0")),
                Some(r) if !f.is_multiple_of(r) => {
                    return Err(err("realTimeFrequency", "must divide tournamentStartFrequency"))
                }
                _ => {}
            }
        }
        if self.challenger_submission_timeout >= f {
            return Err(err("challengerSubmissionTimeout", "must be < tournamentStartFrequency"));
        }
        if self.dataset_signal_key_timeout > self.ranking_timeout {
            return Err(err("datasetSignalKeyTimeout", "must be <= rankingTimeout"));
        }
        // Keeps at most one tournament in its reveal/ranking phase, so windows
        // map to a unique tournament.
        if self.ranking_timeout >= f {
            return Err(err("rankingTimeout", "must be < tournamentStartFrequency"));
        }
        if self.min_agent_challengers < 1 {
            return Err(err("minAgentChallengers", "must be >= 1"));
        }
        if self.min_agent_challenger_voting_power > 100 {
            return Err(err("minAgentChallengerVotingPower", "must be <= 100"));
        }
        if !(1..=100).contains(&self.tournament_cutoff) {
            return Err(err("tournamentCutoff", "must be in (0, 100]"));
        }
        if !(1..=100).contains(&self.max_challenger_power_share) {
            return Err(err("maxChallengerPowerShare", "must be in (0, 100]"));
        }
        if self.spam_rate_limit < 1 {
            return Err(err("spamRateLimit", "must be >= 1"));
        }
        if self.signal_dimension < 1 {
            return Err(err("signalDimension", "must be >= 1"));
        }
        if self.coin_age_cap < 1 {
            return Err(err("coinAgeCap", "must be >= 1"));
        }
        Ok(())
    }

    pub fn tournament_start(&self, k: u64) -> Timestamp {
        k * self.tournament_start_frequency
    }

    pub fn tournament_end(&self, k: u64) -> Timestamp {
        self.tournament_start(k + 1)
    }

    pub fn challenger_deadline(&self, k: u64) -> Timestamp {
        self.tournament_start(k) + self.challenger_submission_timeout
    }

    pub fn dataset_key_deadline(&self, k: u64) -> Timestamp {
        self.tournament_end(k) + self.dataset_signal_key_timeout
    }

    pub fn ranking_deadline(&self, k: u64) -> Timestamp {
        self.tournament_end(k) + self.ranking_timeout
    }

    pub fn schedule_for(&self, k: u64) -> Schedule {
        assert!(k >= 1, "tournaments are numbered from 1");
        let start = self.tournament_start(k);
        let end = self.tournament_end(k);
        let ticks = match (self.problem_type, self.real_time_frequency) {
            (ProblemType::RealTime, Some(r)) if r > 0 => {
                (start.div_ceil(r)..).map(|m| m * r).take_while(|&t| t < end).collect()
            }
            _ => Vec::new(),
        };
        Schedule {
            tournament_index: k,
            start,
            end,
            challenger_deadline: self.challenger_deadline(k),
            dataset_key_deadline: self.dataset_key_deadline(k),
            ranking_deadline: self.ranking_deadline(k),
            ticks,
        }
    }

    /// Index of the tournament running at `t`, or `None` before the first start.
    pub fn tournament_index_at(&self, t: Timestamp) -> Option<u64> {
        match t / self.tournament_start_frequency {
            0 => None,
            k => Some(k),
        }
    }
}

/// Absolute timetable of tournament `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub tournament_index: u64,
    pub start: Timestamp,
    pub end: Timestamp,
    pub challenger_deadline: Timestamp,
    pub dataset_key_deadline: Timestamp,
    pub ranking_deadline: Timestamp,
    pub ticks: Vec<Timestamp>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hourly() -> DomainConfig {
        DomainConfig {
            tournament_start_frequency: 3_600_000,
            real_time_frequency: Some(900_000),
            ranking_timeout: 600_000,
            ..DomainConfig::real_time_default()
        }
    }

    #[test]
    fn zero_min_challengers_rejected() {
        let cfg = DomainConfig { min_agent_challengers: 0, ..hourly() };
        assert_eq!(cfg.validate().unwrap_err().field, "minAgentChallengers");
    }

    #[test]
    fn tick_equal_to_frequency_is_one_tick_per_tournament() {
        let cfg = DomainConfig { real_time_frequency: Some(3_600_000), ..hourly() };
        cfg.validate().unwrap();
        assert_eq!(cfg.schedule_for(3).ticks, vec![10_800_000]);
    }

    #[test]
    fn challenger_timeout_at_tournament_length_rejected() {
        let cfg = DomainConfig { challenger_submission_timeout: 3_600_000, ..hourly() };
        assert_eq!(cfg.validate().unwrap_err().field, "challengerSubmissionTimeout");
    }

    #[test]
    fn non_dividing_tick_rejected() {
        let cfg = DomainConfig { real_time_frequency: Some(700_000), ..hourly() };
        assert_eq!(cfg.validate().unwrap_err().field, "realTimeFrequency");
        let cfg = DomainConfig { real_time_frequency: None, ..hourly() };
        assert_eq!(cfg.validate().unwrap_err().field, "realTimeFrequency");
    }

    #[test]
    fn key_timeout_above_ranking_timeout_rejected() {
        let cfg = DomainConfig { dataset_signal_key_timeout: 700_000, ..hourly() };
        assert_eq!(cfg.validate().unwrap_err().field, "datasetSignalKeyTimeout");
    }

    #[test]
    fn schedule_examples() {
        let cfg = hourly();
        let s2 = cfg.schedule_for(2);
        assert_eq!((s2.start, s2.end), (7_200_000, 10_800_000));
        let s1 = cfg.schedule_for(1);
        assert_eq!(s1.ticks, vec![3_600_000, 4_500_000, 5_400_000, 6_300_000]);
        assert_eq!(s1.ranking_deadline, 7_800_000);
        assert!(s1.start < s1.challenger_deadline);
        assert!(s1.challenger_deadline < s1.end);
        assert!(s1.end < s1.dataset_key_deadline);
        assert!(s1.dataset_key_deadline <= s1.ranking_deadline);
        assert_eq!(cfg.schedule_for(5), cfg.schedule_for(5));
    }

    #[test]
    fn dataset_schedule_has_no_ticks() {
        let cfg = DomainConfig::dataset_default();
        cfg.validate().unwrap();
        assert!(cfg.schedule_for(1).ticks.is_empty());
    }

    #[test]
    fn tournament_index_examples() {
        let cfg = DomainConfig { tournament_start_frequency: 1000, ..DomainConfig::real_time_default() };
        assert_eq!(cfg.tournament_index_at(999), None);
        assert_eq!(cfg.tournament_index_at(1000), Some(1));
        assert_eq!(cfg.tournament_index_at(2500), Some(2));
    }

    #[test]
    fn end_is_next_start_and_tick_count() {
        let cfg = hourly();
        for k in 1..50 {
            let s = cfg.schedule_for(k);
            assert_eq!(s.end, cfg.schedule_for(k + 1).start);
            assert_eq!(s.ticks.len() as u64, cfg.tournament_start_frequency / 900_000);
            assert!(s.ticks.iter().all(|t| (s.start..s.end).contains(t) && t % 900_000 == 0));
        }
    }
}
