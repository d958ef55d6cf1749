//! Run summaries and the structured event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tournament::PayoutReason;
use crate::types::{AgentId, Timestamp, TokenAmount};

/// One line of `events.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: Timestamp,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub node: Option<String>,
    pub kind: String,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BlockStat {
    pub height: u64,
    pub timestamp: Timestamp,
    pub proposer: String,
    pub txs: usize,
    /// Included transactions sent by nodes without an adversary role.
    pub honest_txs: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PayoutRow {
    pub recipient: String,
    pub reason: PayoutReason,
    pub amount: TokenAmount,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub agent: Option<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SettlementRow {
    pub tournament: u64,
    pub time: Timestamp,
    pub pool: TokenAmount,
    pub rollover: TokenAmount,
    /// `(agent, owner, consensus score)`, best first.
    pub consensus: Vec<(AgentId, String, f64)>,
    pub payouts: Vec<PayoutRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DisqualificationRow {
    pub tournament: u64,
    pub time: Timestamp,
    /// Owning node of the disqualified agent, challenger or validator.
    pub node: String,
    pub role: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeSummary {
    pub name: String,
    pub roles: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adversary: Option<String>,
    pub sent: u64,
    pub included: u64,
    pub rejected: BTreeMap<String, u64>,
    pub final_balance: TokenAmount,
    pub agent_tranche_income: TokenAmount,
    pub total_income: TokenAmount,
    /// Tournaments in which the node was disqualified in any role.
    pub disqualified_in: Vec<u64>,
    pub copy_detected: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_ever: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub restarts: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HaltInfo {
    pub height: u64,
    pub time: Timestamp,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub tournaments: u64,
    pub blocks: u64,
    pub final_time: Timestamp,
    pub final_state_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub halted: Option<HaltInfo>,
    /// Ledger audits run (one per block); a failing audit aborts the run.
    pub audits_passed: u64,
    pub supply: TokenAmount,
    pub settlements: Vec<SettlementRow>,
    pub disqualifications: Vec<DisqualificationRow>,
    pub nodes: Vec<NodeSummary>,
    pub block_stats: Vec<BlockStat>,
}

impl SimReport {
    pub fn node(&self, name: &str) -> Option<&NodeSummary> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Mean honest transactions per block.
    pub fn honest_tx_rate(&self) -> f64 {
        if self.block_stats.is_empty() {
            return 0.0;
        }
        self.block_stats.iter().map(|b| b.honest_txs as f64).sum::<f64>() / self.block_stats.len() as f64
    }
}

/// Best value found so far by one searcher, sampled once per block it sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub time: Timestamp,
    pub node: String,
    pub best_ever: f64,
}
