//! Scenario files: domain parameters, the node population, and simulation
//! settings, parsed strictly from TOML.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, DomainConfig};
use crate::searcher::{Objective, RestartPolicy, SearchSpace};
use crate::types::{Timestamp, TokenAmount};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub domain: DomainConfig,
    pub simulation: SimulationSettings,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
}

/// Uniform message delay in milliseconds, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    pub min: u64,
    pub max: u64,
}

fn default_dataset_rows() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SimulationSettings {
    pub tournaments: u64,
    pub seed: u64,
    #[serde(default)]
    pub delay: DelayModel,
    /// Rows in each challenger dataset.
    #[serde(default = "default_dataset_rows")]
    pub dataset_rows: usize,
    /// Seed of the hidden ground truth; derived from `seed` when absent.
    #[serde(default)]
    pub truth_seed: Option<u64>,
    /// How long before a tournament starts searchers submit their agent;
    /// defaults to a quarter of the tournament length.
    #[serde(default)]
    pub submit_lead: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SearcherSpec {
    pub objective: Objective,
    pub dimension: usize,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
    pub step_scale: f64,
    pub steps_per_block: u64,
    #[serde(default)]
    pub restart: RestartPolicy,
    /// Agent submission stake; defaults to the domain minimum.
    #[serde(default)]
    pub stake: Option<TokenAmount>,
    /// Fixed starting point; a seeded uniform draw when absent.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
}

impl SimulationSettings {
    pub fn new(tournaments: u64, seed: u64) -> Self {
        Self {
            tournaments,
            seed,
            delay: DelayModel::default(),
            dataset_rows: default_dataset_rows(),
            truth_seed: None,
            submit_lead: None,
        }
    }
}

impl SearcherSpec {
    pub fn new(objective: Objective, dimension: usize, step_scale: f64, steps_per_block: u64) -> Self {
        Self {
            objective,
            dimension,
            lower: None,
            upper: None,
            step_scale,
            steps_per_block,
            restart: RestartPolicy::default(),
            stake: None,
            start: None,
        }
    }

    pub fn space(&self) -> SearchSpace {
        let mut s = SearchSpace::new(self.objective, self.dimension);
        if let Some(l) = self.lower {
            s.lower = l;
        }
        if let Some(u) = self.upper {
            s.upper = u;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DataListingSpec {
    pub price: TokenAmount,
    pub stake: TokenAmount,
    #[serde(default)]
    pub scheme: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ClientSpec {
    /// Rent once every this many received blocks.
    pub every_blocks: u64,
    pub quantity: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum AdversarySpec {
    /// Resubmits other searchers' ciphertexts and replays their revealed keys.
    SignalCopier,
    /// Publishes datasets whose outputs are random instead of the truth.
    CorruptChallenger,
    /// Sends `perBlock` price updates on its data listing for every block it sees.
    TxSpammer {
        #[serde(rename = "perBlock")]
        per_block: u32,
    },
    /// Never publishes a tournament ranking.
    LazyValidator,
    /// Submits agents but never sends signals.
    SilentSearcher,
}

impl AdversarySpec {
    pub fn name(&self) -> &'static str {
        match self {
            AdversarySpec::SignalCopier => "signal-copier",
            AdversarySpec::CorruptChallenger => "corrupt-challenger",
            AdversarySpec::TxSpammer { .. } => "tx-spammer",
            AdversarySpec::LazyValidator => "lazy-validator",
            AdversarySpec::SilentSearcher => "silent-searcher",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default)]
    pub balance: TokenAmount,
    /// Consensus bond placed at genesis; nodes with a bond are validators.
    #[serde(default)]
    pub bond: TokenAmount,
    #[serde(default)]
    pub searcher: Option<SearcherSpec>,
    #[serde(default)]
    pub data_listing: Option<DataListingSpec>,
    #[serde(default)]
    pub client: Option<ClientSpec>,
    #[serde(default)]
    pub adversary: Option<AdversarySpec>,
    /// Offline nodes neither sign blocks nor see them.
    #[serde(default)]
    pub offline: bool,
    /// Time from which the node is offline.
    #[serde(default)]
    pub offline_at: Option<Timestamp>,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            balance: 0,
            bond: 0,
            searcher: None,
            data_listing: None,
            client: None,
            adversary: None,
            offline: false,
            offline_at: None,
        }
    }

    pub fn validator(name: impl Into<String>, balance: TokenAmount, bond: TokenAmount) -> Self {
        Self { balance, bond, ..Self::new(name) }
    }

    pub fn searcher(name: impl Into<String>, balance: TokenAmount, spec: SearcherSpec) -> Self {
        Self { balance, searcher: Some(spec), ..Self::new(name) }
    }

    pub fn with_adversary(mut self, adversary: AdversarySpec) -> Self {
        self.adversary = Some(adversary);
        self
    }

    pub fn is_validator(&self) -> bool {
        self.bond > 0
    }

    pub fn is_offline(&self, t: Timestamp) -> bool {
        self.offline || self.offline_at.is_some_and(|at| t >= at)
    }

    pub fn roles(&self) -> Vec<&'static str> {
        let mut roles = Vec::new();
        if self.is_validator() {
            roles.push("validator");
        }
        if self.searcher.is_some() {
            roles.push("searcher");
        }
        if self.data_listing.is_some() {
            roles.push("data-node");
        }
        if self.client.is_some() {
            roles.push("client");
        }
        roles
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schemaVersion {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error(transparent)]
    Domain(#[from] ConfigError),
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), reason: reason.into() }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn truth_seed(&self) -> u64 {
        self.simulation.truth_seed.unwrap_or(self.simulation.seed ^ 0x9e37_79b9_7f4a_7c15)
    }

    pub fn submit_lead(&self) -> u64 {
        self.simulation.submit_lead.unwrap_or(self.domain.tournament_start_frequency / 4)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersion(self.schema_version));
        }
        self.domain.validate()?;
        let sim = &self.simulation;
        if sim.tournaments == 0 {
            return Err(invalid("simulation.tournaments", "must be >= 1"));
        }
        if sim.delay.min > sim.delay.max {
            return Err(invalid("simulation.delay", "min must be <= max"));
        }
        if self.submit_lead() == 0 || self.submit_lead() >= self.domain.tournament_start_frequency {
            return Err(invalid("simulation.submitLead", "must be in (0, tournamentStartFrequency)"));
        }
        let mut names = BTreeSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let field = |f: &str| format!("nodes[{i}].{f}");
            if node.name.is_empty() {
                return Err(invalid(field("name"), "must not be empty"));
            }
            if !names.insert(node.name.as_str()) {
                return Err(invalid(field("name"), format!("duplicate node name `{}`", node.name)));
            }
            if let Some(s) = &node.searcher {
                s.space().validate().map_err(|e| invalid(field("searcher"), e.to_string()))?;
                if !(s.step_scale.is_finite() && s.step_scale >= 0.0) {
                    return Err(invalid(field("searcher.stepScale"), "must be finite and >= 0"));
                }
                if s.start.as_ref().is_some_and(|p| p.len() != s.dimension) {
                    return Err(invalid(field("searcher.start"), "length must equal dimension"));
                }
                if !(0.0..1.0).contains(&s.restart.quantile) || s.restart.window == 0 {
                    return Err(invalid(field("searcher.restart"), "needs window >= 1 and quantile in [0, 1)"));
                }
            }
            if let Some(c) = &node.client {
                if c.every_blocks == 0 || c.quantity == 0 {
                    return Err(invalid(field("client"), "everyBlocks and quantity must be >= 1"));
                }
            }
            let needs = match node.adversary {
                Some(AdversarySpec::SignalCopier | AdversarySpec::SilentSearcher) if node.searcher.is_none() => {
                    Some("a searcher section")
                }
                Some(AdversarySpec::CorruptChallenger | AdversarySpec::LazyValidator) if !node.is_validator() => {
                    Some("a consensus bond")
                }
                Some(AdversarySpec::TxSpammer { .. }) if node.data_listing.is_none() => Some("a dataListing section"),
                _ => None,
            };
            if let Some(what) = needs {
                return Err(invalid(field("adversary"), format!("this adversary requires {what}")));
            }
        }
        if !self.nodes.iter().any(|n| n.is_validator()) {
            return Err(invalid("nodes", "at least one node needs a consensus bond"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schemaVersion = 1
name = "minimal"

[domain]
problemType = "realTime"
tournamentStartFrequency = 20000
challengerSubmissionTimeout = 5000
datasetSignalKeyTimeout = 3000
ranking_timeout_placeholder = 0
"#;

    fn minimal() -> String {
        r#"
schemaVersion = 1
name = "minimal"

[domain]
problemType = "realTime"
tournamentStartFrequency = 20000
challengerSubmissionTimeout = 5000
datasetSignalKeyTimeout = 3000
rankingTimeout = 6000
realTimeFrequency = 5000
minAgentChallengers = 1
minAgentChallengerVotingPower = 0
minAgentSubmitStake = 10
minPricePublishStake = 5
rentFee = 1

[simulation]
tournaments = 2
seed = 7

[[nodes]]
name = "v1"
balance = 100
bond = 10
"#
        .to_string()
    }

    #[test]
    fn minimal_scenario_parses() {
        let s = Scenario::from_toml(&minimal()).unwrap();
        assert_eq!(s.nodes[0].roles(), vec!["validator"]);
        assert_eq!(s.submit_lead(), 5000);
        let again = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = Scenario::from_toml(MINIMAL).unwrap_err().to_string();
        assert!(err.contains("ranking_timeout_placeholder"), "{err}");
        let typo = minimal().replace("seed = 7", "seed = 7\nsed = 8");
        assert!(Scenario::from_toml(&typo).unwrap_err().to_string().contains("sed"));
    }

    #[test]
    fn semantic_errors() {
        let bad_version = minimal().replace("schemaVersion = 1", "schemaVersion = 2");
        assert!(matches!(Scenario::from_toml(&bad_version), Err(ScenarioError::SchemaVersion(2))));
        let bad_domain = minimal().replace("minAgentChallengers = 1", "minAgentChallengers = 0");
        assert!(matches!(Scenario::from_toml(&bad_domain), Err(ScenarioError::Domain(_))));
        let no_validator = minimal().replace("bond = 10", "");
        assert!(matches!(Scenario::from_toml(&no_validator), Err(ScenarioError::Invalid { .. })));
        let lazy_searcher = minimal() + "\n[[nodes]]\nname = \"x\"\nadversary = { kind = \"silentSearcher\" }\n";
        assert!(Scenario::from_toml(&lazy_searcher).unwrap_err().to_string().contains("nodes[1].adversary"));
    }
}
