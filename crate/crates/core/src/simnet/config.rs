//! Scenario files: TOML, strictly parsed, validated before any run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::Mode;
use crate::sexpr;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    pub fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn path(&self) -> &str {
        let ConfigError::Invalid { path, .. } = self;
        path
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub rounds: u64,
    #[serde(default)]
    pub seed: u64,
    /// How many rounds a submission may trail its issuer.
    #[serde(default = "default_max_lag")]
    pub max_lag: u64,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub faults: Vec<FaultConfig>,
    #[serde(default)]
    pub identity: Vec<IdentityOp>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_max_lag() -> u64 {
    crate::entangle::DEFAULT_MAX_LAG
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologyConfig {
    /// Every holder links to one anchor.
    Centralized { holders: usize },
    /// An authority at the root of `levels` tiers: `levels - 1` tiers of
    /// intermediaries, tier `j` holding `arity^j` nodes, then holders
    /// assigned round-robin to the last tier.
    Federated { levels: u32, arity: usize, holders: usize },
    /// Every holder links to every anchor.
    Interoperated { anchors: usize, holders: usize },
    /// Every node is a peer and an anchor.
    Decentralized {
        peers: usize,
        #[serde(default)]
        shape: Shape,
        /// Extra random edges for the `random` shape.
        #[serde(default)]
        chords: usize,
        /// Undirected edges for the `explicit` shape.
        #[serde(default)]
        edges: Vec<[usize; 2]>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    #[default]
    Ring,
    Mesh,
    Random,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FaultConfig {
    /// At `round`, the node gives the second victim receipts from a
    /// different tree than everyone else.
    Equivocate {
        node: String,
        round: u64,
        #[serde(default)]
        victims: Vec<String>,
    },
    /// The issuer sends no receipt for the holder's round-`round` root.
    WithholdReceipt { issuer: String, holder: String, round: u64 },
    /// At `round`, the node rewrites its previous round.
    ForkHistory { node: String, round: u64 },
}

impl FaultConfig {
    pub fn round(&self) -> u64 {
        match self {
            FaultConfig::Equivocate { round, .. }
            | FaultConfig::WithholdReceipt { round, .. }
            | FaultConfig::ForkHistory { round, .. } => *round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IdentityOp {
    Issue {
        round: u64,
        label: String,
        issuer: String,
        subject: String,
        claims: String,
        mode: Mode,
    },
    Revoke { round: u64, credential: String },
    Check { round: u64, credential: String, verifier: String },
    Policy {
        round: u64,
        holder: String,
        guardians: Vec<String>,
        threshold: u32,
    },
    Recover { round: u64, holder: String, endorsers: Vec<String> },
}

impl IdentityOp {
    pub fn round(&self) -> u64 {
        match self {
            IdentityOp::Issue { round, .. }
            | IdentityOp::Revoke { round, .. }
            | IdentityOp::Check { round, .. }
            | IdentityOp::Policy { round, .. }
            | IdentityOp::Recover { round, .. } => *round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub metrics: String,
    pub events: String,
    pub ledgers: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            metrics: "metrics.jsonl".into(),
            events: "events.jsonl".into(),
            ledgers: "ledgers".into(),
        }
    }
}

impl ScenarioConfig {
    /// Parses and checks field-level constraints. Constraints that need
    /// the built topology (labels, connectivity) are checked by
    /// `Topology::build` and the simulator.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::de::Deserializer::parse(text)
            .map_err(|e| ConfigError::at("<document>", e.to_string().trim_end()))?;
        let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::at(
                if path == "." { "<document>".to_string() } else { path },
                e.inner().to_string().trim_end(),
            )
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rounds == 0 {
            return Err(ConfigError::at("rounds", "must be at least 1"));
        }
        let positive = |path: &str, n: usize| {
            if n == 0 {
                Err(ConfigError::at(path, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        match &self.topology {
            TopologyConfig::Centralized { holders } => positive("topology.holders", *holders)?,
            TopologyConfig::Federated { levels, arity, holders } => {
                positive("topology.levels", *levels as usize)?;
                positive("topology.arity", *arity)?;
                positive("topology.holders", *holders)?;
            }
            TopologyConfig::Interoperated { anchors, holders } => {
                if *anchors < 2 {
                    return Err(ConfigError::at("topology.anchors", "must be at least 2"));
                }
                positive("topology.holders", *holders)?;
            }
            TopologyConfig::Decentralized { peers, .. } => {
                if *peers < 2 {
                    return Err(ConfigError::at("topology.peers", "must be at least 2"));
                }
            }
        }
        for (i, fault) in self.faults.iter().enumerate() {
            if fault.round() >= self.rounds {
                return Err(ConfigError::at(format!("faults[{i}].round"), "beyond the last round"));
            }
            let min = match fault {
                FaultConfig::Equivocate { .. } | FaultConfig::ForkHistory { .. } => 1,
                FaultConfig::WithholdReceipt { .. } => 0,
            };
            if fault.round() < min {
                return Err(ConfigError::at(format!("faults[{i}].round"), "must be at least 1"));
            }
        }
        for (i, op) in self.identity.iter().enumerate() {
            if op.round() >= self.rounds {
                return Err(ConfigError::at(format!("identity[{i}].round"), "beyond the last round"));
            }
            if let IdentityOp::Issue { claims, .. } = op {
                sexpr::parse(claims)
                    .map_err(|e| ConfigError::at(format!("identity[{i}].claims"), e.to_string()))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
rounds = 4
seed = 3
[topology]
kind = "federated"
levels = 2
arity = 3
holders = 9
"#;

    #[test]
    fn parses_minimal() {
        let c = ScenarioConfig::from_toml(BASE).unwrap();
        assert_eq!(c.topology, TopologyConfig::Federated { levels: 2, arity: 3, holders: 9 });
        assert_eq!(c.max_lag, 1);
        assert_eq!(c.output.ledgers, "ledgers");
    }

    #[test]
    fn zero_arity_names_field() {
        let err = ScenarioConfig::from_toml(&BASE.replace("arity = 3", "arity = 0")).unwrap_err();
        assert_eq!(err.path(), "topology.arity");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ScenarioConfig::from_toml(&format!("{BASE}colour = 1\n")).unwrap_err();
        assert_eq!(err.path(), "topology");
        let err = ScenarioConfig::from_toml(&BASE.replace("seed = 3", "seed = 3\nspeed = 1")).unwrap_err();
        assert!(err.to_string().contains("speed"), "{err}");
    }

    #[test]
    fn tagged_sections_reject_unknown_keys() {
        let text = format!("{BASE}\n[[faults]]\nkind = \"fork-history\"\nnode = \"holder-0\"\nround = 2\nextra = true\n");
        let err = ScenarioConfig::from_toml(&text).unwrap_err();
        assert!(err.path().starts_with("faults"), "{err}");

        let text = format!("{BASE}\n[[identity]]\nop = \"revoke\"\nround = 1\ncredential = \"c\"\n");
        let c = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(c.identity.len(), 1);
    }

    #[test]
    fn bad_claims_rejected() {
        let text = format!(
            "{BASE}\n[[identity]]\nop = \"issue\"\nround = 1\nlabel = \"c\"\nissuer = \"authority\"\nsubject = \"holder-0\"\nclaims = \"((\"\nmode = \"issuer-controlled\"\n"
        );
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap_err().path(), "identity[0].claims");
    }
}
