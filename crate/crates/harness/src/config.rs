//! Scenario configuration, loaded from JSON or TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub problem: ProblemSource,
    pub topology: TopologySource,
    #[serde(default)]
    pub rule: RuleKind,
    /// Common step-size `μ`, unless `step_sizes` is given.
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_sizes: Option<Vec<f64>>,
    pub zeta: f64,
    /// Bits per transmitted real value (`h`).
    #[serde(default = "default_value_bits")]
    pub value_bits: u32,
    /// Network-error constant of the upper bound.
    #[serde(default)]
    pub c: f64,
    /// One ACTC trajectory per plan. Ignored when `allocation` is set.
    #[serde(default)]
    pub compression: Vec<CompressionPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationDirective>,
    /// Also simulate the uncompressed ATC reference (with steps `μ_k ζ`).
    #[serde(default)]
    pub include_atc: bool,
    pub horizon: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_steady_fraction")]
    pub steady_fraction: f64,
}

fn default_value_bits() -> u32 {
    32
}

fn default_runs() -> usize {
    200
}

fn default_steady_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    /// Diagonal regressor covariances and noise variances drawn uniformly.
    Generated {
        dim: usize,
        agents: usize,
        regressor_variance: [f64; 2],
        noise_variance: [f64; 2],
        seed: u64,
    },
    Explicit {
        dim: usize,
        regressors: Vec<CovarianceConfig>,
        noise_variances: Vec<f64>,
        /// Defaults to a random unit-norm vector drawn from `w_seed`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w_true: Option<Vec<f64>>,
        #[serde(default)]
        w_seed: u64,
    },
}

impl ProblemSource {
    pub fn n_agents(&self) -> usize {
        match self {
            Self::Generated { agents, .. } => *agents,
            Self::Explicit { regressors, .. } => regressors.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Generated { dim, .. } | Self::Explicit { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceConfig {
    ScaledIdentity(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySource {
    BollobasRiordan {
        #[serde(default = "default_attachment")]
        attachment_edges: usize,
        seed: u64,
    },
    /// Edge list file (`nodes N` header, then `from to` lines).
    EdgeList { path: String },
    /// Combination matrix given directly; `rule` is ignored.
    Matrix {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
    },
}

fn default_attachment() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    #[default]
    Averaging,
    RelativeDegree,
}

/// Compression used by every agent of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressionPlan {
    Quantizer { level_bits: u32 },
    Sparsifier { kept: usize },
    Identity,
    PerAgent { specs: Vec<AgentSpecConfig> },
}

impl CompressionPlan {
    pub fn label(&self) -> String {
        match self {
            Self::Quantizer { level_bits } => format!("quantizer_r{level_bits}"),
            Self::Sparsifier { kept } => format!("sparsifier_s{kept}"),
            Self::Identity => "identity".into(),
            Self::PerAgent { .. } => "per_agent".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpecConfig {
    Quantizer { level_bits: u32 },
    Sparsifier { kept: usize },
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyConfig {
    Quantizer,
    Sparsifier,
}

/// Mid-run reallocation from online estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationDirective {
    pub family: FamilyConfig,
    pub budget: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub t_opt: usize,
    #[serde(default = "default_forgetting")]
    pub forgetting: f64,
    #[serde(default = "default_consensus_tol")]
    pub consensus_tol: f64,
    /// Hand leftover integer budget out greedily after flooring.
    #[serde(default)]
    pub repair: bool,
}

fn default_forgetting() -> f64 {
    0.01
}

fn default_consensus_tol() -> f64 {
    1e-12
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_and_toml_agree() {
        let json = r#"{
            "name": "t", "mu": 0.01, "zeta": 0.1, "horizon": 10,
            "problem": {"kind": "generated", "dim": 3, "agents": 2,
                        "regressor_variance": [1, 4], "noise_variance": [0.25, 1], "seed": 1},
            "topology": {"kind": "bollobas_riordan", "seed": 3},
            "compression": [{"kind": "quantizer", "level_bits": 2}]
        }"#;
        let toml = r#"
            name = "t"
            mu = 0.01
            zeta = 0.1
            horizon = 10
            [problem]
            kind = "generated"
            dim = 3
            agents = 2
            regressor_variance = [1.0, 4.0]
            noise_variance = [0.25, 1.0]
            seed = 1
            [topology]
            kind = "bollobas_riordan"
            seed = 3
            [[compression]]
            kind = "quantizer"
            level_bits = 2
        "#;
        let a = ScenarioConfig::from_json(json).unwrap();
        let b = ScenarioConfig::from_toml(toml).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.runs, 200);
        let mut c = a.clone();
        c.zeta = 0.2;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = r#"{"name": "t", "mu": 0.01, "zeta": 0.1, "horizon": 10, "typo": 1,
            "problem": {"kind": "generated", "dim": 3, "agents": 2,
                        "regressor_variance": [1, 4], "noise_variance": [0.25, 1], "seed": 1},
            "topology": {"kind": "bollobas_riordan", "seed": 3}}"#;
        assert!(matches!(ScenarioConfig::from_json(bad), Err(HarnessError::Config(_))));
    }
}
