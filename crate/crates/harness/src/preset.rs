//! Named scenarios reproducing the reference experiments.

use crate::config::{
    AllocationDirective, CompressionPlan, CovarianceConfig, FamilyConfig, ProblemSource, RuleKind, ScenarioConfig,
    TopologySource,
};
use crate::HarnessError;

pub const PRESETS: [&str; 3] = ["fig1", "fig3_quantizer", "fig3_sparsifier"];

const DIM: usize = 30;
const AGENTS: usize = 10;
const FIG1_PROBLEM_SEED: u64 = 20_200_601;
const FIG3_TOPOLOGY_SEED: u64 = 3;
const FIG3_W_SEED: u64 = 11;
const FIG1_TOPOLOGY_SEED: u64 = 5;

pub fn preset(name: &str) -> Result<ScenarioConfig, HarnessError> {
    match name {
        "fig1" => Ok(fig1()),
        "fig3_quantizer" => Ok(fig3(FamilyConfig::Quantizer, 20.0, 11.0)),
        "fig3_sparsifier" => Ok(fig3(FamilyConfig::Sparsifier, 150.0, DIM as f64)),
        other => Err(HarnessError::UnknownPreset(other.to_string())),
    }
}

fn fig1() -> ScenarioConfig {
    ScenarioConfig {
        name: "fig1".into(),
        problem: ProblemSource::Generated {
            dim: DIM,
            agents: AGENTS,
            regressor_variance: [1.0, 4.0],
            noise_variance: [0.25, 1.0],
            seed: FIG1_PROBLEM_SEED,
        },
        topology: TopologySource::BollobasRiordan {
            attachment_edges: 2,
            seed: FIG1_TOPOLOGY_SEED,
        },
        rule: RuleKind::Averaging,
        mu: 1e-2,
        step_sizes: None,
        zeta: 0.1,
        value_bits: 32,
        c: 0.0,
        compression: [2, 4, 6, 8]
            .into_iter()
            .map(|level_bits| CompressionPlan::Quantizer { level_bits })
            .collect(),
        allocation: None,
        include_atc: false,
        horizon: 2000,
        runs: 200,
        seed: 1,
        steady_fraction: 0.2,
    }
}

fn fig3(family: FamilyConfig, budget: f64, x_max: f64) -> ScenarioConfig {
    let r = [5.0, 2.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0];
    let s2 = vec![1.0, 0.2, 0.1, 0.1, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1];
    let name = match family {
        FamilyConfig::Quantizer => "fig3_quantizer",
        FamilyConfig::Sparsifier => "fig3_sparsifier",
    };
    ScenarioConfig {
        name: name.into(),
        problem: ProblemSource::Explicit {
            dim: DIM,
            regressors: r.iter().map(|v| CovarianceConfig::ScaledIdentity(*v)).collect(),
            noise_variances: s2,
            w_true: None,
            w_seed: FIG3_W_SEED,
        },
        topology: TopologySource::BollobasRiordan {
            attachment_edges: 2,
            seed: FIG3_TOPOLOGY_SEED,
        },
        rule: RuleKind::RelativeDegree,
        mu: 1e-2,
        step_sizes: None,
        zeta: 0.1,
        value_bits: 32,
        c: 0.0,
        compression: Vec::new(),
        allocation: Some(AllocationDirective {
            family,
            budget,
            x_min: 1.0,
            x_max,
            t_opt: 1600,
            forgetting: 0.01,
            consensus_tol: 1e-12,
            repair: false,
        }),
        include_atc: true,
        horizon: 2000,
        runs: 200,
        seed: 1,
        steady_fraction: 0.1,
    }
}
