//! Turns a [`ScenarioConfig`] into core objects and runs it.

use actc_core::allocation::{self, AllocationProblem, Family};
use actc_core::compression::CompressionSpec;
use actc_core::diffusion::{
    run_monte_carlo, DiffusionError, DistortionEstimate, MonteCarloResult, Reallocation, ReallocationPolicy,
    RunConfig, Strategy,
};
use actc_core::model::{AgentModel, Covariance, RegressionProblem};
use actc_core::theory::{self, TheoryReport};
use actc_core::topology::{
    self, averaging_rule, bollobas_riordan, consensus_perron_estimate, relative_degree_rule, Adjacency,
    CombinationMatrix,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{
    AgentSpecConfig, AllocationDirective, CompressionPlan, CovarianceConfig, FamilyConfig, ProblemSource, RuleKind,
    ScenarioConfig, TopologySource,
};
use crate::HarnessError;

const PERRON_TOL: f64 = 1e-15;
const PERRON_MAX_ITERS: usize = 1_000_000;

/// Fully built scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub problem: RegressionProblem<f64>,
    pub matrix: CombinationMatrix<f64>,
    pub adjacency: Option<Adjacency>,
    /// Perron vector from power iteration (reference value).
    pub perron: Vec<f64>,
    /// Largest step-size and the ratios `α_k`.
    pub mu_max: f64,
    pub alphas: Vec<f64>,
}

impl Scenario {
    pub fn build(config: &ScenarioConfig) -> Result<Self, HarnessError> {
        check_config(config)?;
        let problem = build_problem(config)?;
        let (matrix, adjacency) = build_matrix(config)?;
        if matrix.n() != problem.n_agents() {
            return Err(HarnessError::Config(format!(
                "topology has {} nodes but the problem has {} agents",
                matrix.n(),
                problem.n_agents()
            )));
        }
        let perron = topology::perron(&matrix, PERRON_TOL, PERRON_MAX_ITERS)?.as_slice().to_vec();
        let steps = problem.scaled_steps()?;
        Ok(Self {
            config: config.clone(),
            problem,
            matrix,
            adjacency,
            perron,
            mu_max: steps.mu_max,
            alphas: steps.alphas,
        })
    }

    pub fn n(&self) -> usize {
        self.problem.n_agents()
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    /// True distortion coefficients `d_k`.
    pub fn distortions(&self) -> Vec<f64> {
        self.problem.distortion_coefficients(&self.alphas)
    }

    pub fn specs_for(&self, plan: &CompressionPlan) -> Result<Vec<CompressionSpec>, HarnessError> {
        let (dim, h) = (self.dim(), self.config.value_bits);
        let one = |s: AgentSpecConfig| -> Result<CompressionSpec, HarnessError> {
            Ok(match s {
                AgentSpecConfig::Quantizer { level_bits } => CompressionSpec::quantizer(dim, level_bits, h)?,
                AgentSpecConfig::Sparsifier { kept } => CompressionSpec::sparsifier(dim, kept, h)?,
                AgentSpecConfig::Identity => CompressionSpec::identity(dim, h),
            })
        };
        let n = self.n();
        match plan {
            CompressionPlan::Quantizer { level_bits } => {
                Ok(vec![one(AgentSpecConfig::Quantizer { level_bits: *level_bits })?; n])
            }
            CompressionPlan::Sparsifier { kept } => Ok(vec![one(AgentSpecConfig::Sparsifier { kept: *kept })?; n]),
            CompressionPlan::Identity => Ok(vec![one(AgentSpecConfig::Identity)?; n]),
            CompressionPlan::PerAgent { specs } => {
                if specs.len() != n {
                    return Err(HarnessError::Config(format!(
                        "per-agent compression lists {} specs for {n} agents",
                        specs.len()
                    )));
                }
                specs.iter().map(|s| one(*s)).collect()
            }
        }
    }

    /// Theory bounds for a set of per-agent operators.
    pub fn theory(&self, specs: &[CompressionSpec]) -> Result<TheoryReport<f64>, HarnessError> {
        let omegas: Vec<f64> = specs.iter().map(|s| s.omega().value()).collect();
        Ok(theory::evaluate(
            &self.problem,
            &self.perron,
            self.config.zeta,
            &omegas,
            self.config.c,
        )?)
    }

    /// Allocation problem of `directive` with the given Perron weights and distortions.
    pub fn allocation_problem(
        &self,
        directive: &AllocationDirective,
        perron: Vec<f64>,
        distortions: Vec<f64>,
    ) -> Result<AllocationProblem<f64>, HarnessError> {
        Ok(AllocationProblem::new(
            family(directive.family),
            self.dim(),
            directive.budget,
            directive.x_min,
            directive.x_max,
            perron,
            distortions,
        )?)
    }

    /// Integer uniform split `⌊X/N⌋` used before the reallocation.
    pub fn uniform_specs(&self, directive: &AllocationDirective) -> Result<Vec<CompressionSpec>, HarnessError> {
        let x = (directive.budget / self.n() as f64).floor() as u32;
        Ok(allocation::to_specs(
            family(directive.family),
            self.dim(),
            self.config.value_bits,
            &vec![x; self.n()],
        )?)
    }
}

pub fn family(f: FamilyConfig) -> Family {
    match f {
        FamilyConfig::Quantizer => Family::QuantizerHighRes,
        FamilyConfig::Sparsifier => Family::Sparsifier,
    }
}

fn check_config(config: &ScenarioConfig) -> Result<(), HarnessError> {
    let bad = |m: String| Err(HarnessError::Config(m));
    if config.horizon == 0 {
        return bad("horizon must be positive".into());
    }
    if config.runs == 0 {
        return bad("runs must be positive".into());
    }
    if !(config.zeta > 0.0 && config.zeta <= 1.0) {
        return bad(format!("zeta must lie in (0, 1], got {}", config.zeta));
    }
    if config.allocation.is_none() && config.compression.is_empty() && !config.include_atc {
        return bad("nothing to simulate: no compression plans, allocation or ATC reference".into());
    }
    if let Some(a) = &config.allocation {
        if a.t_opt == 0 || a.t_opt >= config.horizon {
            return bad(format!("t_opt {} must lie strictly inside the horizon {}", a.t_opt, config.horizon));
        }
        if !(a.forgetting > 0.0 && a.forgetting <= 1.0) {
            return bad(format!("forgetting factor must lie in (0, 1], got {}", a.forgetting));
        }
    }
    Ok(())
}

fn random_unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

fn build_problem(config: &ScenarioConfig) -> Result<RegressionProblem<f64>, HarnessError> {
    let n = config.problem.n_agents();
    let steps = match &config.step_sizes {
        Some(s) if s.len() != n => {
            return Err(HarnessError::Config(format!("{} step-sizes for {n} agents", s.len())));
        }
        Some(s) => s.clone(),
        None => vec![config.mu; n],
    };
    match &config.problem {
        ProblemSource::Generated {
            dim,
            agents,
            regressor_variance: [r_lo, r_hi],
            noise_variance: [s_lo, s_hi],
            seed,
        } => {
            if !(r_lo <= r_hi && s_lo <= s_hi) {
                return Err(HarnessError::Config("variance ranges must be ordered".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let w_true = random_unit_vector(*dim, &mut rng);
            let mut models = Vec::with_capacity(*agents);
            for (k, mu) in steps.iter().enumerate() {
                let diag: Vec<f64> = (0..*dim).map(|_| uniform(&mut rng, *r_lo, *r_hi)).collect();
                let s2 = uniform(&mut rng, *s_lo, *s_hi);
                models.push(AgentModel::new(k, *dim, Covariance::Diagonal(diag), s2, *mu)?);
            }
            Ok(RegressionProblem::new(w_true, models)?)
        }
        ProblemSource::Explicit {
            dim,
            regressors,
            noise_variances,
            w_true,
            w_seed,
        } => {
            if noise_variances.len() != regressors.len() {
                return Err(HarnessError::Config(format!(
                    "{} noise variances for {} agents",
                    noise_variances.len(),
                    regressors.len()
                )));
            }
            let w = match w_true {
                Some(w) => DVector::from_vec(w.clone()),
                None => random_unit_vector(*dim, &mut ChaCha8Rng::seed_from_u64(*w_seed)),
            };
            let models = regressors
                .iter()
                .zip(noise_variances)
                .zip(&steps)
                .enumerate()
                .map(|(k, ((r, s2), mu))| AgentModel::new(k, *dim, covariance(r, *dim)?, *s2, *mu))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(RegressionProblem::new(w, models)?)
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn covariance(c: &CovarianceConfig, dim: usize) -> Result<Covariance<f64>, actc_core::model::ModelError> {
    Ok(match c {
        CovarianceConfig::ScaledIdentity(s) => Covariance::ScaledIdentity(*s),
        CovarianceConfig::Diagonal(d) => Covariance::Diagonal(d.clone()),
        CovarianceConfig::Full(rows) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(actc_core::model::ModelError::DimensionMismatch {
                    expected: dim,
                    found: rows.len(),
                });
            }
            Covariance::Full(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
        }
    })
}

fn build_matrix(config: &ScenarioConfig) -> Result<(CombinationMatrix<f64>, Option<Adjacency>), HarnessError> {
    let n = config.problem.n_agents();
    let adjacency = match &config.topology {
        TopologySource::BollobasRiordan { attachment_edges, seed } => {
            bollobas_riordan(n, *attachment_edges, &mut ChaCha8Rng::seed_from_u64(*seed))?
        }
        TopologySource::EdgeList { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            Adjacency::from_edge_list(&text)?
        }
        TopologySource::Matrix { rows, path } => {
            let m = match (rows, path) {
                (Some(rows), None) => {
                    let k = rows.len();
                    if rows.iter().any(|r| r.len() != k) {
                        return Err(HarnessError::Config("combination matrix rows must be square".into()));
                    }
                    DMatrix::from_fn(k, k, |i, j| rows[i][j])
                }
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                    topology::parse_matrix_csv(&text)?
                }
                _ => {
                    return Err(HarnessError::Config(
                        "matrix topology needs exactly one of `rows` or `path`".into(),
                    ))
                }
            };
            return Ok((topology::validate(m)?, None));
        }
    };
    let matrix = match config.rule {
        RuleKind::Averaging => averaging_rule(&adjacency)?,
        RuleKind::RelativeDegree => relative_degree_rule(&adjacency)?,
    };
    Ok((matrix, Some(adjacency)))
}

/// Online reallocation: KKT on the consensus Perron estimate and the raw
/// smoothed distortion values, floored (optionally repaired).
pub struct OnlineAllocation<'a> {
    pub scenario: &'a Scenario,
    pub directive: &'a AllocationDirective,
    pub perron: Vec<f64>,
}

impl OnlineAllocation<'_> {
    pub fn solve(&self, distortions: Vec<f64>) -> Result<(Vec<f64>, Vec<u32>), HarnessError> {
        let problem = self
            .scenario
            .allocation_problem(self.directive, self.perron.clone(), distortions)?;
        let sol = allocation::solve_kkt(&problem)?;
        let x = allocation::round_to_integer(&problem, &sol.x_real, self.directive.repair);
        Ok((sol.x_real, x))
    }
}

impl ReallocationPolicy<f64> for OnlineAllocation<'_> {
    fn reallocate(&self, estimates: &[DistortionEstimate<f64>]) -> Result<Vec<CompressionSpec>, DiffusionError> {
        let d = estimates.iter().map(|e| e.value()).collect();
        let (_, x) = self.solve(d).map_err(|e| DiffusionError::Reallocation(e.to_string()))?;
        allocation::to_specs(
            family(self.directive.family),
            self.scenario.dim(),
            self.scenario.config.value_bits,
            &x,
        )
        .map_err(|e| DiffusionError::Reallocation(e.to_string()))
    }
}

/// One simulated curve.
#[derive(Debug, Clone)]
pub struct Curve {
    pub label: String,
    pub result: MonteCarloResult<f64>,
    /// Theory for the operators in force at the end of the run, when they are
    /// the same in every run.
    pub theory: Option<TheoryReport<f64>>,
}

/// Allocation outcome of a scenario with a reallocation directive.
#[derive(Debug, Clone)]
pub struct AllocationOutcome {
    pub consensus_perron: Vec<f64>,
    pub consensus_iterations: Vec<usize>,
    /// Solution with the true Perron vector and distortions.
    pub oracle: allocation::AllocationSolution<f64>,
    pub oracle_x: Vec<u32>,
    pub oracle_kkt: allocation::KktReport<f64>,
    /// Allocation chosen online in each run.
    pub online_x: Vec<Vec<u32>>,
    /// Mean over runs of the smoothed distortion values at `t_opt`.
    pub mean_estimates: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub curves: Vec<Curve>,
    pub allocation: Option<AllocationOutcome>,
}

impl ScenarioResult {
    pub fn curve(&self, label: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.label == label)
    }
}

/// Runs every curve of the scenario with `runs` Monte Carlo runs from `seed`.
pub fn simulate(scenario: &Scenario, runs: usize, seed: u64) -> Result<ScenarioResult, HarnessError> {
    let cfg = &scenario.config;
    let mut curves = Vec::new();
    let mut allocation_outcome = None;
    let base = |strategy| {
        let mut rc = RunConfig::new(&scenario.problem, &scenario.matrix, strategy, cfg.horizon);
        rc.steady_fraction = cfg.steady_fraction;
        rc
    };

    if let Some(directive) = &cfg.allocation {
        let uniform = scenario.uniform_specs(directive)?;
        let strategy = Strategy::Actc {
            zeta: cfg.zeta,
            specs: uniform.clone(),
        };
        let mut rc = base(strategy.clone());
        rc.forgetting = Some(directive.forgetting);
        curves.push(Curve {
            label: "uniform".into(),
            result: run_monte_carlo(&rc, seed, runs)?,
            theory: Some(scenario.theory(&uniform)?),
        });

        let consensus = consensus_perron_estimate(&scenario.matrix, directive.consensus_tol, PERRON_MAX_ITERS)?;
        let policy = OnlineAllocation {
            scenario,
            directive,
            perron: consensus.perron.as_slice().to_vec(),
        };
        let mut rc = base(strategy);
        rc.forgetting = Some(directive.forgetting);
        rc.reallocation = Some(Reallocation {
            at: directive.t_opt,
            policy: &policy,
        });
        let optimized = run_monte_carlo(&rc, seed, runs)?;

        let oracle_problem = scenario.allocation_problem(directive, scenario.perron.clone(), scenario.distortions())?;
        let oracle = allocation::solve_kkt(&oracle_problem)?;
        let oracle_x = allocation::round_to_integer(&oracle_problem, &oracle.x_real, directive.repair);
        let oracle_kkt = allocation::verify_kkt(&oracle_problem, &oracle);
        let online_x: Vec<Vec<u32>> = optimized
            .reallocated_specs
            .iter()
            .map(|specs| specs.iter().map(|s| s.resource().unwrap_or(0) as u32).collect())
            .collect();
        let mut mean_estimates = vec![0.0; scenario.n()];
        for est in &optimized.estimates_at_reallocation {
            for (m, e) in mean_estimates.iter_mut().zip(est) {
                *m += e.value();
            }
        }
        for m in mean_estimates.iter_mut() {
            *m /= optimized.estimates_at_reallocation.len().max(1) as f64;
        }
        let shared_theory = match online_x.first() {
            Some(first) if online_x.iter().all(|x| x == first) => {
                let specs = optimized.reallocated_specs[0].clone();
                Some(scenario.theory(&specs)?)
            }
            _ => None,
        };
        curves.push(Curve {
            label: "optimized".into(),
            result: optimized,
            theory: shared_theory,
        });
        allocation_outcome = Some(AllocationOutcome {
            consensus_perron: consensus.perron.as_slice().to_vec(),
            consensus_iterations: consensus.iterations,
            oracle,
            oracle_x,
            oracle_kkt,
            online_x,
            mean_estimates,
        });
    } else {
        for plan in &cfg.compression {
            let specs = scenario.specs_for(plan)?;
            let rc = base(Strategy::Actc {
                zeta: cfg.zeta,
                specs: specs.clone(),
            });
            curves.push(Curve {
                label: plan.label(),
                result: run_monte_carlo(&rc, seed, runs)?,
                theory: Some(scenario.theory(&specs)?),
            });
        }
    }

    if cfg.include_atc {
        let atc_problem = scenario.problem.with_scaled_steps(cfg.zeta);
        let mut rc = RunConfig::new(
            &atc_problem,
            &scenario.matrix,
            Strategy::Atc {
                value_bits: cfg.value_bits,
            },
            cfg.horizon,
        );
        rc.steady_fraction = cfg.steady_fraction;
        let identity = vec![CompressionSpec::identity(scenario.dim(), cfg.value_bits); scenario.n()];
        curves.push(Curve {
            label: "atc".into(),
            result: run_monte_carlo(&rc, seed, runs)?,
            theory: Some(scenario.theory(&identity)?),
        });
    }
    Ok(ScenarioResult {
        curves,
        allocation: allocation_outcome,
    })
}
