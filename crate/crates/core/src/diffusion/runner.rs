//! Single runs and Monte Carlo averaging.
//!
//! Every run draws from two ChaCha streams derived from `(seed, run index)`:
//! one for the data and one for the compression operators. ATC and ACTC
//! therefore see identical observations for the same run index.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DiffusionError, DistortionEstimate, InitPolicy, NetworkState};
use crate::compression::CompressionSpec;
use crate::linalg::norm_sq;
use crate::model::RegressionProblem;
use crate::scalar::Real;
use crate::topology::CombinationMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy<T: Real> {
    Actc { zeta: T, specs: Vec<CompressionSpec> },
    /// Uncompressed baseline; `value_bits` prices the dense broadcasts.
    Atc { value_bits: u32 },
}

/// Chooses new compression specs from the agents' distortion estimates.
pub trait ReallocationPolicy<T: Real>: Sync {
    fn reallocate(&self, estimates: &[DistortionEstimate<T>]) -> Result<Vec<CompressionSpec>, DiffusionError>;
}

impl<T: Real> ReallocationPolicy<T> for Vec<CompressionSpec> {
    fn reallocate(&self, _: &[DistortionEstimate<T>]) -> Result<Vec<CompressionSpec>, DiffusionError> {
        Ok(self.clone())
    }
}

/// Swap of every agent's operator after iteration `at`. All `q` states and
/// mirrors carry over unchanged.
pub struct Reallocation<'a, T: Real> {
    pub at: usize,
    pub policy: &'a dyn ReallocationPolicy<T>,
}

pub struct RunConfig<'a, T: Real> {
    pub problem: &'a RegressionProblem<T>,
    pub matrix: &'a CombinationMatrix<T>,
    pub strategy: Strategy<T>,
    pub horizon: usize,
    pub init: InitPolicy<T>,
    /// Fraction of the final iterations averaged as steady state.
    pub steady_fraction: f64,
    /// Forgetting factor of the online distortion estimators, if enabled.
    pub forgetting: Option<T>,
    pub reallocation: Option<Reallocation<'a, T>>,
}

impl<'a, T: Real> RunConfig<'a, T> {
    pub fn new(
        problem: &'a RegressionProblem<T>,
        matrix: &'a CombinationMatrix<T>,
        strategy: Strategy<T>,
        horizon: usize,
    ) -> Self {
        Self {
            problem,
            matrix,
            strategy,
            horizon,
            init: InitPolicy::Zeros,
            steady_fraction: 0.2,
            forgetting: None,
            reallocation: None,
        }
    }

    /// First iteration of the steady-state window.
    pub fn steady_start(&self) -> usize {
        steady_start(self.horizon, self.steady_fraction)
    }

    fn validate(&self) -> Result<(), DiffusionError> {
        if !(self.steady_fraction > 0.0 && self.steady_fraction <= 1.0) {
            return Err(DiffusionError::InvalidWindow(self.steady_fraction));
        }
        if let Some(xi) = self.forgetting {
            if !(xi > T::zero() && xi <= T::one()) {
                return Err(DiffusionError::InvalidForgetting(xi.to_f64_lossy()));
            }
        }
        let n = self.problem.n_agents();
        if let Strategy::Actc { zeta, specs } = &self.strategy {
            if !(*zeta > T::zero() && *zeta <= T::one()) {
                return Err(DiffusionError::InvalidZeta(zeta.to_f64_lossy()));
            }
            if specs.len() != n {
                return Err(DiffusionError::AgentCount {
                    expected: n,
                    found: specs.len(),
                });
            }
            if let Some(bad) = specs.iter().find(|s| s.dim() != self.problem.dim()) {
                return Err(DiffusionError::DimensionMismatch {
                    expected: self.problem.dim(),
                    found: bad.dim(),
                });
            }
        }
        if let Some(r) = &self.reallocation {
            if r.at == 0 || r.at >= self.horizon {
                return Err(DiffusionError::InvalidReallocationTime {
                    at: r.at,
                    horizon: self.horizon,
                });
            }
            if self.forgetting.is_none() || matches!(self.strategy, Strategy::Atc { .. }) {
                return Err(DiffusionError::ReallocationUnsupported);
            }
        }
        Ok(())
    }
}

fn steady_start(horizon: usize, fraction: f64) -> usize {
    let len = ((horizon as f64) * fraction).ceil().max(1.0) as usize;
    horizon + 1 - len.min(horizon.max(1))
}

/// Squared-error history of a run (or the Monte Carlo mean of many runs).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    /// `agent_sq_err[i][k] = ‖w_{k,i} − w°‖²` for `i = 0..=T`.
    pub agent_sq_err: Vec<Vec<T>>,
    /// Network MSE per iteration (mean over agents).
    pub mse_net: Vec<T>,
    /// Cumulative transmitted bits after each iteration.
    pub bits_cum: Vec<f64>,
    /// Window average of `w̃_ℓᵀ w̃_k` over the steady-state iterations.
    pub steady_cross: DMatrix<T>,
    /// First iteration included in the steady-state window.
    pub steady_start: usize,
}

impl<T: Real> Trajectory<T> {
    pub fn horizon(&self) -> usize {
        self.mse_net.len() - 1
    }

    pub fn n_agents(&self) -> usize {
        self.steady_cross.nrows()
    }

    /// Mean network MSE over iterations `from..=to`.
    pub fn mean_mse(&self, from: usize, to: usize) -> T {
        let slice = &self.mse_net[from..=to];
        slice.iter().fold(T::zero(), |a, v| a + *v) / T::of_usize(slice.len())
    }

    /// Steady-state network MSE (mean over the window).
    pub fn steady_state_mse(&self) -> T {
        self.mean_mse(self.steady_start, self.horizon())
    }

    /// Steady-state MSE of each agent.
    pub fn steady_state_agent_mse(&self) -> Vec<T> {
        (0..self.n_agents()).map(|k| self.steady_cross[(k, k)]).collect()
    }

    /// Normalized steady-state correlation between agents `l` and `k`.
    pub fn steady_correlation(&self, l: usize, k: usize) -> T {
        let c = &self.steady_cross;
        c[(l, k)] / (c[(l, l)] * c[(k, k)]).sqrt()
    }
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome<T: Real> {
    pub trajectory: Trajectory<T>,
    /// Distortion estimates at the reallocation time.
    pub estimates_at_reallocation: Option<Vec<DistortionEstimate<T>>>,
    /// Distortion estimates after the last iteration.
    pub final_estimates: Option<Vec<DistortionEstimate<T>>>,
    /// Specs in force after the reallocation.
    pub reallocated_specs: Option<Vec<CompressionSpec>>,
}

fn run_streams(seed: u64, run_index: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut data = ChaCha8Rng::seed_from_u64(seed);
    data.set_stream(2 * run_index);
    let mut comp = ChaCha8Rng::seed_from_u64(seed);
    comp.set_stream(2 * run_index + 1);
    (data, comp)
}

/// Runs one realization of the configured strategy.
pub fn run<T: Real>(config: &RunConfig<'_, T>, seed: u64, run_index: u64) -> Result<RunOutcome<T>, DiffusionError> {
    config.validate()?;
    let problem = config.problem;
    let n = problem.n_agents();
    let horizon = config.horizon;
    let window_start = config.steady_start();
    let (mut data_rng, mut comp_rng) = run_streams(seed, run_index);
    let mut state = NetworkState::init(problem, config.matrix, &config.init)?;
    let mut estimators: Option<Vec<DistortionEstimate<T>>> =
        config.forgetting.map(|xi| vec![DistortionEstimate::new(xi); n]);

    let mut agent_sq_err = Vec::with_capacity(horizon + 1);
    let mut mse_net = Vec::with_capacity(horizon + 1);
    let mut bits_cum = Vec::with_capacity(horizon + 1);
    let mut cross = DMatrix::<T>::zeros(n, n);
    let mut errors: Vec<DVector<T>> = vec![DVector::zeros(problem.dim()); n];
    let mut bits = 0u64;

    let (mut specs, zeta) = match &config.strategy {
        Strategy::Actc { zeta, specs } => (specs.clone(), *zeta),
        Strategy::Atc { .. } => (Vec::new(), T::one()),
    };
    let dense_bits = match config.strategy {
        Strategy::Atc { value_bits } => (n * problem.dim()) as u64 * value_bits as u64,
        Strategy::Actc { .. } => 0,
    };
    let mut estimates_at_reallocation = None;
    let mut reallocated_specs = None;

    let mut record = |state: &NetworkState<T>, i: usize, bits: u64| {
        let mut row = Vec::with_capacity(n);
        for (k, agent) in state.agents().iter().enumerate() {
            errors[k].copy_from(&agent.w);
            errors[k] -= problem.w_true();
            row.push(norm_sq(&errors[k]));
        }
        let net = row.iter().fold(T::zero(), |a, v| a + *v) / T::of_usize(n);
        if i >= window_start {
            for l in 0..n {
                for k in l..n {
                    let v = if l == k { row[k] } else { errors[l].dot(&errors[k]) };
                    cross[(l, k)] += v;
                }
            }
        }
        agent_sq_err.push(row);
        mse_net.push(net);
        bits_cum.push(bits as f64);
    };

    record(&state, 0, 0);
    for i in 1..=horizon {
        let innovation = match &config.strategy {
            Strategy::Actc { .. } => {
                let rep = state.actc_step(problem, zeta, &specs, &mut data_rng, &mut comp_rng)?;
                bits += rep.bits;
                rep.innovation_sq
            }
            Strategy::Atc { .. } => {
                bits += dense_bits;
                state.atc_step(problem, &mut data_rng)
            }
        };
        if let Some(est) = estimators.as_mut() {
            for (e, v) in est.iter_mut().zip(&innovation) {
                e.update(*v);
            }
        }
        record(&state, i, bits);
        if let Some(r) = &config.reallocation {
            if r.at == i {
                let est = estimators.as_ref().expect("validated: estimators enabled");
                let next = r.policy.reallocate(est)?;
                if next.len() != n {
                    return Err(DiffusionError::AgentCount {
                        expected: n,
                        found: next.len(),
                    });
                }
                specs = next;
                estimates_at_reallocation = Some(est.clone());
                reallocated_specs = Some(specs.clone());
            }
        }
    }

    let count = T::of_usize(horizon + 1 - window_start);
    for l in 0..n {
        for k in l..n {
            let v = cross[(l, k)] / count;
            cross[(l, k)] = v;
            cross[(k, l)] = v;
        }
    }
    Ok(RunOutcome {
        trajectory: Trajectory {
            agent_sq_err,
            mse_net,
            bits_cum,
            steady_cross: cross,
            steady_start: window_start,
        },
        estimates_at_reallocation,
        final_estimates: estimators,
        reallocated_specs,
    })
}

/// Averaged trajectory plus the per-run side information.
#[derive(Debug, Clone)]
pub struct MonteCarloResult<T: Real> {
    pub mean: Trajectory<T>,
    pub runs: usize,
    pub estimates_at_reallocation: Vec<Vec<DistortionEstimate<T>>>,
    pub final_estimates: Vec<Vec<DistortionEstimate<T>>>,
    pub reallocated_specs: Vec<Vec<CompressionSpec>>,
}

/// Runs `runs` independent realizations in parallel and averages them in run
/// order, so the result does not depend on thread scheduling.
pub fn run_monte_carlo<T: Real>(
    config: &RunConfig<'_, T>,
    seed: u64,
    runs: usize,
) -> Result<MonteCarloResult<T>, DiffusionError> {
    config.validate()?;
    assert!(runs > 0, "at least one run");
    let outcomes: Vec<RunOutcome<T>> = (0..runs as u64)
        .into_par_iter()
        .map(|r| run(config, seed, r))
        .collect::<Result<_, _>>()?;

    let first = &outcomes[0].trajectory;
    let len = first.mse_net.len();
    let n = first.n_agents();
    let mut agent_sq_err = vec![vec![T::zero(); n]; len];
    let mut mse_net = vec![T::zero(); len];
    let mut bits_cum = vec![0.0; len];
    let mut cross = DMatrix::<T>::zeros(n, n);
    for o in &outcomes {
        let t = &o.trajectory;
        for i in 0..len {
            for k in 0..n {
                agent_sq_err[i][k] += t.agent_sq_err[i][k];
            }
            mse_net[i] += t.mse_net[i];
            bits_cum[i] += t.bits_cum[i];
        }
        cross += &t.steady_cross;
    }
    let scale = T::of_usize(runs);
    for i in 0..len {
        for v in agent_sq_err[i].iter_mut() {
            *v /= scale;
        }
        mse_net[i] /= scale;
        bits_cum[i] /= runs as f64;
    }
    cross /= scale;
    let steady_start = first.steady_start;
    let mut estimates_at_reallocation = Vec::new();
    let mut final_estimates = Vec::new();
    let mut reallocated_specs = Vec::new();
    for o in outcomes {
        if let Some(e) = o.estimates_at_reallocation {
            estimates_at_reallocation.push(e);
        }
        if let Some(e) = o.final_estimates {
            final_estimates.push(e);
        }
        if let Some(s) = o.reallocated_specs {
            reallocated_specs.push(s);
        }
    }
    Ok(MonteCarloResult {
        mean: Trajectory {
            agent_sq_err,
            mse_net,
            bits_cum,
            steady_cross: cross,
            steady_start,
        },
        runs,
        estimates_at_reallocation,
        final_estimates,
        reallocated_specs,
    })
}
