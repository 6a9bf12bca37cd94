//! Adapt-compress-then-combine (ACTC) diffusion and the uncompressed
//! adapt-then-combine (ATC) baseline.
//!
//! One synchronous network round of ACTC performs, for every agent `k`:
//!
//! 1. adapt: `ψ_k = w_k − μ_k g_k(w_k)` with a fresh data sample;
//! 2. compress: `q_k ← q_k + ζ Q_k(ψ_k − q_k)`, broadcasting `Q_k(·)` to the
//!    out-neighbors, which apply the same update to their mirror of `q_k`;
//! 3. combine: `w_k = Σ_{ℓ∈N_k} a_{ℓk} q_ℓ` in ascending `ℓ` order.
//!
//! Agents never read each other's `q` directly: every agent owns mirrors of
//! its in-neighbors' compressed states and keeps them in sync through the
//! broadcasts alone.

mod estimator;
mod runner;

pub use estimator::{update_distortion_estimate, DistortionEstimate};
pub use runner::{
    run, run_monte_carlo, MonteCarloResult, Reallocation, ReallocationPolicy, RunConfig, RunOutcome, Strategy,
    Trajectory,
};

use nalgebra::DVector;
use rand::Rng;
use thiserror::Error;

use crate::compression::{CompressionError, CompressionSpec};
use crate::linalg::norm_sq;
use crate::model::RegressionProblem;
use crate::scalar::Real;
use crate::topology::CombinationMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("expected {expected} per-agent entries, got {found}")]
    AgentCount { expected: usize, found: usize },
    #[error("stability parameter zeta must lie in (0, 1], got {0}")]
    InvalidZeta(f64),
    #[error("forgetting factor must lie in (0, 1], got {0}")]
    InvalidForgetting(f64),
    #[error("steady-state window fraction must lie in (0, 1], got {0}")]
    InvalidWindow(f64),
    #[error("reallocation time {at} outside horizon {horizon}")]
    InvalidReallocationTime { at: usize, horizon: usize },
    #[error("reallocation requires the ACTC strategy with distortion estimation enabled")]
    ReallocationUnsupported,
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error("reallocation policy failed: {0}")]
    Reallocation(String),
}

/// Initial compressed states `q_{k,0}`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitPolicy<T: Real> {
    Zeros,
    Given(Vec<DVector<T>>),
}

/// Per-agent iterates plus the mirrors of the in-neighbors' compressed states.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState<T: Real> {
    pub w: DVector<T>,
    pub psi: DVector<T>,
    pub q_self: DVector<T>,
    /// `(ℓ, q_ℓ)` for every in-neighbor `ℓ ≠ k`, ascending in `ℓ`.
    pub q_neighbors: Vec<(usize, DVector<T>)>,
}

impl<T: Real> AgentState<T> {
    /// Mirror of `q_ℓ` held by this agent.
    pub fn mirror(&self, l: usize) -> Option<&DVector<T>> {
        self.q_neighbors
            .binary_search_by_key(&l, |(i, _)| *i)
            .ok()
            .map(|pos| &self.q_neighbors[pos].1)
    }
}

/// Whole-network state with the combination weights it was built from.
#[derive(Debug, Clone)]
pub struct NetworkState<T: Real> {
    agents: Vec<AgentState<T>>,
    /// In-neighborhood of each agent (including itself if `a_kk > 0`) with weights.
    combine: Vec<Vec<(usize, T)>>,
    /// For each sender `ℓ`: `(listener k, slot in k.q_neighbors)`.
    listeners: Vec<Vec<(usize, usize)>>,
    regressor: DVector<T>,
    scratch: DVector<T>,
}

/// Per-agent diagnostics of one network round.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport<T: Real> {
    /// `‖ψ_{k,i} − w_{k,i−1}‖²`.
    pub innovation_sq: Vec<T>,
    /// `‖δ_{k,i}‖²` with `δ = ψ − q_{k,i−1}`.
    pub delta_sq: Vec<T>,
    /// `‖Q_k(δ) − δ‖²`.
    pub error_sq: Vec<T>,
    /// Bits broadcast in this round.
    pub bits: u64,
}

enum Broadcast {
    /// Compressed innovation, applied as `q ← q + ζ b`.
    Delta,
    /// Full state replacing `q` (lossless compression with `ζ = 1`).
    State,
}

impl<T: Real> NetworkState<T> {
    /// Builds `q_{k,0}`, shares it with the out-neighbors and runs the initial
    /// combination `w_{k,0} = Σ a_{ℓk} q_{ℓ,0}`.
    pub fn init(
        problem: &RegressionProblem<T>,
        matrix: &CombinationMatrix<T>,
        policy: &InitPolicy<T>,
    ) -> Result<Self, DiffusionError> {
        let n = problem.n_agents();
        let dim = problem.dim();
        if matrix.n() != n {
            return Err(DiffusionError::AgentCount {
                expected: n,
                found: matrix.n(),
            });
        }
        let q0: Vec<DVector<T>> = match policy {
            InitPolicy::Zeros => vec![DVector::zeros(dim); n],
            InitPolicy::Given(v) => {
                if v.len() != n {
                    return Err(DiffusionError::AgentCount {
                        expected: n,
                        found: v.len(),
                    });
                }
                if let Some(bad) = v.iter().find(|q| q.len() != dim) {
                    return Err(DiffusionError::DimensionMismatch {
                        expected: dim,
                        found: bad.len(),
                    });
                }
                v.clone()
            }
        };
        let combine: Vec<Vec<(usize, T)>> = (0..n)
            .map(|k| {
                matrix
                    .in_neighbors(k)
                    .into_iter()
                    .map(|l| (l, matrix.weight(l, k)))
                    .collect()
            })
            .collect();
        let mut agents: Vec<AgentState<T>> = (0..n)
            .map(|k| AgentState {
                w: DVector::zeros(dim),
                psi: DVector::zeros(dim),
                q_self: q0[k].clone(),
                q_neighbors: combine[k]
                    .iter()
                    .filter(|(l, _)| *l != k)
                    .map(|(l, _)| (*l, q0[*l].clone()))
                    .collect(),
            })
            .collect();
        let mut listeners = vec![Vec::new(); n];
        for (k, agent) in agents.iter().enumerate() {
            for (slot, (l, _)) in agent.q_neighbors.iter().enumerate() {
                listeners[*l].push((k, slot));
            }
        }
        let mut state = Self {
            agents: Vec::new(),
            combine,
            listeners,
            regressor: DVector::zeros(dim),
            scratch: DVector::zeros(dim),
        };
        for k in 0..n {
            let w = state.combined(&agents, k, |a| &a.q_self);
            agents[k].w = w;
        }
        state.agents = agents;
        Ok(state)
    }

    pub fn agents(&self) -> &[AgentState<T>] {
        &self.agents
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// `Σ_{ℓ∈N_k} a_{ℓk} x_ℓ` in ascending `ℓ`, where `x_ℓ` is read from agent
    /// `k`'s own view: its state for `ℓ = k`, its mirror otherwise.
    fn combined(
        &self,
        agents: &[AgentState<T>],
        k: usize,
        own: impl Fn(&AgentState<T>) -> &DVector<T>,
    ) -> DVector<T> {
        let me = &agents[k];
        let mut w = DVector::zeros(me.w.len());
        for &(l, a) in &self.combine[k] {
            let q = if l == k {
                own(me)
            } else {
                me.mirror(l).expect("mirror for every in-neighbor")
            };
            w.axpy(a, q, T::one());
        }
        w
    }

    /// Adaptation step for every agent; fills `psi` and returns `‖ψ − w‖²`.
    fn adapt<R: Rng + ?Sized>(&mut self, problem: &RegressionProblem<T>, rng: &mut R) -> Vec<T> {
        let two = T::of(2.0);
        let mut innovation = Vec::with_capacity(self.agents.len());
        for (k, agent) in self.agents.iter_mut().enumerate() {
            let model = problem.agent(k);
            let d = model.sample_into(problem.w_true(), rng, &mut self.regressor);
            let err = self.regressor.dot(&agent.w) - d;
            let step = model.step_size() * two * err;
            agent.psi.copy_from(&agent.w);
            agent.psi.axpy(-step, &self.regressor, T::one());
            innovation.push(step * step * norm_sq(&self.regressor));
        }
        innovation
    }

    /// One ACTC round. `data_rng` drives the observations, `comp_rng` the
    /// compression operators.
    pub fn actc_step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &mut self,
        problem: &RegressionProblem<T>,
        zeta: T,
        specs: &[CompressionSpec],
        data_rng: &mut R1,
        comp_rng: &mut R2,
    ) -> Result<StepReport<T>, DiffusionError> {
        let n = self.agents.len();
        if specs.len() != n {
            return Err(DiffusionError::AgentCount {
                expected: n,
                found: specs.len(),
            });
        }
        if !(zeta > T::zero() && zeta <= T::one()) {
            return Err(DiffusionError::InvalidZeta(zeta.to_f64_lossy()));
        }
        let innovation_sq = self.adapt(problem, data_rng);
        let mut delta_sq = Vec::with_capacity(n);
        let mut error_sq = Vec::with_capacity(n);
        let mut bits = 0u64;
        let mut payload = DVector::zeros(problem.dim());
        for k in 0..n {
            let spec = &specs[k];
            let agent = &mut self.agents[k];
            self.scratch.copy_from(&agent.psi);
            self.scratch -= &agent.q_self;
            delta_sq.push(norm_sq(&self.scratch));
            let kind = if spec.is_identity() && zeta == T::one() {
                payload.copy_from(&agent.psi);
                error_sq.push(T::zero());
                Broadcast::State
            } else {
                spec.compress_into(&self.scratch, comp_rng, &mut payload)?;
                error_sq.push(
                    payload
                        .iter()
                        .zip(self.scratch.iter())
                        .fold(T::zero(), |acc, (a, b)| acc + (*a - *b) * (*a - *b)),
                );
                Broadcast::Delta
            };
            bits += spec.bit_cost();
            apply(&mut agent.q_self, &payload, &kind, zeta);
            for &(listener, slot) in &self.listeners[k] {
                apply(&mut self.agents[listener].q_neighbors[slot].1, &payload, &kind, zeta);
            }
        }
        self.combine_all(|a| &a.q_self);
        Ok(StepReport {
            innovation_sq,
            delta_sq,
            error_sq,
            bits,
        })
    }

    /// One uncompressed ATC round: `ψ_k = w_k − μ_k g_k(w_k)`,
    /// `w_k = Σ a_{ℓk} ψ_ℓ`. Compressed states are left untouched.
    pub fn atc_step<R: Rng + ?Sized>(&mut self, problem: &RegressionProblem<T>, rng: &mut R) -> Vec<T> {
        let innovation = self.adapt(problem, rng);
        let n = self.agents.len();
        let mut next = Vec::with_capacity(n);
        for k in 0..n {
            let mut w = DVector::zeros(problem.dim());
            for &(l, a) in &self.combine[k] {
                w.axpy(a, &self.agents[l].psi, T::one());
            }
            next.push(w);
        }
        for (agent, w) in self.agents.iter_mut().zip(next) {
            agent.w = w;
        }
        innovation
    }

    fn combine_all(&mut self, own: impl Fn(&AgentState<T>) -> &DVector<T> + Copy) {
        let ws: Vec<DVector<T>> = (0..self.agents.len())
            .map(|k| self.combined(&self.agents, k, own))
            .collect();
        for (agent, w) in self.agents.iter_mut().zip(ws) {
            agent.w = w;
        }
    }

    /// Checks that every mirror equals the owner's `q_self` bit for bit.
    pub fn mirrors_consistent(&self) -> bool {
        self.agents.iter().all(|agent| {
            agent
                .q_neighbors
                .iter()
                .all(|(l, q)| *q == self.agents[*l].q_self)
        })
    }
}

fn apply<T: Real>(q: &mut DVector<T>, payload: &DVector<T>, kind: &Broadcast, zeta: T) {
    match kind {
        Broadcast::Delta => q.axpy(zeta, payload, T::one()),
        Broadcast::State => q.copy_from(payload),
    }
}
