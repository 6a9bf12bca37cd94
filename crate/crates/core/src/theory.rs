//! Closed-form steady-state predictions for ACTC.
//!
//! With `μ = max_k μ_k` and `α_k = μ_k/μ`, every agent's steady-state MSE is
//! bracketed by `μ Δ_s` and `μ (Δ_s + Δ_ω)` for small step-sizes.

use nalgebra::{Cholesky, DMatrix};
use thiserror::Error;

use crate::linalg;
use crate::model::{ModelError, RegressionProblem};
use crate::scalar::Real;

/// Condition number above which the aggregate Hessian is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("aggregate matrix Σ α_k π_k R_k is numerically singular (condition estimate {condition:e})")]
    SingularAggregate { condition: f64 },
    #[error("expected {expected} per-agent entries, got {found}")]
    AgentCount { expected: usize, found: usize },
    #[error("strong-convexity constant must be positive, got {0}")]
    InvalidNu(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_len<T>(n: usize, v: &[T]) -> Result<(), TheoryError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(TheoryError::AgentCount {
            expected: n,
            found: v.len(),
        })
    }
}

/// `Δ_s = ζ Tr[(Σ α_kπ_kR_k)⁻¹ (Σ α_k²π_k²σ_k²R_k)]`.
pub fn delta_s<T: Real>(problem: &RegressionProblem<T>, perron: &[T], alphas: &[T], zeta: T) -> Result<T, TheoryError> {
    let n = problem.n_agents();
    check_len(n, perron)?;
    check_len(n, alphas)?;
    let dim = problem.dim();
    let mut h = DMatrix::<T>::zeros(dim, dim);
    let mut s = DMatrix::<T>::zeros(dim, dim);
    for (k, agent) in problem.agents().iter().enumerate() {
        let ap = alphas[k] * perron[k];
        h += agent.r_u() * ap;
        s += agent.r_u() * (ap * ap * agent.sigma2_v());
    }
    let (lo, hi) = linalg::eigen_range(&h);
    let condition = if lo > T::zero() { hi / lo } else { T::max_value().unwrap() };
    if condition.to_f64_lossy() > MAX_CONDITION {
        return Err(TheoryError::SingularAggregate {
            condition: condition.to_f64_lossy(),
        });
    }
    let chol = Cholesky::new(h).ok_or(TheoryError::SingularAggregate {
        condition: condition.to_f64_lossy(),
    })?;
    Ok(zeta * linalg::trace(&chol.solve(&s)))
}

/// Excess term `Δ_ω`, split into its two sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaOmega<T: Real> {
    /// `(2ζ/ν) Σ α_k²π_k²σ_k²ω_k Tr R_k`.
    pub gradient_noise: T,
    /// `cζ²/(2ν)`.
    pub network: T,
}

impl<T: Real> DeltaOmega<T> {
    pub fn total(&self) -> T {
        self.gradient_noise + self.network
    }
}

pub fn delta_omega<T: Real>(
    problem: &RegressionProblem<T>,
    perron: &[T],
    alphas: &[T],
    zeta: T,
    omegas: &[T],
    nu: T,
    c: T,
) -> Result<DeltaOmega<T>, TheoryError> {
    let n = problem.n_agents();
    check_len(n, perron)?;
    check_len(n, alphas)?;
    check_len(n, omegas)?;
    if !(nu > T::zero()) {
        return Err(TheoryError::InvalidNu(nu.to_f64_lossy()));
    }
    if c < T::zero() {
        return Err(TheoryError::InvalidParameter("network-error constant c must be nonnegative"));
    }
    let two = T::of(2.0);
    let sum = problem
        .agents()
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (k, a)| {
            let ap = alphas[k] * perron[k];
            acc + ap * ap * a.sigma2_v() * omegas[k] * linalg::trace(a.r_u())
        });
    Ok(DeltaOmega {
        gradient_noise: two * zeta / nu * sum,
        network: c * zeta * zeta / (two * nu),
    })
}

/// Additive split of the upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition<T: Real> {
    pub uncompressed: T,
    pub gradient_noise_compression: T,
    pub network_error_compression: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryBounds<T: Real> {
    pub mu: T,
    pub delta_s: T,
    pub delta_omega: T,
    pub lower: T,
    pub upper: T,
    pub decomposition: Decomposition<T>,
}

pub fn mse_bounds<T: Real>(mu: T, delta_s: T, delta_omega: DeltaOmega<T>) -> Result<TheoryBounds<T>, TheoryError> {
    if mu < T::zero() || delta_s < T::zero() || delta_omega.gradient_noise < T::zero() || delta_omega.network < T::zero()
    {
        return Err(TheoryError::InvalidParameter("bound inputs must be nonnegative"));
    }
    let decomposition = Decomposition {
        uncompressed: mu * delta_s,
        gradient_noise_compression: mu * delta_omega.gradient_noise,
        network_error_compression: mu * delta_omega.network,
    };
    Ok(TheoryBounds {
        mu,
        delta_s,
        delta_omega: delta_omega.total(),
        lower: decomposition.uncompressed,
        upper: decomposition.uncompressed + decomposition.gradient_noise_compression + decomposition.network_error_compression,
        decomposition,
    })
}

/// Everything the bounds depend on, derived from the problem and topology.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport<T: Real> {
    pub alphas: Vec<T>,
    pub nu: T,
    pub zeta: T,
    pub c: T,
    pub bounds: TheoryBounds<T>,
}

/// Evaluates `Δ_s`, `Δ_ω` and the bounds straight from a problem, its Perron
/// vector and the per-agent compression parameters.
pub fn evaluate<T: Real>(
    problem: &RegressionProblem<T>,
    perron: &[T],
    zeta: T,
    omegas: &[T],
    c: T,
) -> Result<TheoryReport<T>, TheoryError> {
    let steps = problem.scaled_steps()?;
    let nu = problem.strong_convexity_constant(perron, &steps.alphas)?;
    let ds = delta_s(problem, perron, &steps.alphas, zeta)?;
    let dw = delta_omega(problem, perron, &steps.alphas, zeta, omegas, nu, c)?;
    Ok(TheoryReport {
        bounds: mse_bounds(steps.mu_max, ds, dw)?,
        alphas: steps.alphas,
        nu,
        zeta,
        c,
    })
}

/// How agents encode their broadcasts, for bit accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// ACTC with a total resource budget `X` (bits or kept components) per round.
    Compressed { budget: u64 },
    /// Uncompressed vectors of `M` values of `h` bits each.
    Dense,
}

/// Total bits over `t` rounds: `T(Nh + MX + MN)` compressed, `TNMh` dense.
pub fn bit_expense(t: u64, n: u64, m: u64, h: u64, encoding: Encoding) -> u64 {
    match encoding {
        Encoding::Compressed { budget } => t * (n * h + m * budget + m * n),
        Encoding::Dense => t * n * m * h,
    }
}
