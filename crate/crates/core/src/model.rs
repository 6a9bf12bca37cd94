//! Linear regression data model shared by all agents.
//!
//! Agent `k` observes a stream of pairs `(u, d)` with `d = uᵀw° + v`, where the
//! regressor `u` is zero-mean Gaussian with covariance `R_{u,k}` and `v` is
//! independent zero-mean Gaussian noise of variance `σ²_{v,k}`. The module also
//! exposes the problem-level constants consumed by the theory and allocation
//! modules: the scaled step-sizes, the strong-convexity constant and the
//! per-agent distortion coefficients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{self, PsdFailure};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("regressor covariance of agent {agent} is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { agent: usize, asymmetry: f64 },
    #[error("regressor covariance of agent {agent} is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { agent: usize, eigenvalue: f64 },
    #[error("regressor covariance of agent {agent} contains non-finite entries")]
    NonFinite { agent: usize },
    #[error("noise variance of agent {agent} must be nonnegative and finite, got {value}")]
    InvalidNoiseVariance { agent: usize, value: f64 },
    #[error("step-size of agent {agent} must be nonnegative and finite, got {value}")]
    InvalidStepSize { agent: usize, value: f64 },
    #[error("problem has no agents")]
    NoAgents,
    #[error("no agent has a positive-definite regressor covariance")]
    NoPositiveDefiniteAgent,
    #[error("aggregate Hessian is not positive definite (smallest eigenvalue {nu:e})")]
    NotStronglyConvex { nu: f64 },
    #[error("all step-sizes are zero")]
    ZeroStepSizes,
    #[error("agent index {index} out of range for {agents} agents")]
    AgentOutOfRange { index: usize, agents: usize },
}

/// Regressor covariance as supplied by the user.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance<T: Real> {
    Full(DMatrix<T>),
    Diagonal(Vec<T>),
    ScaledIdentity(T),
}

#[derive(Debug, Clone)]
enum Sampler<T: Real> {
    Diagonal(DVector<T>),
    Dense(DMatrix<T>),
}

/// One agent's data statistics and step-size.
#[derive(Debug, Clone)]
pub struct AgentModel<T: Real> {
    r_u: DMatrix<T>,
    sampler: Sampler<T>,
    min_eigenvalue: T,
    norm: T,
    sigma2_v: T,
    step_size: T,
}

impl<T: Real> AgentModel<T> {
    /// Builds an agent model of dimension `dim`. The index is only used to
    /// label errors.
    pub fn new(
        index: usize,
        dim: usize,
        covariance: Covariance<T>,
        sigma2_v: T,
        step_size: T,
    ) -> Result<Self, ModelError> {
        if !(sigma2_v >= T::zero()) || !sigma2_v.is_finite() {
            return Err(ModelError::InvalidNoiseVariance {
                agent: index,
                value: sigma2_v.to_f64_lossy(),
            });
        }
        if !(step_size >= T::zero()) || !step_size.is_finite() {
            return Err(ModelError::InvalidStepSize {
                agent: index,
                value: step_size.to_f64_lossy(),
            });
        }
        let diagonal = match covariance {
            Covariance::ScaledIdentity(s) => Some(vec![s; dim]),
            Covariance::Diagonal(d) => {
                if d.len() != dim {
                    return Err(ModelError::DimensionMismatch {
                        expected: dim,
                        found: d.len(),
                    });
                }
                Some(d)
            }
            Covariance::Full(m) => {
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(ModelError::DimensionMismatch {
                        expected: dim,
                        found: if m.nrows() != dim { m.nrows() } else { m.ncols() },
                    });
                }
                let off_diagonal_zero = (0..dim)
                    .all(|i| (0..dim).all(|j| i == j || m[(i, j)] == T::zero()));
                if off_diagonal_zero {
                    Some(m.diagonal().iter().copied().collect())
                } else {
                    return Self::from_dense(index, m, sigma2_v, step_size);
                }
            }
        };
        let d = diagonal.expect("diagonal form");
        Self::from_diagonal(index, d, sigma2_v, step_size)
    }

    fn from_diagonal(index: usize, d: Vec<T>, sigma2_v: T, step_size: T) -> Result<Self, ModelError> {
        if d.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { agent: index });
        }
        let norm = d.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        let tol = T::tolerance(1e-12, 1.0) * norm;
        let mut clamped = Vec::with_capacity(d.len());
        for v in d {
            if v < -tol {
                return Err(ModelError::NotPsd {
                    agent: index,
                    eigenvalue: v.to_f64_lossy(),
                });
            }
            clamped.push(v.max(T::zero()));
        }
        let diag = DVector::from_vec(clamped);
        let min_eigenvalue = diag.iter().fold(T::max_value().unwrap(), |acc, v| acc.min(*v));
        Ok(Self {
            r_u: DMatrix::from_diagonal(&diag),
            sampler: Sampler::Diagonal(diag.map(|v| v.sqrt())),
            min_eigenvalue,
            norm,
            sigma2_v,
            step_size,
        })
    }

    fn from_dense(index: usize, m: DMatrix<T>, sigma2_v: T, step_size: T) -> Result<Self, ModelError> {
        let parts = linalg::psd_parts(&m).map_err(|f| match f {
            PsdFailure::NotSymmetric { asymmetry } => ModelError::NotSymmetric {
                agent: index,
                asymmetry,
            },
            PsdFailure::Negative { eigenvalue } => ModelError::NotPsd {
                agent: index,
                eigenvalue,
            },
            PsdFailure::NonFinite => ModelError::NonFinite { agent: index },
            PsdFailure::NotSquare => ModelError::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            },
        })?;
        Ok(Self {
            r_u: parts.matrix,
            sampler: Sampler::Dense(parts.sqrt),
            min_eigenvalue: parts.min_eigenvalue,
            norm: parts.norm,
            sigma2_v,
            step_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.r_u.nrows()
    }

    /// Regressor covariance `R_{u,k}`.
    pub fn r_u(&self) -> &DMatrix<T> {
        &self.r_u
    }

    pub fn sigma2_v(&self) -> T {
        self.sigma2_v
    }

    pub fn step_size(&self) -> T {
        self.step_size
    }

    /// Whether `R_{u,k}` is numerically positive definite.
    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue > T::tolerance(1e-12, 1.0) * self.norm && self.norm > T::zero()
    }

    /// Same agent with a different step-size.
    pub fn with_step_size(&self, step_size: T) -> Self {
        Self {
            step_size,
            ..self.clone()
        }
    }

    /// Draws a regressor into `regressor` and returns the matching response.
    pub fn sample_into<R: Rng + ?Sized>(&self, w_true: &DVector<T>, rng: &mut R, regressor: &mut DVector<T>) -> T {
        let dim = self.dim();
        match &self.sampler {
            Sampler::Diagonal(sd) => {
                for m in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    regressor[m] = sd[m] * T::of(z);
                }
            }
            Sampler::Dense(s) => {
                let z = DVector::from_fn(dim, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
                s.mul_to(&z, regressor);
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        let noise = self.sigma2_v.sqrt() * T::of(z);
        regressor.dot(w_true) + noise
    }
}

/// Observation `(u, d)` drawn by one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Real> {
    pub regressor: DVector<T>,
    pub response: T,
}

/// Maximum step-size and the per-agent ratios `μ_k / μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSteps<T: Real> {
    pub mu_max: T,
    pub alphas: Vec<T>,
}

/// The network-wide regression problem.
#[derive(Debug, Clone)]
pub struct RegressionProblem<T: Real> {
    w_true: DVector<T>,
    agents: Vec<AgentModel<T>>,
}

impl<T: Real> RegressionProblem<T> {
    pub fn new(w_true: DVector<T>, agents: Vec<AgentModel<T>>) -> Result<Self, ModelError> {
        if agents.is_empty() {
            return Err(ModelError::NoAgents);
        }
        let dim = w_true.len();
        if let Some(bad) = agents.iter().find(|a| a.dim() != dim) {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        if !agents.iter().any(AgentModel::is_positive_definite) {
            return Err(ModelError::NoPositiveDefiniteAgent);
        }
        Ok(Self { w_true, agents })
    }

    pub fn dim(&self) -> usize {
        self.w_true.len()
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn w_true(&self) -> &DVector<T> {
        &self.w_true
    }

    pub fn agents(&self) -> &[AgentModel<T>] {
        &self.agents
    }

    pub fn agent(&self, k: usize) -> &AgentModel<T> {
        &self.agents[k]
    }

    /// Copy of the problem with every step-size multiplied by `factor`.
    pub fn with_scaled_steps(&self, factor: T) -> Self {
        Self {
            w_true: self.w_true.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| a.with_step_size(a.step_size * factor))
                .collect(),
        }
    }

    fn check_agent(&self, k: usize) -> Result<&AgentModel<T>, ModelError> {
        self.agents.get(k).ok_or(ModelError::AgentOutOfRange {
            index: k,
            agents: self.agents.len(),
        })
    }

    pub fn sample_observation<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Observation<T> {
        let mut regressor = DVector::zeros(self.dim());
        let response = self.agents[k].sample_into(&self.w_true, rng, &mut regressor);
        Observation { regressor, response }
    }

    /// Exact gradient `2(R_{u,k}w − R_{u,k}w°)`.
    pub fn true_gradient(&self, k: usize, w: &DVector<T>) -> DVector<T> {
        let r = self.agents[k].r_u();
        (r * w - r * &self.w_true) * T::of(2.0)
    }

    /// `J_k(w) = (w − w°)ᵀR_{u,k}(w − w°) + σ²_{v,k}`.
    pub fn risk(&self, k: usize, w: &DVector<T>) -> T {
        let e = w - &self.w_true;
        let a = &self.agents[k];
        e.dot(&(a.r_u() * &e)) + a.sigma2_v
    }

    /// `R_{s,k}(w°) = 4 α_k² σ²_{v,k} R_{u,k}`.
    pub fn gradient_noise_covariance_at_optimum(&self, k: usize, alphas: &[T]) -> DMatrix<T> {
        let a = &self.agents[k];
        a.r_u() * (T::of(4.0) * alphas[k] * alphas[k] * a.sigma2_v)
    }

    /// `d_k = α_k² σ²_{v,k} Tr[R_{u,k}]`.
    pub fn distortion_coefficient(&self, k: usize, alphas: &[T]) -> T {
        let a = &self.agents[k];
        alphas[k] * alphas[k] * a.sigma2_v * linalg::trace(a.r_u())
    }

    /// All distortion coefficients.
    pub fn distortion_coefficients(&self, alphas: &[T]) -> Vec<T> {
        (0..self.n_agents())
            .map(|k| self.distortion_coefficient(k, alphas))
            .collect()
    }

    pub fn scaled_steps(&self) -> Result<ScaledSteps<T>, ModelError> {
        let mu_max = self
            .agents
            .iter()
            .fold(T::zero(), |acc, a| acc.max(a.step_size));
        if mu_max <= T::zero() {
            return Err(ModelError::ZeroStepSizes);
        }
        let alphas = self.agents.iter().map(|a| a.step_size / mu_max).collect();
        Ok(ScaledSteps { mu_max, alphas })
    }

    pub fn strong_convexity_constant(&self, perron: &[T], alphas: &[T]) -> Result<T, ModelError> {
        strong_convexity_constant(&self.agents, perron, alphas)
    }

    /// Validated variant of [`Self::true_gradient`].
    pub fn try_true_gradient(&self, k: usize, w: &DVector<T>) -> Result<DVector<T>, ModelError> {
        self.check_agent(k)?;
        if w.len() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: w.len(),
            });
        }
        Ok(self.true_gradient(k, w))
    }
}

/// Instantaneous gradient `2u(uᵀw − d)`.
pub fn stochastic_gradient<T: Real>(regressor: &DVector<T>, response: T, w: &DVector<T>) -> DVector<T> {
    regressor * (T::of(2.0) * (regressor.dot(w) - response))
}

/// Smallest eigenvalue of `2 Σ_k α_k π_k R_{u,k}`.
pub fn strong_convexity_constant<T: Real>(
    agents: &[AgentModel<T>],
    perron: &[T],
    alphas: &[T],
) -> Result<T, ModelError> {
    let n = agents.len();
    if n == 0 {
        return Err(ModelError::NoAgents);
    }
    if perron.len() != n || alphas.len() != n {
        return Err(ModelError::DimensionMismatch {
            expected: n,
            found: if perron.len() != n { perron.len() } else { alphas.len() },
        });
    }
    let dim = agents[0].dim();
    let mut h = DMatrix::<T>::zeros(dim, dim);
    for ((a, &p), &al) in agents.iter().zip(perron).zip(alphas) {
        h += a.r_u() * (T::of(2.0) * al * p);
    }
    let nu = linalg::min_eigenvalue(&h);
    if nu <= T::tolerance(1e-12, 1.0) {
        return Err(ModelError::NotStronglyConvex { nu: nu.to_f64_lossy() });
    }
    Ok(nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(dim: usize, cov: Covariance<f64>, s2: f64) -> AgentModel<f64> {
        AgentModel::new(0, dim, cov, s2, 0.01).unwrap()
    }

    #[test]
    fn noiseless_response_is_exact() {
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let p = RegressionProblem::new(w.clone(), vec![agent(3, Covariance::ScaledIdentity(2.0), 0.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let obs = p.sample_observation(0, &mut rng);
            assert_eq!(obs.response, obs.regressor.dot(&w));
        }
    }

    #[test]
    fn zero_covariance_gives_zero_regressor() {
        let w = DVector::from_vec(vec![1.0, 1.0]);
        let p = RegressionProblem::new(
            w,
            vec![
                agent(2, Covariance::ScaledIdentity(0.0), 1.0),
                agent(2, Covariance::ScaledIdentity(1.0), 1.0),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut nonzero_response = false;
        for _ in 0..10 {
            let obs = p.sample_observation(0, &mut rng);
            assert!(obs.regressor.iter().all(|v| *v == 0.0));
            nonzero_response |= obs.response != 0.0;
        }
        assert!(nonzero_response);
    }

    #[test]
    fn gradient_examples() {
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let w = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(stochastic_gradient(&u, 0.0, &w).as_slice(), &[2.0, 0.0]);
        let u = DVector::from_vec(vec![1.0, 2.0]);
        let w = DVector::from_vec(vec![3.0, -1.0]);
        let d = u.dot(&w);
        assert!(stochastic_gradient(&u, d, &w).iter().all(|v| *v == 0.0));

        let w_true = DVector::from_vec(vec![0.5, 0.25]);
        let p = RegressionProblem::new(w_true.clone(), vec![agent(2, Covariance::ScaledIdentity(1.0), 1.0)]).unwrap();
        assert!(p.true_gradient(0, &w_true).iter().all(|v| *v == 0.0));
        let w = &w_true + DVector::from_vec(vec![1.0, 0.0]);
        let g = p.true_gradient(0, &w);
        assert!((g[0] - 2.0).abs() < 1e-15 && g[1].abs() < 1e-15);
    }

    #[test]
    fn covariance_at_optimum_and_distortion() {
        let p = RegressionProblem::new(
            DVector::zeros(30),
            vec![agent(30, Covariance::ScaledIdentity(1.0), 1.0), agent(30, Covariance::ScaledIdentity(5.0), 1.0)],
        )
        .unwrap();
        let ones = [1.0, 1.0];
        let rs = p.gradient_noise_covariance_at_optimum(0, &ones);
        assert_eq!(rs, DMatrix::identity(30, 30) * 4.0);
        assert_eq!(p.distortion_coefficient(0, &ones), 30.0);
        assert_eq!(p.distortion_coefficient(1, &ones), 150.0);
        let halves = [0.5, 1.0];
        let rs_half = p.gradient_noise_covariance_at_optimum(0, &halves);
        assert_eq!(rs_half * 4.0, rs);
        for k in 0..2 {
            let d = p.distortion_coefficient(k, &halves);
            let tr = linalg::trace(&p.gradient_noise_covariance_at_optimum(k, &halves)) / 4.0;
            assert!((d - tr).abs() <= 1e-15 * d);
        }
    }

    #[test]
    fn strong_convexity_examples() {
        let a = agent(3, Covariance::ScaledIdentity(1.0), 1.0);
        assert_eq!(strong_convexity_constant(&[a], &[1.0], &[1.0]).unwrap(), 2.0);

        let z = agent(2, Covariance::ScaledIdentity(0.0), 1.0);
        let err = strong_convexity_constant(&[z.clone(), z], &[0.5, 0.5], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, ModelError::NotStronglyConvex { .. }));

        let a1 = agent(2, Covariance::Diagonal(vec![1.0, 3.0]), 1.0);
        let a2 = agent(2, Covariance::Diagonal(vec![2.0, 1.0]), 1.0);
        let nu = strong_convexity_constant(&[a1, a2], &[0.5, 0.5], &[1.0, 1.0]).unwrap();
        assert!((nu - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_agents() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            AgentModel::new(4, 2, Covariance::Full(bad), 1.0, 0.1),
            Err(ModelError::NotPsd { agent: 4, .. })
        ));
        assert!(matches!(
            AgentModel::new(0, 2, Covariance::ScaledIdentity(1.0), -1.0, 0.1),
            Err(ModelError::InvalidNoiseVariance { .. })
        ));
        let singular = agent(2, Covariance::Diagonal(vec![1.0, 0.0]), 1.0);
        assert!(matches!(
            RegressionProblem::new(DVector::zeros(2), vec![singular]),
            Err(ModelError::NoPositiveDefiniteAgent)
        ));
    }

    #[test]
    fn scaled_steps_max_alpha_is_one() {
        let w = DVector::<f64>::zeros(2);
        let agents = vec![
            AgentModel::new(0, 2, Covariance::ScaledIdentity(1.0), 1.0, 0.003).unwrap(),
            AgentModel::new(1, 2, Covariance::ScaledIdentity(1.0), 1.0, 0.007).unwrap(),
        ];
        let s = RegressionProblem::new(w, agents).unwrap().scaled_steps().unwrap();
        assert_eq!(s.mu_max, 0.007);
        assert_eq!(s.alphas[1], 1.0);
        assert!((s.alphas[0] - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn dense_covariance_sampling_uses_factor() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.8, 0.8, 1.0]);
        let p = RegressionProblem::new(
            DVector::zeros(2),
            vec![AgentModel::new(0, 2, Covariance::Full(r.clone()), 1.0, 0.1).unwrap()],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let u = p.sample_observation(0, &mut rng).regressor;
            acc += &u * u.transpose();
        }
        acc /= n as f64;
        for (e, t) in acc.iter().zip(r.iter()) {
            assert!((e - t).abs() < 0.03 * t.abs().max(1.0));
        }
    }
}
