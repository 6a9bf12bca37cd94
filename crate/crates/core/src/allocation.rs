//! Budget-constrained choice of per-agent compression resources.
//!
//! Minimizes `Σ_k π_k² d_k ω(x_k)` subject to `Σ_k x_k ≤ X` and
//! `x_min ≤ x_k ≤ x_max`, where `x_k` is a bit count (quantizer, with the
//! high-resolution `ω = M/(2^x − 1)²`) or a number of kept components
//! (sparsifier, `ω = M/x − 1`). Both objectives are strictly convex and
//! decreasing, so the continuous problem is solved by waterfilling on the
//! budget multiplier `λ₀`.

use thiserror::Error;

use crate::compression::{high_resolution_omega, CompressionError, CompressionSpec};
use crate::scalar::Real;

/// Largest brute-force grid visited before giving up.
pub const MAX_BRUTE_FORCE_GRID: f64 = 1e7;
/// Largest agent count accepted by [`brute_force`].
pub const MAX_BRUTE_FORCE_AGENTS: usize = 6;

const ROOT_ITERATIONS: usize = 60;
const MULTIPLIER_ITERATIONS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationError {
    #[error("infeasible: N·x_min = {required} exceeds the budget {budget}")]
    Infeasible { required: f64, budget: f64 },
    #[error("multiplier bisection did not converge (budget residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("brute-force search too large: {0}")]
    TooLarge(String),
    #[error("invalid allocation problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Compression(#[from] CompressionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    QuantizerHighRes,
    Sparsifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem<T: Real> {
    budget: T,
    x_min: T,
    x_max: T,
    perron: Vec<T>,
    distortions: Vec<T>,
    dim: usize,
    family: Family,
    weights: Vec<T>,
}

impl<T: Real> AllocationProblem<T> {
    pub fn new(
        family: Family,
        dim: usize,
        budget: T,
        x_min: T,
        x_max: T,
        perron: Vec<T>,
        distortions: Vec<T>,
    ) -> Result<Self, AllocationError> {
        let invalid = |m: &str| Err(AllocationError::InvalidProblem(m.to_string()));
        if perron.is_empty() {
            return invalid("no agents");
        }
        if perron.len() != distortions.len() {
            return invalid("perron and distortion vectors differ in length");
        }
        if dim == 0 {
            return invalid("dimension must be positive");
        }
        if !(budget > T::zero() && budget.is_finite()) {
            return invalid("budget must be positive and finite");
        }
        if !(x_min > T::zero() && x_min <= x_max && x_max.is_finite()) {
            return invalid("box must satisfy 0 < x_min <= x_max < inf");
        }
        if perron.iter().chain(&distortions).any(|v| !(*v > T::zero() && v.is_finite())) {
            return invalid("perron entries and distortions must be positive and finite");
        }
        let weights = perron.iter().zip(&distortions).map(|(p, d)| *p * *p * *d).collect();
        Ok(Self {
            budget,
            x_min,
            x_max,
            perron,
            distortions,
            dim,
            family,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.perron.len()
    }

    pub fn budget(&self) -> T {
        self.budget
    }

    pub fn x_min(&self) -> T {
        self.x_min
    }

    pub fn x_max(&self) -> T {
        self.x_max
    }

    pub fn perron(&self) -> &[T] {
        &self.perron
    }

    pub fn distortions(&self) -> &[T] {
        &self.distortions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Objective weight `π_k² d_k`.
    pub fn weight(&self, k: usize) -> T {
        self.weights[k]
    }

    pub fn is_feasible(&self) -> bool {
        T::of_usize(self.n()) * self.x_min <= self.budget
    }

    fn check_feasible(&self) -> Result<(), AllocationError> {
        if self.is_feasible() {
            Ok(())
        } else {
            Err(AllocationError::Infeasible {
                required: (T::of_usize(self.n()) * self.x_min).to_f64_lossy(),
                budget: self.budget.to_f64_lossy(),
            })
        }
    }

    pub fn omega(&self, x: T) -> T {
        match self.family {
            Family::QuantizerHighRes => high_resolution_omega(self.dim, x),
            Family::Sparsifier => T::of_usize(self.dim) / x - T::one(),
        }
    }

    /// `Σ_k π_k² d_k ω(x_k)`.
    pub fn objective(&self, x: &[T]) -> T {
        x.iter()
            .enumerate()
            .fold(T::zero(), |acc, (k, v)| acc + self.weights[k] * self.omega(*v))
    }

    pub fn objective_int(&self, x: &[u32]) -> T {
        x.iter()
            .enumerate()
            .fold(T::zero(), |acc, (k, v)| acc + self.weights[k] * self.omega(T::of(*v as f64)))
    }

    /// Marginal gain `g_k(x) = −∂/∂x [π_k² d_k ω(x)]`, positive and decreasing.
    pub fn marginal(&self, k: usize, x: T) -> T {
        let m = T::of_usize(self.dim);
        match self.family {
            Family::QuantizerHighRes => {
                let p = T::of(2.0).powf(x);
                let l = p - T::one();
                m * T::ln_2() * self.weights[k] * T::of(2.0) * p / (l * l * l)
            }
            Family::Sparsifier => m * self.weights[k] / (x * x),
        }
    }

    /// Box-clipped maximizer of the Lagrangian for agent `k` at multiplier `λ₀`.
    fn candidate(&self, k: usize, lambda0: T) -> T {
        if self.marginal(k, self.x_max) >= lambda0 {
            return self.x_max;
        }
        if self.marginal(k, self.x_min) <= lambda0 {
            return self.x_min;
        }
        match self.family {
            Family::Sparsifier => (T::of_usize(self.dim) * self.weights[k] / lambda0).sqrt(),
            Family::QuantizerHighRes => {
                let (mut lo, mut hi) = (self.x_min, self.x_max);
                for _ in 0..ROOT_ITERATIONS {
                    let mid = (lo + hi) * T::of(0.5);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.marginal(k, mid) > lambda0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (lo + hi) * T::of(0.5)
            }
        }
    }

    fn candidates(&self, lambda0: T) -> Vec<T> {
        (0..self.n()).map(|k| self.candidate(k, lambda0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSolution<T: Real> {
    pub x_real: Vec<T>,
    /// Floored and clamped `x_real`, without budget repair.
    pub x_int: Vec<u32>,
    pub lambda0: T,
    /// Multipliers of `x_k ≥ x_min`.
    pub lambda_lower: Vec<T>,
    /// Multipliers of `x_k ≤ x_max`.
    pub lambda_upper: Vec<T>,
    pub objective_real: T,
    pub objective_int: T,
}

fn sum<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |a, v| a + *v)
}

/// Continuous optimum by bisection on the budget multiplier.
pub fn solve_kkt<T: Real>(problem: &AllocationProblem<T>) -> Result<AllocationSolution<T>, AllocationError> {
    problem.check_feasible()?;
    let n = problem.n();
    let budget = problem.budget;
    let (x_real, lambda0) = if T::of_usize(n) * problem.x_max <= budget {
        (vec![problem.x_max; n], T::zero())
    } else {
        solve_active_budget(problem)?
    };
    Ok(package(problem, x_real, lambda0))
}

fn solve_active_budget<T: Real>(problem: &AllocationProblem<T>) -> Result<(Vec<T>, T), AllocationError> {
    let n = problem.n();
    let budget = problem.budget;
    let target = T::tolerance(1e-12, budget.to_f64_lossy());
    let accept = T::tolerance(1e-9, budget.to_f64_lossy());
    // Σx(λ₀) is continuous and nonincreasing: at `hi` every agent sits at
    // x_min, at `lo` every agent sits at x_max.
    let mut lo = (0..n)
        .map(|k| problem.marginal(k, problem.x_max))
        .fold(T::max_value().unwrap(), |a, v| a.min(v));
    let mut hi = (0..n)
        .map(|k| problem.marginal(k, problem.x_min))
        .fold(T::zero(), |a, v| a.max(v));
    let mut best = (problem.candidates(hi), hi);
    let mut best_gap = (sum(&best.0) - budget).abs();
    for _ in 0..MULTIPLIER_ITERATIONS {
        if best_gap <= target {
            break;
        }
        let mid = if lo > T::zero() { (lo * hi).sqrt() } else { (lo + hi) * T::of(0.5) };
        if !(mid > lo && mid < hi) {
            break;
        }
        let x = problem.candidates(mid);
        let s = sum(&x);
        let gap = (s - budget).abs();
        if gap < best_gap {
            best = (x, mid);
            best_gap = gap;
        }
        if s > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if problem.family == Family::Sparsifier && best_gap > T::zero() {
        // Exact λ₀ for the interior agents given the final clip pattern.
        let x = &best.0;
        let m = T::of_usize(problem.dim);
        let mut clipped = T::zero();
        let mut roots = T::zero();
        for (k, v) in x.iter().enumerate() {
            if *v <= problem.x_min || *v >= problem.x_max {
                clipped += *v;
            } else {
                roots += (m * problem.weights[k]).sqrt();
            }
        }
        let free = budget - clipped;
        if roots > T::zero() && free > T::zero() {
            let refined = (roots / free) * (roots / free);
            let xr = problem.candidates(refined);
            let gap = (sum(&xr) - budget).abs();
            if gap < best_gap {
                best = (xr, refined);
                best_gap = gap;
            }
        }
    }
    if best_gap > accept {
        return Err(AllocationError::NoConvergence {
            residual: best_gap.to_f64_lossy(),
        });
    }
    Ok(best)
}

fn package<T: Real>(problem: &AllocationProblem<T>, x_real: Vec<T>, lambda0: T) -> AllocationSolution<T> {
    let n = problem.n();
    let mut lambda_lower = vec![T::zero(); n];
    let mut lambda_upper = vec![T::zero(); n];
    for k in 0..n {
        let x = x_real[k];
        let g = problem.marginal(k, x);
        if x >= problem.x_max {
            lambda_upper[k] = (g - lambda0).max(T::zero());
        } else if x <= problem.x_min {
            lambda_lower[k] = (lambda0 - g).max(T::zero());
        }
    }
    let x_int = round_to_integer(problem, &x_real, false);
    AllocationSolution {
        objective_real: problem.objective(&x_real),
        objective_int: problem.objective_int(&x_int),
        x_real,
        x_int,
        lambda0,
        lambda_lower,
        lambda_upper,
    }
}

/// Unconstrained high-resolution rule
/// `x_k = X/N + log₂(π_k/π_av) + ½ log₂(d_k/d_av)` with geometric means.
pub fn closed_form_quantizer<T: Real>(problem: &AllocationProblem<T>) -> Vec<T> {
    let n = T::of_usize(problem.n());
    let mean_ln = |v: &[T]| v.iter().fold(T::zero(), |a, x| a + x.ln()) / n;
    let ln_pi_av = mean_ln(&problem.perron);
    let ln_d_av = mean_ln(&problem.distortions);
    let x_bar = problem.budget / n;
    let half = T::of(0.5);
    problem
        .perron
        .iter()
        .zip(&problem.distortions)
        .map(|(p, d)| x_bar + (p.ln() - ln_pi_av) / T::ln_2() + half * (d.ln() - ln_d_av) / T::ln_2())
        .collect()
}

fn integer_box<T: Real>(problem: &AllocationProblem<T>) -> (u32, u32) {
    let lo = problem.x_min.ceil().to_f64_lossy() as u32;
    let hi = problem.x_max.floor().to_f64_lossy() as u32;
    (lo.max(1), hi)
}

/// Relative tolerance for treating a real allocation as integral.
const SNAP: f64 = 1e-9;

/// Floors `x_real` into the integer box. With `repair`, leftover integer
/// budget is then handed out one unit at a time to the agent whose objective
/// term drops the most (lowest index on ties).
pub fn round_to_integer<T: Real>(problem: &AllocationProblem<T>, x_real: &[T], repair: bool) -> Vec<u32> {
    let (lo, hi) = integer_box(problem);
    let floor = |snap: f64| -> Vec<u32> {
        x_real
            .iter()
            .map(|v| ((v.to_f64_lossy() + snap).floor().max(0.0) as u32).clamp(lo, hi.max(lo)))
            .collect()
    };
    // solver output sits within round-off of integers like 16, so snap first
    let cap = problem.budget.floor().to_f64_lossy() as u64;
    let mut x = floor(SNAP * problem.budget.to_f64_lossy().max(1.0));
    if x.iter().map(|v| *v as u64).sum::<u64>() > cap {
        x = floor(0.0);
    }
    if !repair {
        return x;
    }
    let mut used: u64 = x.iter().map(|v| *v as u64).sum();
    while used < cap {
        let mut pick: Option<(usize, T)> = None;
        for (k, v) in x.iter().enumerate() {
            if *v >= hi {
                continue;
            }
            let now = T::of(*v as f64);
            let gain = problem.weights[k] * (problem.omega(now) - problem.omega(now + T::one()));
            if pick.map_or(true, |(_, g)| gain > g) {
                pick = Some((k, gain));
            }
        }
        match pick {
            Some((k, _)) => {
                x[k] += 1;
                used += 1;
            }
            None => break,
        }
    }
    x
}

/// Exhaustive integer search; the first minimizer in lexicographic order wins.
pub fn brute_force<T: Real>(problem: &AllocationProblem<T>) -> Result<Vec<u32>, AllocationError> {
    problem.check_feasible()?;
    let n = problem.n();
    if n > MAX_BRUTE_FORCE_AGENTS {
        return Err(AllocationError::TooLarge(format!("{n} agents (limit {MAX_BRUTE_FORCE_AGENTS})")));
    }
    let (lo, hi) = integer_box(problem);
    if hi < lo {
        return Err(AllocationError::Infeasible {
            required: lo as f64 * n as f64,
            budget: problem.budget.to_f64_lossy(),
        });
    }
    let grid = ((hi - lo + 1) as f64).powi(n as i32);
    if grid > MAX_BRUTE_FORCE_GRID {
        return Err(AllocationError::TooLarge(format!("grid of {grid:e} points")));
    }
    let cap = problem.budget.floor().to_f64_lossy() as u64;
    if lo as u64 * n as u64 > cap {
        return Err(AllocationError::Infeasible {
            required: lo as f64 * n as f64,
            budget: problem.budget.to_f64_lossy(),
        });
    }
    let terms: Vec<Vec<T>> = (0..n)
        .map(|k| (lo..=hi).map(|v| problem.weights[k] * problem.omega(T::of(v as f64))).collect())
        .collect();
    let mut x = vec![lo; n];
    let mut best: Option<(T, Vec<u32>)> = None;
    loop {
        let total: u64 = x.iter().map(|v| *v as u64).sum();
        if total <= cap {
            let f = x
                .iter()
                .enumerate()
                .fold(T::zero(), |a, (k, v)| a + terms[k][(*v - lo) as usize]);
            if best.as_ref().map_or(true, |(b, _)| f < *b) {
                best = Some((f, x.clone()));
            }
        }
        // Odometer increment, last coordinate fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(best.expect("feasible grid has a point").1);
            }
            pos -= 1;
            if x[pos] < hi {
                x[pos] += 1;
                for v in x.iter_mut().skip(pos + 1) {
                    *v = lo;
                }
                break;
            }
        }
    }
}

/// Normalized KKT residuals of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport<T: Real> {
    pub stationarity: T,
    pub primal_feasibility: T,
    pub dual_feasibility: T,
    pub complementarity: T,
}

impl<T: Real> KktReport<T> {
    pub fn max_residual(&self) -> T {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }

    pub fn satisfied(&self, tol: T) -> bool {
        self.max_residual() <= tol
    }
}

/// Evaluates the first-order conditions at `solution`.
///
/// Stationarity reads `−g_k(x_k) − λ_k⁻ + λ_k⁺ + λ₀ = 0`. Residuals are
/// scaled by the largest marginal or multiplier magnitude involved, so the
/// report is invariant to a common rescaling of the distortions.
pub fn verify_kkt<T: Real>(problem: &AllocationProblem<T>, solution: &AllocationSolution<T>) -> KktReport<T> {
    let n = problem.n();
    let x = &solution.x_real;
    let l0 = solution.lambda0;
    let g: Vec<T> = (0..n).map(|k| problem.marginal(k, x[k])).collect();
    let mut scale = l0.abs();
    for k in 0..n {
        scale = scale
            .max(g[k].abs())
            .max(solution.lambda_lower[k].abs())
            .max(solution.lambda_upper[k].abs());
    }
    if !(scale > T::zero()) {
        scale = T::one();
    }
    let x_scale = problem.x_max.max(T::one());
    let mut stationarity = T::zero();
    let mut primal = (sum(x) - problem.budget).max(T::zero()) / problem.budget.max(T::one());
    let mut dual = (-l0).max(T::zero());
    let mut comp = (l0 * (sum(x) - problem.budget)).abs() / (scale * problem.budget.max(T::one()));
    for k in 0..n {
        let (lm, lp) = (solution.lambda_lower[k], solution.lambda_upper[k]);
        stationarity = stationarity.max((-g[k] - lm + lp + l0).abs());
        primal = primal.max((problem.x_min - x[k]).max(x[k] - problem.x_max).max(T::zero()) / x_scale);
        dual = dual.max((-lm).max(-lp));
        comp = comp
            .max((lm * (x[k] - problem.x_min)).abs() / (scale * x_scale))
            .max((lp * (problem.x_max - x[k])).abs() / (scale * x_scale));
    }
    KktReport {
        stationarity: stationarity / scale,
        primal_feasibility: primal,
        dual_feasibility: dual.max(T::zero()) / scale,
        complementarity: comp,
    }
}

/// Builds per-agent operators from an integer allocation: `x_k` level bits
/// for the quantizer (with `value_bits` for the norm), `x_k` kept components
/// for the sparsifier.
pub fn to_specs(family: Family, dim: usize, value_bits: u32, x: &[u32]) -> Result<Vec<CompressionSpec>, AllocationError> {
    x.iter()
        .map(|v| {
            Ok(match family {
                Family::QuantizerHighRes => CompressionSpec::quantizer(dim, *v, value_bits)?,
                Family::Sparsifier => CompressionSpec::sparsifier(dim, *v as usize, value_bits)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(family: Family, budget: f64, lo: f64, hi: f64, pi: Vec<f64>, d: Vec<f64>) -> AllocationProblem<f64> {
        AllocationProblem::new(family, 30, budget, lo, hi, pi, d).unwrap()
    }

    #[test]
    fn objective_examples() {
        let p = prob(Family::QuantizerHighRes, 10.0, 1.0, 10.0, vec![1.0], vec![1.0]);
        assert!((p.objective(&[6.0]) - 30.0 / 3969.0).abs() < 1e-15);
        let s = prob(Family::Sparsifier, 60.0, 1.0, 30.0, vec![0.5, 0.5], vec![1.0, 2.0]);
        assert_eq!(s.objective(&[30.0, 30.0]), 0.0);
    }

    #[test]
    fn marginal_matches_finite_difference() {
        for family in [Family::QuantizerHighRes, Family::Sparsifier] {
            let p = prob(family, 20.0, 1.0, 20.0, vec![0.3, 0.7], vec![2.0, 0.5]);
            for k in 0..2 {
                for x in [1.5, 3.0, 7.25] {
                    let h = 1e-6;
                    let fd = -(p.weight(k) * (p.omega(x + h) - p.omega(x - h))) / (2.0 * h);
                    let g = p.marginal(k, x);
                    assert!((fd - g).abs() <= 1e-6 * g.abs().max(1e-12), "{family:?} {x}: {fd} vs {g}");
                }
            }
        }
    }

    #[test]
    fn sparsifier_two_agent_example() {
        let p = prob(Family::Sparsifier, 20.0, 1.0, 30.0, vec![0.8, 0.2], vec![1.0, 1.0]);
        let sol = solve_kkt(&p).unwrap();
        assert!((sol.x_real[0] - 16.0).abs() < 1e-9);
        assert!((sol.x_real[1] - 4.0).abs() < 1e-9);
        assert_eq!(brute_force(&p).unwrap(), vec![16, 4]);
        assert!(verify_kkt(&p, &sol).satisfied(1e-8));
    }

    #[test]
    fn symmetric_and_slack_cases() {
        let p = prob(Family::QuantizerHighRes, 12.0, 1.0, 11.0, vec![0.25; 4], vec![3.0; 4]);
        let sol = solve_kkt(&p).unwrap();
        assert!(sol.x_real.iter().all(|x| (x - 3.0).abs() < 1e-9));
        assert_eq!(brute_force(&p).unwrap(), vec![3; 4]);

        let p = prob(Family::QuantizerHighRes, 50.0, 1.0, 11.0, vec![0.25; 4], vec![3.0, 1.0, 2.0, 4.0]);
        let sol = solve_kkt(&p).unwrap();
        assert_eq!(sol.x_real, vec![11.0; 4]);
        assert_eq!(sol.lambda0, 0.0);
        assert!(sol.lambda_upper.iter().all(|l| *l > 0.0));
        assert!(verify_kkt(&p, &sol).satisfied(1e-8));
    }

    #[test]
    fn infeasible_budget() {
        let p = prob(Family::Sparsifier, 3.0, 1.0, 30.0, vec![0.25; 4], vec![1.0; 4]);
        assert!(matches!(solve_kkt(&p), Err(AllocationError::Infeasible { .. })));
        assert!(matches!(brute_force(&p), Err(AllocationError::Infeasible { .. })));
    }

    #[test]
    fn rounding_examples() {
        let p = prob(Family::QuantizerHighRes, 6.0, 1.0, 10.0, vec![0.9, 0.1], vec![1.0, 1.0]);
        assert_eq!(round_to_integer(&p, &[2.9, 3.9], false), vec![2, 3]);
        assert_eq!(round_to_integer(&p, &[2.0, 4.0], false), vec![2, 4]);
        // the slack unit goes where π²d·(ω(x) − ω(x+1)) is larger
        let g0 = 0.81 * (p.omega(2.0) - p.omega(3.0));
        let g1 = 0.01 * (p.omega(3.0) - p.omega(4.0));
        assert!(g0 > g1);
        assert_eq!(round_to_integer(&p, &[2.9, 3.9], true), vec![3, 3]);
    }

    #[test]
    fn perturbation_breaks_stationarity() {
        let p = prob(Family::QuantizerHighRes, 14.0, 1.0, 11.0, vec![0.4, 0.3, 0.2, 0.1], vec![1.0, 2.0, 3.0, 4.0]);
        let mut sol = solve_kkt(&p).unwrap();
        assert!(verify_kkt(&p, &sol).satisfied(1e-8));
        sol.x_real[1] += 0.1;
        assert!(verify_kkt(&p, &sol).stationarity > 1e-3);
    }

    #[test]
    fn closed_form_uniform() {
        let p = prob(Family::QuantizerHighRes, 40.0, 1.0, 30.0, vec![0.25; 4], vec![2.0; 4]);
        assert!(closed_form_quantizer(&p).iter().all(|x| (x - 10.0).abs() < 1e-12));
    }

    #[test]
    fn brute_force_limits() {
        let p = prob(Family::Sparsifier, 40.0, 1.0, 30.0, vec![0.125; 8], vec![1.0; 8]);
        assert!(matches!(brute_force(&p), Err(AllocationError::TooLarge(_))));
        let p = prob(Family::Sparsifier, 40.0, 1.0, 30.0, vec![0.25; 6], vec![1.0; 6]);
        assert!(matches!(brute_force(&p), Err(AllocationError::TooLarge(_))));
    }
}
