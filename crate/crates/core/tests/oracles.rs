//! Independent reference computations checked against the library.

use actc_core::allocation::{brute_force, closed_form_quantizer, solve_kkt, verify_kkt, AllocationProblem, Family};
use actc_core::compression::CompressionSpec;
use actc_core::diffusion::{run, RunConfig, Strategy};
use actc_core::model::{AgentModel, Covariance, RegressionProblem};
use actc_core::theory::{bit_expense, delta_omega, delta_s, Encoding};
use actc_core::topology::{self, consensus_perron_estimate, validate, CombinationMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(dim, dim) * 0.5
}

fn random_primitive(n: usize, rng: &mut ChaCha8Rng) -> CombinationMatrix<f64> {
    let mut a = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        a[(k, k)] = rng.random_range(0.1..1.0);
        a[((k + 1) % n, k)] = rng.random_range(0.1..1.0);
        for l in 0..n {
            if rng.random_bool(0.3) {
                a[(l, k)] = rng.random_range(0.05..1.0);
            }
        }
    }
    for k in 0..n {
        let s: f64 = a.column(k).sum();
        for l in 0..n {
            a[(l, k)] /= s;
        }
    }
    validate(a).unwrap()
}

/// Solves `(A − I)π = 0, 1ᵀπ = 1` by replacing one equation with the sum row.
fn perron_by_linear_solve(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut m = a - DMatrix::identity(n, n);
    let mut rhs = DVector::zeros(n);
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    m.lu().solve(&rhs).unwrap()
}

#[test]
fn delta_s_matches_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let dim = rng.random_range(1..7);
        let covs: Vec<DMatrix<f64>> = (0..n).map(|_| random_spd(dim, &mut rng)).collect();
        let s2: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let alphas: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let mut pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        let zeta = rng.random_range(0.05..1.0);
        let agents = (0..n)
            .map(|k| AgentModel::new(k, dim, Covariance::Full(covs[k].clone()), s2[k], 0.01).unwrap())
            .collect();
        let p = RegressionProblem::new(DVector::zeros(dim), agents).unwrap();

        let mut h = DMatrix::zeros(dim, dim);
        let mut s = DMatrix::zeros(dim, dim);
        for k in 0..n {
            h += &covs[k] * (alphas[k] * pi[k]);
            s += &covs[k] * (alphas[k].powi(2) * pi[k].powi(2) * s2[k]);
        }
        let expected = zeta * (h.try_inverse().unwrap() * s).trace();
        let got = delta_s(&p, &pi, &alphas, zeta).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn delta_s_homogeneous_agents_closed_form() {
    let dim = 5;
    let r = DMatrix::from_fn(dim, dim, |i, j| if i == j { 2.0 } else { 0.3f64.powi((i as i32 - j as i32).abs()) });
    let pi = [0.5, 0.3, 0.2];
    let agents = (0..3)
        .map(|k| AgentModel::new(k, dim, Covariance::Full(r.clone()), 0.4, 0.01).unwrap())
        .collect();
    let p = RegressionProblem::new(DVector::zeros(dim), agents).unwrap();
    let got = delta_s(&p, &pi, &[1.0; 3], 0.1).unwrap();
    let expected = 0.1 * 0.4 * dim as f64 * (0.25 + 0.09 + 0.04);
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn delta_omega_direct_evaluation() {
    let agents = vec![AgentModel::new(0, 30, Covariance::ScaledIdentity(1.0), 1.0, 0.01).unwrap()];
    let p = RegressionProblem::<f64>::new(DVector::zeros(30), agents).unwrap();
    let one = delta_omega(&p, &[1.0], &[1.0], 0.1, &[1.0], 2.0, 0.0).unwrap();
    assert!((one.total() - 3.0).abs() < 1e-12);
    let two = delta_omega(&p, &[1.0], &[1.0], 0.1, &[2.0], 2.0, 0.0).unwrap();
    assert!((two.total() - 2.0 * one.total()).abs() < 1e-12);
    let with_c = delta_omega(&p, &[1.0], &[1.0], 0.1, &[1.0], 2.0, 4.0).unwrap();
    assert!((with_c.network - 4.0 * 0.01 / 4.0).abs() < 1e-15);
}

#[test]
fn perron_matches_linear_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.random_range(2..15);
        let a = random_primitive(n, &mut rng);
        let exact = perron_by_linear_solve(a.matrix());
        let power = topology::perron(&a, 1e-15, 1_000_000).unwrap();
        let consensus = consensus_perron_estimate(&a, 1e-13, 1_000_000).unwrap();
        assert!((power.vector() - &exact).amax() < 1e-10);
        assert!((consensus.perron.vector() - &exact).amax() < 1e-10);
        assert!(exact.iter().all(|v| *v > 0.0));
    }
}

#[test]
fn quantizer_one_bit_distribution() {
    // χ = (0.6, 0.8): component 0 is 5 with probability 0.6, else 0.
    let spec = CompressionSpec::quantizer(2, 1, 32).unwrap();
    let x = DVector::from_vec(vec![3.0, 4.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 100_000;
    let mut fives = 0usize;
    let mut sum = 0.0;
    for _ in 0..draws {
        let q = spec.compress(&x, &mut rng).unwrap();
        assert!(q[0] == 0.0 || q[0] == 5.0, "{}", q[0]);
        assert!(q[1] == 0.0 || q[1] == 5.0, "{}", q[1]);
        fives += (q[0] == 5.0) as usize;
        sum += q[0];
    }
    let sigma = (25.0 * 0.6 * 0.4 / draws as f64).sqrt();
    assert!((sum / draws as f64 - 3.0).abs() < 3.0 * sigma);
    let p = fives as f64 / draws as f64;
    assert!((p - 0.6).abs() < 3.0 * (0.24 / draws as f64).sqrt());
}

#[test]
fn sparsifier_error_energy_is_exact_on_average() {
    // E‖Q(x) − x‖² = (M/S − 1)‖x‖² for uniform S-subsets.
    let m = 12;
    let x = DVector::from_fn(m, |i, _| (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -0.5 });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in [1, 3, 6, 11] {
        let spec = CompressionSpec::sparsifier(m, s, 32).unwrap();
        let draws = 40_000;
        let samples: Vec<f64> = (0..draws)
            .map(|_| (spec.compress(&x, &mut rng).unwrap() - &x).norm_squared())
            .collect();
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let expected = (m as f64 / s as f64 - 1.0) * x.norm_squared();
        assert!(
            (mean - expected).abs() <= 4.0 * (var / draws as f64).sqrt() + 1e-9 * expected,
            "S={s}: {mean} vs {expected}"
        );
    }
}

#[test]
fn gradient_noise_covariance_at_optimum_matches_sampling() {
    let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let agents = vec![AgentModel::new(0, 2, Covariance::Full(r.clone()), 0.3, 0.01).unwrap()];
    let w = DVector::from_vec(vec![1.0, -1.0]);
    let p = RegressionProblem::new(w.clone(), agents).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws = 200_000;
    let mut acc = DMatrix::<f64>::zeros(2, 2);
    for _ in 0..draws {
        let obs = p.sample_observation(0, &mut rng);
        let g = actc_core::model::stochastic_gradient(&obs.regressor, obs.response, &w);
        acc += &g * g.transpose();
    }
    acc /= draws as f64;
    let expected = p.gradient_noise_covariance_at_optimum(0, &[1.0]);
    // 4σ²R with σ² = 0.3
    assert!((&expected - &r * 1.2).amax() < 1e-12);
    assert!((acc - expected).amax() < 0.03, "sampled covariance off");
    assert!((p.distortion_coefficient(0, &[1.0]) - 0.3 * 3.0).abs() < 1e-12);
}

#[test]
fn sparsifier_two_agent_allocation() {
    let p = AllocationProblem::<f64>::new(Family::Sparsifier, 30, 20.0, 1.0, 30.0, vec![0.8, 0.2], vec![1.0, 1.0]).unwrap();
    let sol = solve_kkt(&p).unwrap();
    assert!((sol.x_real[0] - 16.0).abs() < 1e-9 && (sol.x_real[1] - 4.0).abs() < 1e-9);
    assert_eq!(brute_force(&p).unwrap(), vec![16, 4]);
}

#[test]
fn closed_form_agrees_with_kkt_at_high_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let n = rng.random_range(2..8);
        let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..4.0)).collect();
        let budget = n as f64 * rng.random_range(28.0..32.0);
        let p = AllocationProblem::new(Family::QuantizerHighRes, 30, budget, 8.0, 64.0, pi, d).unwrap();
        let cf = closed_form_quantizer(&p);
        let kkt = solve_kkt(&p).unwrap();
        assert!(verify_kkt(&p, &kkt).satisfied(1e-8));
        for (a, b) in cf.iter().zip(&kkt.x_real) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((cf.iter().sum::<f64>() - budget).abs() < 1e-9);
    }
}

#[test]
fn bit_counts_follow_operator_costs() {
    assert_eq!(bit_expense(2000, 10, 30, 32, Encoding::Dense), 19_200_000);
    assert_eq!(bit_expense(2000, 10, 30, 32, Encoding::Compressed { budget: 20 }), 2_440_000);

    let dim = 30;
    let agents = (0..3)
        .map(|k| AgentModel::new(k, dim, Covariance::ScaledIdentity(1.0), 0.5, 0.01).unwrap())
        .collect();
    let p = RegressionProblem::new(DVector::zeros(dim), agents).unwrap();
    let a = validate(DMatrix::from_element(3, 3, 1.0 / 3.0)).unwrap();
    let specs = vec![
        CompressionSpec::quantizer(dim, 1, 32).unwrap(),
        CompressionSpec::quantizer(dim, 3, 32).unwrap(),
        CompressionSpec::sparsifier(dim, 7, 32).unwrap(),
    ];
    let t = 40;
    let out = run(&RunConfig::new(&p, &a, Strategy::Actc { zeta: 0.5, specs }, t), 0, 0).unwrap();
    let per_round = (32 + 30 * 2) + (32 + 30 * 4) + 7 * (32 + 5);
    assert_eq!(out.trajectory.bits_cum[t], (t * per_round) as f64);
    let atc = run(&RunConfig::new(&p, &a, Strategy::Atc { value_bits: 32 }, t), 0, 0).unwrap();
    assert_eq!(atc.trajectory.bits_cum[t], (t * 3 * 30 * 32) as f64);
}
