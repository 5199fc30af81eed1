//! Example-level checks against independent computations: direct sums,
//! closed forms and brute force.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otstab::entropic_maps::{backward_map, conditional_distribution, forward_map, Side};
use otstab::exact_ot::{conditional_of_plan, solve_discrete_w2, w2_distance, PlanSide, TransportPlan};
use otstab::measures::{grid_quadrature, make_discrete, random_ball_measure, two_point_measure, DensitySpec};
use otstab::semidiscrete::{
    bias_ledger, brenier_map_eval, delta_ij, h_ij_estimate, semidiscrete_stability, solve_semidiscrete,
    BiasOptions, EpsilonRule, SemiDiscreteOptions, SemiDiscreteStabilityOptions,
};
use otstab::sinkhorn::{solve_entropic, SinkhornSolver, SolverOptions};
use otstab::DiscreteMeasure;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_measure(r: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    random_ball_measure(r, n, d, 1.0).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

#[test]
fn marginals_by_direct_summation() {
    let mut r = rng(11);
    let a = random_measure(&mut r, 5, 2);
    let b = random_measure(&mut r, 7, 2);
    let p = solve_entropic(&a, &b, 1.0, &SolverOptions::default()).unwrap();
    let plan: Vec<Vec<f64>> = (0..5)
        .map(|i| {
            (0..7)
                .map(|j| {
                    let g = ((dot(a.point(i), b.point(j)) - p.phi[i] - p.psi[j]) / 1.0).exp();
                    g * a.weight(i) * b.weight(j)
                })
                .collect()
        })
        .collect();
    for i in 0..5 {
        assert!((plan[i].iter().sum::<f64>() - a.weight(i)).abs() < 1e-10);
    }
    for j in 0..7 {
        assert!(((0..5).map(|i| plan[i][j]).sum::<f64>() - b.weight(j)).abs() < 1e-10);
    }
}

#[test]
fn residual_does_not_increase_after_convergence() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let a = random_measure(&mut r, 6, 2);
        let b = random_measure(&mut r, 5, 2);
        let eps = r.random_range(0.1..1.0);
        let mut s = SinkhornSolver::new(&a, &b, eps).unwrap();
        while s.marginal_residual() > 1e-9 {
            s.sweep();
        }
        let before = s.marginal_residual();
        s.sweep();
        assert!(s.marginal_residual() <= before + 1e-15, "seed {seed}");
    }
}

#[test]
fn closed_form_two_point_potentials() {
    // Both measures are symmetric two-point, so ψ is constant, φ(x) = φ(−x)
    // and the plan density on the diagonal is 2e^{c/ε}/(e^{c/ε} + e^{−c/ε}).
    let eps = 0.5;
    let a = two_point_measure(1.0, 0.0).unwrap();
    let b = two_point_measure(1.0, std::f64::consts::PI / 5.0).unwrap();
    let p = solve_entropic(&a, &b, eps, &SolverOptions::default()).unwrap();
    let c = (std::f64::consts::PI / 5.0).cos();
    assert!((p.phi[0] - p.phi[1]).abs() < 1e-9);
    assert!((p.psi[0] - p.psi[1]).abs() < 1e-9);
    let expect = 2.0 * (c / eps).exp() / ((c / eps).exp() + (-c / eps).exp());
    assert!((p.log_density(0, 0).exp() - expect).abs() < 1e-9);
    assert!((p.phi[0] + p.psi[0] - eps * (c / eps).cosh().ln()).abs() < 1e-9);
}

#[test]
fn swapping_sides_transposes_density() {
    let mut r = rng(3);
    let a = random_measure(&mut r, 4, 3);
    let b = random_measure(&mut r, 6, 3);
    let p = solve_entropic(&a, &b, 0.3, &SolverOptions::default()).unwrap();
    let q = solve_entropic(&b, &a, 0.3, &SolverOptions::default()).unwrap();
    for i in 0..4 {
        for j in 0..6 {
            assert!((p.log_density(i, j) - q.log_density(j, i)).abs() < 1e-9);
        }
    }
}

#[test]
fn backward_map_contracts_second_moment() {
    for seed in 0..20 {
        let mut r = rng(200 + seed);
        let a = random_measure(&mut r, 7, 2);
        let b = random_measure(&mut r, 5, 2);
        let p = solve_entropic(&a, &b, 0.2, &SolverOptions::default()).unwrap();
        let norm2: f64 = b
            .points()
            .zip(b.weights())
            .map(|(z, w)| w * backward_map(&p, z).unwrap().iter().map(|v| v * v).sum::<f64>())
            .sum();
        assert!(norm2 <= a.second_moment() + 1e-12, "seed {seed}");
    }
}

#[test]
fn forward_map_equals_weighted_average() {
    let mut r = rng(5);
    let a = random_measure(&mut r, 5, 2);
    let b = random_measure(&mut r, 6, 2);
    let eps = 0.25;
    let p = solve_entropic(&a, &b, eps, &SolverOptions::default()).unwrap();
    let x = [0.3, -0.2];
    let logits: Vec<f64> = (0..6).map(|j| (dot(&x, b.point(j)) - p.psi[j]) / eps + b.weight(j).ln()).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let expect: Vec<f64> = (0..2).map(|k| (0..6).map(|j| w[j] * b.point(j)[k]).sum::<f64>() / total).collect();
    let got = forward_map(&p, &x).unwrap();
    assert!(sq(&got, &expect).sqrt() < 1e-12);
    let cond = conditional_distribution(&p, Side::X, &x).unwrap();
    assert!((cond.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn translation_distance() {
    for seed in 0..5 {
        let mut r = rng(300 + seed);
        let a = random_measure(&mut r, 8, 3);
        let v: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let b = a.translated(&v).unwrap();
        assert!((w2_distance(&a, &b).unwrap() - dot(&v, &v).sqrt()).abs() < 1e-9);
    }
}

#[test]
fn two_point_measure_examples() {
    let m = two_point_measure(2.0, std::f64::consts::PI / 6.0).unwrap();
    let (c, s) = (3f64.sqrt(), 1.0);
    assert!(sq(m.point(0), &[c, s]) < 1e-24);
    assert!(sq(m.point(1), &[-c, -s]) < 1e-24);
    assert_eq!(m.weights(), &[0.5, 0.5]);
    assert!((m.second_moment() - 4.0).abs() < 1e-12);
}

#[test]
fn two_point_rotation_distance() {
    // Two-point measures at angle 0 and θ: W₂² = 2 − 2cos θ for θ ≤ π/2.
    for theta in [0.1, 0.5, 1.0, 1.5] {
        let a = two_point_measure(1.0, 0.0).unwrap();
        let b = two_point_measure(1.0, theta).unwrap();
        let expect = (2.0 - 2.0 * f64::cos(theta)).sqrt();
        assert!((w2_distance(&a, &b).unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn plan_conditionals() {
    let a = make_discrete(&[vec![0.0], vec![1.0]], &[0.5, 0.5]).unwrap();
    let b = make_discrete(&[vec![0.0], vec![1.0], vec![2.0]], &[0.25, 0.25, 0.5]).unwrap();
    let plan = solve_discrete_w2(&a, &b).unwrap();
    let row0 = conditional_of_plan(&plan, PlanSide::Row, 0).unwrap();
    let row1 = conditional_of_plan(&plan, PlanSide::Row, 1).unwrap();
    for (u, v) in row0.iter().zip([0.5, 0.5, 0.0]) {
        assert!((u - v).abs() < 1e-12);
    }
    for (u, v) in row1.iter().zip([0.0, 0.0, 1.0]) {
        assert!((u - v).abs() < 1e-12);
    }
    let col2 = conditional_of_plan(&plan, PlanSide::Col, 2).unwrap();
    assert!((col2[1] - 1.0).abs() < 1e-12);
    assert!(conditional_of_plan(&plan, PlanSide::Row, 2).is_err());

    let product = TransportPlan::product(&a, &b).unwrap();
    let row = conditional_of_plan(&product, PlanSide::Row, 1).unwrap();
    for (u, v) in row.iter().zip(b.weights()) {
        assert!((u - v).abs() < 1e-15);
    }
}

fn disk(resolution: usize) -> otstab::GridQuadrature {
    grid_quadrature(&DensitySpec::UniformBall { dim: 2, radius: 1.0 }, resolution).unwrap()
}

fn symmetric_pair() -> DiscreteMeasure {
    make_discrete(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.5, 0.5]).unwrap()
}

fn tight() -> SemiDiscreteOptions {
    SemiDiscreteOptions { tolerance: 1e-9, ..SemiDiscreteOptions::default() }
}

#[test]
fn brenier_map_matches_brute_force() {
    let grid = disk(64);
    let mu = make_discrete(&[vec![1.0, 0.0], vec![-0.5, 0.8], vec![-0.4, -0.9]], &[0.3, 0.3, 0.4]).unwrap();
    let sol = solve_semidiscrete(&grid, &mu, &SemiDiscreteOptions { tolerance: 1e-3, ..Default::default() }).unwrap();
    let mut r = rng(9);
    for _ in 0..200 {
        let x = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let (j, y) = brenier_map_eval(&sol, &x).unwrap();
        let best = (0..3)
            .max_by(|&a, &b| {
                let sa = dot(&x, mu.point(a)) - sol.psi0[a];
                let sb = dot(&x, mu.point(b)) - sol.psi0[b];
                sa.total_cmp(&sb)
            })
            .unwrap();
        assert_eq!(j, best);
        assert_eq!(y, mu.point(best));
        for k in 0..3 {
            if k != j {
                assert!(delta_ij(&sol, j, k, &x).unwrap() >= 0.0);
                assert!((delta_ij(&sol, j, k, &x).unwrap() + delta_ij(&sol, k, j, &x).unwrap()).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn coarea_consistency() {
    let grid = disk(256);
    let sol = solve_semidiscrete(&grid, &symmetric_pair(), &tight()).unwrap();
    let dist = 2.0;
    let direct: f64 = (0..grid.measure.len())
        .filter(|&a| sol.assignment[a] == 0)
        .map(|a| grid.measure.weight(a) * (-delta_ij(&sol, 0, 1, grid.measure.point(a)).unwrap()).exp())
        .sum();
    let dt = 0.01;
    let ts: Vec<f64> = (0..=1000).map(|k| k as f64 * dt).collect();
    let h = h_ij_estimate(&sol, 0, 1, &ts, 0.02).unwrap();
    let integrand: Vec<f64> = ts.iter().zip(&h.values).map(|(t, v)| (-t).exp() * v / (2.0 * dist)).collect();
    let trapz: f64 = integrand.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum();
    assert!((trapz - direct).abs() / direct < 0.05, "co-area {trapz} vs direct {direct}");
}

#[test]
fn hij_vanishes_without_shared_boundary() {
    let grid = disk(128);
    let mu = make_discrete(&[vec![-0.8, 0.0], vec![0.0, 0.0], vec![0.8, 0.0]], &[1.0 / 3.0; 3]).unwrap();
    let sol = solve_semidiscrete(&grid, &mu, &SemiDiscreteOptions { tolerance: 1e-3, ..Default::default() }).unwrap();
    let h = h_ij_estimate(&sol, 0, 2, &[0.0, 0.01, 0.02], 0.01).unwrap();
    assert!(h.values.iter().all(|v| *v == 0.0), "{:?}", h.values);
    let adjacent = h_ij_estimate(&sol, 0, 1, &[0.0], 0.02).unwrap();
    assert!(adjacent.values[0] > 0.1);
}

#[test]
fn bias_limits() {
    let grid = disk(128);
    let sol = solve_semidiscrete(&grid, &symmetric_pair(), &tight()).unwrap();
    // For huge ε the entropic map collapses to the mean, so the bias equals
    // the L²(ρ) norm of T₀ (= 1 since both atoms have unit norm).
    let huge = bias_ledger(&sol, 1e6, &BiasOptions::default()).unwrap();
    assert!((huge.bias_l2 - 1.0).abs() < 1e-3);
    let biases: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&e| bias_ledger(&sol, e, &BiasOptions::default()).unwrap().bias_l2)
        .collect();
    assert!(biases.windows(2).all(|w| w[1] < w[0]), "{biases:?}");

    let fine = solve_semidiscrete(&disk(256), &symmetric_pair(), &tight()).unwrap();
    let fine_bias = bias_ledger(&fine, 0.05, &BiasOptions::default()).unwrap().bias_l2;
    assert!((fine_bias - biases[1]).abs() / fine_bias < 0.05);
}

#[test]
fn identical_targets_have_zero_terms() {
    let grid = disk(64);
    let mu = symmetric_pair();
    let s = semidiscrete_stability(&grid, &mu, &mu, EpsilonRule::W2TwoThirds, &SemiDiscreteStabilityOptions::default())
        .unwrap();
    assert_eq!((s.bias_mu, s.bias_nu, s.entropic_term, s.lhs, s.w2, s.ratio), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
}

#[test]
fn decomposition_dominates_lhs() {
    let grid = disk(128);
    let mu = symmetric_pair();
    let theta: f64 = 0.2;
    let nu = make_discrete(&[vec![theta.cos(), theta.sin()], vec![-theta.cos(), -theta.sin()]], &[0.5, 0.5]).unwrap();
    let opts = SemiDiscreteStabilityOptions { semidiscrete: tight(), ..Default::default() };
    let s = semidiscrete_stability(&grid, &mu, &nu, EpsilonRule::Fixed(0.05), &opts).unwrap();
    assert!(s.lhs <= s.decomposition_sum() + 1e-12);
    assert!((s.w2 - (2.0 - 2.0 * theta.cos()).sqrt()).abs() < 1e-12);
}
