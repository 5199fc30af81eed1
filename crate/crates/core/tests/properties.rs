use proptest::prelude::*;

use otstab::entropic_maps::{
    backward_map, conditional_covariance, conditional_distribution, estimate_hmax, forward_map, tilt, Side,
};
use otstab::exact_ot::solve_discrete_w2;
use otstab::measures::{make_discrete, two_point_measure, DiscreteMeasure};
use otstab::semidiscrete::{
    brenier_map_eval, delta_ij, semidiscrete_dual_objective, solve_semidiscrete, SemiDiscreteOptions,
};
use otstab::sinkhorn::{
    dual_objective, marginal_residual, plan_log_density, solve_entropic, EntropicPotentials, SinkhornSolver,
    SolverOptions,
};
use otstab::stability::{chain_diagnostics_with, map_l2_distance, stability_report, ChainOptions};
use otstab::{grid_quadrature, w2_distance, DensitySpec};

fn ball_point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, d).prop_map(|p| {
        let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1.0 {
            p.iter().map(|v| v / n).collect()
        } else {
            p
        }
    })
}

fn measure(d: usize, max: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((ball_point(d), 0.1..1.0f64), 1..=max).prop_map(|atoms| {
        let (pts, w): (Vec<Vec<f64>>, Vec<f64>) = atoms.into_iter().unzip();
        make_discrete(&pts, &w).unwrap()
    })
}

fn pair(max: usize) -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure)> {
    (1..=3usize).prop_flat_map(move |d| (measure(d, max), measure(d, max)))
}

fn triple(max: usize) -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure, DiscreteMeasure)> {
    (1..=3usize).prop_flat_map(move |d| (measure(d, max), measure(d, max), measure(d, max)))
}

fn solve(a: &DiscreteMeasure, b: &DiscreteMeasure, eps: f64) -> EntropicPotentials {
    solve_entropic(a, b, eps, &SolverOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constructed_measures_are_normalized(
        atoms in prop::collection::vec((prop::collection::vec(-5.0..5.0f64, 2), prop_oneof![Just(0.0), 0.0..3.0f64]), 1..10)
    ) {
        let (pts, w): (Vec<Vec<f64>>, Vec<f64>) = atoms.into_iter().unzip();
        match make_discrete(&pts, &w) {
            Ok(m) => {
                prop_assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(m.weights().iter().all(|v| *v > 0.0));
                prop_assert_eq!(m.len(), w.iter().filter(|v| **v > 0.0).count());
            }
            Err(_) => prop_assert!(w.iter().all(|v| *v == 0.0)),
        }
    }

    #[test]
    fn two_point_half_turn(r in 0.1..3.0f64, theta in -4.0..4.0f64) {
        let a = two_point_measure(r, theta).unwrap();
        let b = two_point_measure(r, theta + std::f64::consts::PI).unwrap();
        for k in 0..2 {
            for c in 0..2 {
                prop_assert!((a.point(k)[c] - b.point(1 - k)[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simplex_certificate_and_symmetry((a, b) in pair(12)) {
        let plan = solve_discrete_w2(&a, &b).unwrap();
        let scale = 1.0 + plan.cost();
        prop_assert!(plan.certificate_gap().unwrap() <= 1e-8 * scale);
        let back = w2_distance(&b, &a).unwrap();
        prop_assert!((plan.cost().sqrt() - back).abs() < 1e-9);
    }

    #[test]
    fn w2_triangle_inequality((a, b, c) in triple(8)) {
        let (ab, bc, ac) = (w2_distance(&a, &b).unwrap(), w2_distance(&b, &c).unwrap(), w2_distance(&a, &c).unwrap());
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn w2_translation((a, _) in pair(8), shift in prop::collection::vec(-2.0..2.0f64, 3)) {
        let v = &shift[..a.dim()];
        let moved = a.translated(v).unwrap();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((w2_distance(&a, &moved).unwrap() - norm).abs() < 1e-9);
    }

    #[test]
    fn gauge_shift_leaves_density_unchanged((a, b) in pair(6), eps in 0.05..2.0f64, c in -10.0..10.0f64) {
        let p = solve(&a, &b, eps);
        let q = EntropicPotentials::from_parts(
            a.clone(), b.clone(), eps,
            p.phi.iter().map(|v| v + c).collect(),
            p.psi.iter().map(|v| v - c).collect(),
        ).unwrap();
        for i in 0..a.len() {
            for j in 0..b.len() {
                prop_assert!((plan_log_density(&p, i, j).unwrap() - plan_log_density(&q, i, j).unwrap()).abs() < 1e-12 * (1.0 + c.abs() / eps));
            }
        }
    }

    #[test]
    fn sinkhorn_is_symmetric((a, b) in pair(6), eps in 0.1..2.0f64) {
        let p = solve(&a, &b, eps);
        let q = solve(&b, &a, eps);
        for i in 0..a.len() {
            for j in 0..b.len() {
                prop_assert!((p.log_density(i, j) - q.log_density(j, i)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dual_value_never_decreases((a, b) in pair(6), eps in 0.05..1.0f64) {
        let mut s = SinkhornSolver::new(&a, &b, eps).unwrap();
        let mut last = dual_objective(&s.potentials());
        for _ in 0..20 {
            s.sweep();
            let v = dual_objective(&s.potentials());
            prop_assert!(v >= last - 1e-12 * (1.0 + last.abs()));
            last = v;
        }
    }

    #[test]
    fn converged_marginals((a, b) in pair(8), eps in 0.05..2.0f64) {
        let p = solve(&a, &b, eps);
        prop_assert!(marginal_residual(&p) <= 2e-10);
        prop_assert!(p.phi.iter().chain(&p.psi).all(|v| v.is_finite()));
    }

    #[test]
    fn forward_map_in_target_box((a, b) in pair(6), eps in 0.05..2.0f64, x in ball_point(3)) {
        let p = solve(&a, &b, eps);
        let t = forward_map(&p, &x[..a.dim()]).unwrap();
        let (lo, hi) = b.bounding_box();
        for k in 0..t.len() {
            prop_assert!(t[k] >= lo[k] - 1e-12 && t[k] <= hi[k] + 1e-12);
        }
    }

    #[test]
    fn backward_map_second_moment((a, b) in pair(8), eps in 0.05..2.0f64) {
        let p = solve(&a, &b, eps);
        let norm2: f64 = b.points().zip(b.weights())
            .map(|(z, w)| w * backward_map(&p, z).unwrap().iter().map(|v| v * v).sum::<f64>())
            .sum();
        prop_assert!(norm2 <= a.second_moment() + 1e-12);
    }

    #[test]
    fn covariance_is_psd_and_capped((a, b) in pair(6), eps in 0.05..2.0f64, x in ball_point(3)) {
        let p = solve(&a, &b, eps);
        let c = conditional_covariance(&p, Side::X, &x[..a.dim()]).unwrap();
        let eig = nalgebra::SymmetricEigen::new(c.clone());
        prop_assert!(eig.eigenvalues.iter().all(|v| *v >= -1e-12));
        prop_assert!((c.clone() - c.transpose()).norm() == 0.0);
        let h = estimate_hmax(&p, Side::X, &[x[..a.dim()].to_vec()], Some(1.0)).unwrap();
        prop_assert!(h.lower_bound <= h.analytic_cap + 1e-9);
    }

    #[test]
    fn tilt_lemma((a, b) in pair(8), eps in 0.05..2.0f64, x in ball_point(3), h in prop::collection::vec(-3.0..3.0f64, 3)) {
        let d = a.dim();
        let p = solve(&a, &b, eps);
        let cond = conditional_distribution(&p, Side::X, &x[..d]).unwrap();
        let tilted = tilt(&cond.as_measure(), &h[..d]).unwrap();
        let moved: Vec<f64> = x[..d].iter().zip(&h).map(|(u, v)| u + eps * v).collect();
        let direct = conditional_distribution(&p, Side::X, &moved).unwrap();
        for (u, v) in tilted.weights().iter().zip(&direct.weights) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        let composed = tilt(&tilt(&b, &h[..d]).unwrap(), &x[..d]).unwrap();
        let sum: Vec<f64> = h[..d].iter().zip(&x).map(|(u, v)| u + v).collect();
        let once = tilt(&b, &sum).unwrap();
        for (u, v) in composed.weights().iter().zip(once.weights()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn tilt_stability_transport_inequality(
        (a, b) in pair(6), eps in 0.05..2.0f64, x in ball_point(3),
        raw in prop::collection::vec(0.0..1.0f64, 6),
    ) {
        let d = a.dim();
        let p = solve(&a, &b, eps);
        let cond = conditional_distribution(&p, Side::X, &x[..d]).unwrap();
        let total: f64 = raw[..b.len()].iter().sum();
        prop_assume!(total > 0.0);
        let q: Vec<f64> = raw[..b.len()].iter().map(|v| v / total).collect();
        let mut diff = vec![0.0; d];
        for (j, z) in b.points().enumerate() {
            for k in 0..d {
                diff[k] += (q[j] - cond.weights[j]) * z[k];
            }
        }
        let lhs: f64 = diff.iter().map(|v| v * v).sum();
        prop_assert!(lhs <= 2.0 * cond.kl_from(&q).unwrap() + 1e-9);
    }

    #[test]
    fn map_distance_triangle((rho, mu, nu) in triple(6), eps in 0.1..1.0f64) {
        let sigma = mu.translated(&vec![0.1; mu.dim()]).unwrap();
        let (a, b, c) = (solve(&rho, &mu, eps), solve(&rho, &nu, eps), solve(&rho, &sigma, eps));
        let ab = map_l2_distance(&a, &b).unwrap();
        let bc = map_l2_distance(&b, &c).unwrap();
        let ac = map_l2_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn chain_invariants((rho, mu, nu) in triple(6), eps in 0.1..1.0f64) {
        let opts = ChainOptions { radius: Some(1.0), ..ChainOptions::default() };
        let c = chain_diagnostics_with(&rho, &mu, &nu, eps, &opts).unwrap();
        for check in c.checks() {
            prop_assert!(check.holds, "{:?}", check);
        }
        prop_assert!(c.q_normalization_error < 1e-10);
    }

    #[test]
    fn stability_bounds_hold((rho, mu, nu) in triple(8), eps in 0.05..1.0f64) {
        let r = stability_report(&rho, &mu, &nu, eps, 1.0).unwrap();
        prop_assert!(r.lhs >= 0.0 && r.w2 >= 0.0);
        prop_assert!(r.lhs <= r.rhs_bounded);
        prop_assert!(r.lhs <= r.rhs_general);
        prop_assert!(r.rhs_general >= r.w2 && r.rhs_bounded >= r.w2);
        let looser = stability_report(&rho, &mu, &nu, eps * 1.5, 1.0).unwrap();
        if r.w2 > 0.0 {
            prop_assert!(looser.rhs_bounded < r.rhs_bounded);
        }
    }
}

fn random_disk_solution(seed: u64) -> otstab::SemiDiscreteSolution {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=4);
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * (k as f64 + rng.random_range(0.0..0.5)) / n as f64;
            vec![t.cos(), t.sin()]
        })
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.0)).collect();
    let mu = make_discrete(&pts, &w).unwrap();
    let grid = grid_quadrature(&DensitySpec::UniformBall { dim: 2, radius: 1.0 }, 96).unwrap();
    solve_semidiscrete(&grid, &mu, &SemiDiscreteOptions { tolerance: 2e-3, max_iterations: 20_000 }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn semidiscrete_partition_and_argmax(seed in 0u64..1000, x in ball_point(2)) {
        let sol = random_disk_solution(seed);
        prop_assert!((sol.cell_masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(sol.residual <= 2e-3);
        prop_assert_eq!(sol.assignment.len(), sol.grid.measure.len());
        let (j, _) = brenier_map_eval(&sol, &x).unwrap();
        let scores: Vec<f64> = sol.atoms.points().zip(&sol.psi0)
            .map(|(y, p)| x[0] * y[0] + x[1] * y[1] - p).collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(j, scores.iter().position(|s| *s == best).unwrap());
        for i in 0..sol.atoms.len() {
            for k in 0..sol.atoms.len() {
                if i != k {
                    let a = delta_ij(&sol, i, k, &x).unwrap();
                    let b = delta_ij(&sol, k, i, &x).unwrap();
                    prop_assert!((a + b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn semidiscrete_first_order_optimality(seed in 0u64..1000) {
        let sol = random_disk_solution(seed);
        let tol = 2e-3;
        let base = -semidiscrete_dual_objective(&sol, &sol.psi0).unwrap();
        let delta = 1e-4;
        for j in 0..sol.psi0.len() {
            for s in [-delta, delta] {
                let mut psi = sol.psi0.clone();
                psi[j] += s;
                let v = -semidiscrete_dual_objective(&sol, &psi).unwrap();
                prop_assert!(v - base <= delta * tol + 1e-15, "coordinate {} step {}: {} > {}", j, s, v, base);
            }
        }
    }
}
