use std::sync::OnceLock;

use hyperwalk::estimators::{estimate_drift, estimate_laplace, legendre_transform_values, Backend, McBudget};
use hyperwalk::geometry::{BoundaryTarget, BoundaryWord, Model};
use hyperwalk::martingale::inequality::{freedman_base_check, freedman_f, scalar_inequality_check, DiscreteDistribution};
use hyperwalk::martingale::trace::trajectory_trace;
use hyperwalk::martingale::DriftCocycle;
use hyperwalk::walk::measure::StepMeasure;
use hyperwalk::walk::path::sample_path;
use hyperwalk::walk::rng::{run_blocks, SeedSpec};
use proptest::prelude::*;

fn biased() -> &'static DriftCocycle {
    static C: OnceLock<DriftCocycle> = OnceLock::new();
    C.get_or_init(|| DriftCocycle::solve(&StepMeasure::biased_f2(6), 11, 2).unwrap())
}

fn uniform() -> &'static DriftCocycle {
    static C: OnceLock<DriftCocycle> = OnceLock::new();
    C.get_or_init(|| {
        let m = StepMeasure::uniform_free(Model::Free { rank: 2, depth: 6 }).unwrap();
        DriftCocycle::solve(&m, 11, 2).unwrap()
    })
}

fn ray(l: i32) -> BoundaryTarget {
    BoundaryTarget::Free(BoundaryWord::ray(l))
}

/// Largest `|ΔM|` the chain can produce from any grid node.
fn max_increment(c: &DriftCocycle) -> f64 {
    (0..c.len())
        .flat_map(|i| c.increments(i).map(|(v, _)| v.abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

fn centered_positive_mean() -> impl Strategy<Value = DiscreteDistribution> {
    prop::collection::vec((-10.0..10.0f64, 0.01..1.0f64), 2..=5).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let mean: f64 = atoms.iter().map(|a| a.0 * a.1 / total).sum();
        let shift = if mean < 0.0 { -mean } else { 0.0 };
        let mut atoms: Vec<(f64, f64)> = atoms.iter().map(|&(v, w)| (v + shift, w / total)).collect();
        let s: f64 = atoms.iter().map(|a| a.1).sum();
        atoms[0].1 += 1.0 - s;
        DiscreteDistribution::new(atoms).unwrap()
    })
}

/// Mean-zero laws bounded below by −1: positive atoms balanced by one atom in `[−1, 0)`.
fn base_law() -> impl Strategy<Value = DiscreteDistribution> {
    (
        prop::collection::vec((0.01..5.0f64, 0.01..1.0f64), 1..=4),
        0.05..=1.0f64,
    )
        .prop_map(|(pos, c)| {
            let w: f64 = pos.iter().map(|a| a.1).sum();
            let mu: f64 = pos.iter().map(|a| a.0 * a.1 / w).sum();
            let q = mu / (c + mu);
            let mut atoms: Vec<(f64, f64)> = pos.iter().map(|&(v, p)| (v, (1.0 - q) * p / w)).collect();
            atoms.push((-c, q));
            let s: f64 = atoms.iter().map(|a| a.1).sum();
            atoms[0].1 += 1.0 - s;
            let mean: f64 = atoms.iter().map(|a| a.0 * a.1).sum();
            atoms[0].0 -= mean / atoms[0].1;
            DiscreteDistribution::new(atoms).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scalar_inequality_holds(
        d in centered_positive_mean(),
        (lambda, a) in (0.01..1.0f64, 0.05..3.0f64).prop_filter("λa ≤ 3", |(l, a)| l * a <= 3.0)
    ) {
        let m = scalar_inequality_check(&d, lambda, a).unwrap();
        prop_assert!(m.margin >= -1e-9 * (1.0 + m.lhs.abs()), "{:?} λ={} a={} {:?}", d, lambda, a, m);
    }

    #[test]
    fn freedman_base_holds(d in base_law(), lambda in 0.0..3.0f64) {
        let m = freedman_base_check(&d, lambda).unwrap();
        prop_assert!(m.margin >= -1e-9 * (1.0 + m.lhs.abs()), "{:?} λ={} {:?}", d, lambda, m);
    }

    #[test]
    fn freedman_f_is_convex_and_nonnegative(l in -5.0..5.0f64, h in 1e-3..0.5f64) {
        let f = freedman_f;
        prop_assert!(f(l) >= 0.0);
        prop_assert!(f(l - h) + f(l + h) - 2.0 * f(l) >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn walk_is_lipschitz_and_cocycle_bounded(seed in any::<u64>(), n in 1usize..80) {
        let m = StepMeasure::biased_f2(6);
        let targets = [ray(1), ray(-2)];
        let t = sample_path(&m, n, SeedSpec::new(seed, 0), &targets, true).unwrap();
        let disp = m.displacements();
        let inc = t.increments.as_ref().unwrap();
        for i in 1..=n {
            prop_assert!((t.kappa[i] - t.kappa[i - 1]).abs() <= disp[inc[i - 1]]);
            for s in &t.sigma {
                if let Some(v) = s[i] {
                    prop_assert!(v.abs() <= t.kappa[i]);
                }
            }
        }
        let again = sample_path(&m, n, SeedSpec::new(seed, 0), &targets, true).unwrap();
        prop_assert_eq!(&t.kappa, &again.kappa);
        prop_assert_eq!(&t.increments, &again.increments);
    }

    #[test]
    fn block_merge_ignores_worker_count(paths in 1usize..3000, workers in 1usize..6) {
        let f = |r: std::ops::Range<u64>| r.collect::<Vec<u64>>();
        let serial: Vec<u64> = run_blocks(paths, 1, f);
        let parallel: Vec<u64> = run_blocks(paths, workers, f);
        prop_assert_eq!(&serial, &(0..paths as u64).collect::<Vec<_>>());
        prop_assert_eq!(serial, parallel);
    }

    #[test]
    fn martingale_trace_invariants(seed in any::<u64>(), n in 1usize..60, which in 0usize..2, start in prop_oneof![Just(1), Just(-1), Just(2), Just(-2)]) {
        let c = if which == 0 { biased() } else { uniform() };
        let a_values = [0.5, 1.0, 2.0, max_increment(c) + 1.0];
        let x = ray(start);
        let traj = sample_path(&c.measure, n, SeedSpec::new(seed, 3), &[], true).unwrap();
        let t = trajectory_trace(c, &traj, &x, &a_values).unwrap();
        let steps = t.dm.len();
        let psi = c.solution.sup_norm;
        prop_assert_eq!(t.m[0], 0.0);
        prop_assert_eq!(t.bracket[0], 0.0);
        for j in 1..=steps {
            prop_assert!(t.bracket[j] >= t.bracket[j - 1]);
            prop_assert!(t.realized[j] >= t.realized[j - 1]);
            prop_assert!((t.bracket[j] - t.bracket[j - 1] - c.phi_node(t.nodes[j - 1])).abs() <= 1e-12);
            let gap = (t.m[j] - (t.sigma[j] - j as f64 * t.ell)).abs();
            prop_assert!(gap <= 2.0 * psi + 1e-9, "gap {} > 2‖ψ‖ = {}", gap, 2.0 * psi);
            for g in &t.g {
                prop_assert!(g[j] <= t.bracket[j] + 1e-9);
            }
            prop_assert!((t.g[3][j] - t.bracket[j]).abs() <= 1e-9);
        }
        if which == 1 {
            for j in 0..=steps {
                prop_assert!((t.bracket[j] - 0.75 * j as f64).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn legendre_recovers_quadratic_conjugate(ell in -1.0..1.0f64, s in 0.2..2.0f64) {
        let lambdas: Vec<f64> = (-50..=50).map(|i| i as f64 * 0.01).collect();
        let values: Vec<f64> = lambdas.iter().map(|l| ell * l + 0.5 * s * l * l).collect();
        let ses = vec![0.0; lambdas.len()];
        let xs: Vec<f64> = (-8..=8).map(|i| ell + i as f64 * 0.05 * s).collect();
        let r = legendre_transform_values(&lambdas, &values, &ses, &xs).unwrap();
        for (x, v) in r.xs.iter().zip(&r.values) {
            let exact = (x - ell).powi(2) / (2.0 * s);
            prop_assert!((v - exact).abs() <= 1e-4 * (1.0 + exact), "x={} {} vs {}", x, v, exact);
        }
    }
}

#[test]
fn exact_laplace_is_normalized_convex_and_subadditive() {
    let m = StepMeasure::uniform_free(Model::Free { rank: 2, depth: 6 }).unwrap();
    let lambdas: Vec<f64> = (-8..=8).map(|i| i as f64 * 0.025).collect();
    let ns = [100, 200, 400];
    let c = estimate_laplace(&m, &lambdas, &ns, 0.25, Backend::ExactDp, None).unwrap();
    assert!(c.convexity_violations.is_empty());
    assert!(c.jensen_violations.is_empty());
    for ni in 0..ns.len() {
        assert_eq!(c.cell(8, ni).value, 0.0);
        for li in 1..lambdas.len() - 1 {
            let row = c.row(ni);
            assert!(row[li - 1] + row[li + 1] - 2.0 * row[li] >= -1e-12);
        }
    }
    for li in 8..lambdas.len() {
        assert!(c.cell(li, 1).value <= c.cell(li, 0).value + 1e-12);
        assert!(c.cell(li, 2).value <= c.cell(li, 1).value + 1e-12);
    }
}

#[test]
fn monte_carlo_estimates_ignore_worker_count() {
    let m = StepMeasure::biased_f2(6);
    let mk = |workers| Backend::MonteCarlo(McBudget { paths: 3000, seed: 5, workers });
    let a = estimate_drift(&m, 40, mk(1)).unwrap();
    let b = estimate_drift(&m, 40, mk(7)).unwrap();
    assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
    assert_eq!(a.se.to_bits(), b.se.to_bits());
}
