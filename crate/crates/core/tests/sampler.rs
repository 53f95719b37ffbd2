use std::sync::OnceLock;

use coulomb_lab::energy::hamiltonian;
use coulomb_lab::equilibrium::{solve_equilibrium, EquilibriumMeasure, DEFAULT_MASS_TOL};
use coulomb_lab::grid::Grid2D;
use coulomb_lab::model::{ConfinementPotential, Configuration, GasParams};
use coulomb_lab::sampler::*;
use coulomb_lab::Point;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn quadratic_eq() -> &'static EquilibriumMeasure {
    static EQ: OnceLock<EquilibriumMeasure> = OnceLock::new();
    EQ.get_or_init(|| {
        solve_equilibrium(
            &ConfinementPotential::quadratic(),
            Grid2D::new(3.0, 129).unwrap(),
            DEFAULT_MASS_TOL,
        )
        .unwrap()
    })
}

/// Largest distance from an element of `a` to its greedily matched partner in `b`.
fn matching_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for z in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, w)| (k, (z - w).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

#[test]
fn eigenvalues_agree_with_independent_schur() {
    for (n, seed) in [(5usize, 1u64), (40, 2), (120, 3)] {
        let mut rng = chain_rng(seed, 0);
        let a = ginibre_matrix(n, &mut rng);
        let oracle = DMatrix::from_row_slice(n, n, a.as_slice())
            .schur()
            .eigenvalues()
            .expect("complex Schur form is triangular");
        let ours = eigenvalues(a).unwrap();
        let err = matching_error(&ours, oracle.as_slice());
        assert!(err < 1e-8, "n = {n}: eigenvalue mismatch {err}");
    }
}

#[test]
fn eigenvalues_of_triangular_and_diagonal_matrices() {
    let n = 6;
    let mut a = ComplexMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            a.set(i, j, Complex64::new(i as f64 + 1.0, -(j as f64)));
        }
    }
    let mut ours = eigenvalues(a).unwrap();
    ours.sort_by(|x, y| x.re.total_cmp(&y.re));
    for (i, z) in ours.iter().enumerate() {
        assert!((z - Complex64::new(i as f64 + 1.0, -(i as f64))).norm() < 1e-12);
    }
}

fn circular_law_checks(points: &[Point]) {
    let n = points.len() as f64;
    let inside = |r: f64| points.iter().filter(|p| p.norm() <= r).count() as f64 / n;
    for r in [0.3, 0.5, 0.7, 0.9] {
        assert!((inside(r) - r * r).abs() < 0.04, "fraction within {r}: {}", inside(r));
    }
    let max = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    assert!(max < 1.25, "largest modulus {max}");
    let mean = points.iter().fold(Point::ORIGIN, |acc, &p| acc + p);
    assert!(mean.norm() / n < 0.05);
}

#[test]
fn hessenberg_sampler_follows_the_circular_law() {
    let c = ginibre_exact_with(1024, 11, GinibreMethod::Hessenberg).unwrap();
    assert_eq!(c.n(), 1024);
    assert_eq!(c.beta(), 2.0);
    circular_law_checks(c.points());
}

#[test]
fn dense_sampler_follows_the_circular_law() {
    let c = ginibre_exact(400, 12).unwrap();
    circular_law_checks(c.points());
}

#[test]
fn moduli_match_gamma_means() {
    let n = 256;
    let reps = 200;
    let mut mean_sq = 0.0;
    for s in 0..reps {
        let r = ginibre_moduli(n, s).unwrap();
        assert_eq!(r.len(), n);
        mean_sq += r.iter().map(|x| x * x).sum::<f64>() / n as f64;
    }
    mean_sq /= reps as f64;
    // E|λ|² averaged over k = (N + 1) / (2N).
    let expected = (n as f64 + 1.0) / (2.0 * n as f64);
    assert!((mean_sq - expected).abs() < 0.01, "{mean_sq} vs {expected}");
}

#[test]
fn exact_samplers_are_deterministic_per_seed() {
    for method in [GinibreMethod::Dense, GinibreMethod::Hessenberg] {
        let a = ginibre_exact_with(64, 5, method).unwrap();
        let b = ginibre_exact_with(64, 5, method).unwrap();
        let c = ginibre_exact_with(64, 6, method).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
    assert!(ginibre_exact(0, 1).is_err());
    assert!(ginibre_moduli(0, 1).is_err());
}

fn settings(seed: u64) -> ChainSettings {
    ChainSettings {
        step_size: 0.1,
        n_steps: 400,
        burn_in: 100,
        thinning: 10,
        seed,
        kind: ProposalKind::Metropolis,
        tune: true,
    }
}

#[test]
fn mcmc_chains_are_reproducible() {
    let v = ConfinementPotential::quadratic();
    let eq = quadratic_eq();
    let params = GasParams::new(32, 2.0).unwrap();
    let a = mcmc_sample(params, &v, eq, &settings(9)).unwrap();
    let b = mcmc_sample(params, &v, eq, &settings(9)).unwrap();
    let c = mcmc_sample(params, &v, eq, &settings(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.configurations, c.configurations);
    assert_eq!(a.configurations.len(), 30);
    assert_eq!(a.energy_trace.len(), a.configurations.len());
    assert!(a.acceptance_rate > 0.1 && a.acceptance_rate < 0.95);

    let chains = run_chains(params, &v, eq, &settings(9), 3).unwrap();
    assert_eq!(chains[0], a);
    assert_ne!(chains[1].configurations, chains[2].configurations);
    assert_eq!(chains.iter().map(|c| c.chain).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn langevin_chains_run_and_are_reproducible() {
    let v = ConfinementPotential::quadratic();
    let eq = quadratic_eq();
    let params = GasParams::new(24, 4.0).unwrap();
    let s = ChainSettings {
        kind: ProposalKind::Langevin,
        step_size: 0.02,
        ..settings(4)
    };
    let a = mcmc_sample(params, &v, eq, &s).unwrap();
    assert_eq!(a, mcmc_sample(params, &v, eq, &s).unwrap());
    assert!(a.acceptance_rate > 0.1);
}

#[test]
fn invalid_settings_are_rejected() {
    let v = ConfinementPotential::quadratic();
    let eq = quadratic_eq();
    let params = GasParams::new(8, 2.0).unwrap();
    for bad in [
        ChainSettings { step_size: 0.0, ..settings(0) },
        ChainSettings { burn_in: 500, ..settings(0) },
        ChainSettings { thinning: 0, ..settings(0) },
    ] {
        assert!(mcmc_sample(params, &v, eq, &bad).is_err());
    }
    assert!(run_chains(params, &v, eq, &settings(0), 0).is_err());
}

#[test]
fn long_chain_stays_confined() {
    let v = ConfinementPotential::quadratic();
    let eq = quadratic_eq();
    let params = GasParams::new(16, 2.0).unwrap();
    // 62 500 sweeps of 16 proposals each: 10⁶ proposals.
    let s = ChainSettings {
        n_steps: 62_500,
        burn_in: 500,
        thinning: 500,
        ..settings(21)
    };
    let set = mcmc_sample(params, &v, eq, &s).unwrap();
    assert_eq!(set.proposals + 500 * 16, 1_000_000);
    for c in &set.configurations {
        assert!(c.points().iter().all(|p| p.norm() < 3.0));
    }
    assert!(set.energy_trace.iter().all(|e| e.is_finite()));
}

#[test]
fn single_particle_second_moment_matches_quadrature() {
    let v = ConfinementPotential::quadratic();
    let eq = quadratic_eq();
    for beta in [1.0, 2.0, 4.0] {
        // Density ∝ exp(-β|x|²/2): E|x|² by radial Simpson quadrature.
        let (mut num, mut den) = (0.0, 0.0);
        let steps = 4000;
        let top = 12.0;
        for k in 0..=steps {
            let r = top * k as f64 / steps as f64;
            let w = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            let f = r * (-beta * r * r / 2.0).exp();
            num += w * r * r * f;
            den += w * f;
        }
        let oracle = num / den;
        let s = ChainSettings {
            step_size: 1.0,
            n_steps: 200_000,
            burn_in: 1_000,
            thinning: 5,
            ..settings(33)
        };
        let set = mcmc_sample(GasParams::new(1, beta).unwrap(), &v, eq, &s).unwrap();
        let m = set.configurations.iter().map(|c| c.points()[0].norm_sqr()).sum::<f64>()
            / set.configurations.len() as f64;
        assert!((m - oracle).abs() < 0.04 * oracle, "beta {beta}: {m} vs {oracle}");
    }
}

#[test]
fn sample_sets_round_trip_through_files() {
    let configs = (0..3)
        .map(|s| ginibre_exact_with(10, s, GinibreMethod::Hessenberg).unwrap())
        .collect();
    let set = SampleSet::from_configurations(configs, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.bin");
    set.save(&path).unwrap();
    assert_eq!(SampleSet::load(&path).unwrap(), set);
    assert!(SampleSet::read_from(&b"not a sample set"[..]).is_err());
}

#[test]
fn autocorrelation_of_independent_draws_is_near_one() {
    let mut rng = chain_rng(1, 0);
    let trace: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
    let tau = autocorrelation_time(&trace).unwrap();
    assert!((0.5..2.0).contains(&tau), "tau = {tau}");
    let mut x = 0.0;
    let sticky: Vec<f64> = (0..5000)
        .map(|_| {
            x = 0.95 * x + rng.random::<f64>() - 0.5;
            x
        })
        .collect();
    assert!(autocorrelation_time(&sticky).unwrap() > 10.0);
}

fn point_strategy() -> impl Strategy<Value = Point> {
    (-1.5f64..1.5, -1.5f64..1.5).prop_map(|(x, y)| Point::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_energy_matches_full_recomputation(
        points in prop::collection::vec(point_strategy(), 2..40),
        y in point_strategy(),
        pick in any::<prop::sample::Index>(),
    ) {
        let v = ConfinementPotential::quadratic();
        let i = pick.index(points.len());
        prop_assume!(points.iter().enumerate().all(|(j, p)| j == i || p.dist(y) > 1e-6));
        prop_assume!(points.iter().enumerate().all(|(j, p)| points[..j].iter().all(|q| q.dist(*p) > 1e-6)));
        let before = Configuration::from_points(points.clone(), 2.0).unwrap();
        let mut moved = points.clone();
        moved[i] = y;
        let after = Configuration::from_points(moved, 2.0).unwrap();
        let h = hamiltonian(&before, &v);
        let full = hamiltonian(&after, &v) - h;
        let local = delta_energy(&points, i, y, &v);
        prop_assert!((full - local).abs() <= 1e-10 * (1.0 + h.abs()), "{full} vs {local}");
    }

    #[test]
    fn metropolis_acceptance_satisfies_detailed_balance(
        beta in 0.1f64..10.0,
        ha in -50.0f64..50.0,
        hb in -50.0f64..50.0,
        q in -3.0f64..3.0,
    ) {
        // π(a) P(a→b) = π(b) P(b→a), with proposal density ratio q(b→a)/q(a→b) = e^q.
        let forward = acceptance_probability(beta, hb - ha, q);
        let backward = acceptance_probability(beta, ha - hb, -q);
        prop_assert!((0.0..=1.0).contains(&forward) && (0.0..=1.0).contains(&backward));
        let lhs = (-beta * ha).exp() * forward;
        let rhs = (-beta * hb).exp() * backward * q.exp();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn site_gradient_matches_finite_differences(
        points in prop::collection::vec(point_strategy(), 2..20),
        pick in any::<prop::sample::Index>(),
    ) {
        let v = ConfinementPotential::quadratic();
        let i = pick.index(points.len());
        prop_assume!(points.iter().enumerate().all(|(j, p)| j == i || p.dist(points[i]) > 0.05));
        let x = points[i];
        let g = site_gradient(&points, i, x, &v);
        let e = 1e-6;
        let dx = (delta_energy(&points, i, Point::new(x.x + e, x.y), &v)
            - delta_energy(&points, i, Point::new(x.x - e, x.y), &v)) / (2.0 * e);
        let dy = (delta_energy(&points, i, Point::new(x.x, x.y + e), &v)
            - delta_energy(&points, i, Point::new(x.x, x.y - e), &v)) / (2.0 * e);
        let scale = 1.0 + g[0].abs() + g[1].abs();
        prop_assert!((g[0] - dx).abs() < 1e-4 * scale && (g[1] - dy).abs() < 1e-4 * scale);
    }
}
