use std::f64::consts::PI;
use std::sync::OnceLock;

use coulomb_lab::energy::*;
use coulomb_lab::equilibrium::*;
use coulomb_lab::grid::Grid2D;
use coulomb_lab::model::{ConfinementPotential, Configuration, GridPotential};
use coulomb_lab::sampler::{ginibre_exact_with, GinibreMethod};
use coulomb_lab::Point;
use proptest::prelude::*;

fn solve(v: &ConfinementPotential, half_width: f64, m: usize) -> EquilibriumMeasure {
    solve_equilibrium(v, Grid2D::new(half_width, m).unwrap(), DEFAULT_MASS_TOL).unwrap()
}

fn quadratic_eq() -> &'static EquilibriumMeasure {
    static EQ: OnceLock<EquilibriumMeasure> = OnceLock::new();
    EQ.get_or_init(|| solve(&ConfinementPotential::quadratic(), 3.0, 129))
}

fn check_basic_invariants(eq: &EquilibriumMeasure) {
    assert!((eq.mass() - 1.0).abs() < 1e-12, "mass {}", eq.mass());
    assert!((eq.raw_mass - 1.0).abs() < DEFAULT_MASS_TOL);
    assert!((eq.integrate(|_| 1.0) - 1.0).abs() < 1e-12);
    assert!(eq.zeta.values.iter().all(|&z| z >= 0.0));
    assert!(eq.density.values.iter().all(|&d| d >= 0.0));
    for (i, &m) in eq.support_mask.iter().enumerate() {
        if m {
            assert!(eq.zeta.values[i] < 1e-6);
        } else {
            assert_eq!(eq.density.values[i], 0.0);
        }
    }
    // ζ from the stored pieces is non-negative up to the obstacle tolerance.
    let worst = eq
        .grid
        .nodes()
        .map(|p| eq.zeta_unclamped(p))
        .fold(f64::INFINITY, f64::min);
    assert!(worst > -1e-6, "min ζ = {worst}");
}

#[test]
fn radial_builtins_match_their_oracles() {
    for (v, radius, c_v) in [
        (ConfinementPotential::quadratic(), 1.0, 0.5),
        (ConfinementPotential::quartic(), 1.0, 0.25),
    ] {
        let oracle = radial_equilibrium_oracle(&v.radial_profile().unwrap()).unwrap();
        assert!((oracle.radius - radius).abs() < 1e-12);
        assert!((oracle.c_v - c_v).abs() < 1e-12);
        let eq = solve(&v, 2.0, 129);
        check_basic_invariants(&eq);
        let h = eq.grid.spacing();
        assert!((eq.c_v - c_v).abs() < 2e-3, "{}: c_V {}", v.tag(), eq.c_v);
        assert!((eq.support_radius() - radius).abs() < 2.0 * h);
        for r in [1.2f64, 1.5, 1.9] {
            let p = Point::polar(r, 0.7);
            assert!((eq.background_potential(p) + r.ln()).abs() < 5e-3, "h0({r})");
        }
    }
}

#[test]
fn continuous_energy_of_the_disk() {
    // Uniform measure on the unit disk with V = |x|²/2: ∫V dμ = 1/4,
    // ∫h0 dμ = c_V - ∫V dμ = 1/4, so I_V = 1/8 + 1/4.
    let eq = quadratic_eq();
    assert!((continuous_energy(eq) - 0.375).abs() < 5e-3, "{}", continuous_energy(eq));
    assert!((self_energy(eq) - 0.25).abs() < 5e-3);
}

#[test]
fn elliptic_potential_gives_an_ellipse() {
    // V = (|z|² - τ Re z²) / (2(1 - τ²)) has the uniform law on the
    // ellipse with semi-axes 1 + τ and 1 - τ.
    let tau: f64 = 0.3;
    let v = ConfinementPotential::user("elliptic", move |p| {
        (p.norm_sqr() - tau * (p.x * p.x - p.y * p.y)) / (2.0 * (1.0 - tau * tau))
    });
    let eq = solve(&v, 2.0, 129);
    check_basic_invariants(&eq);
    assert_eq!(eq.components.len(), 1);
    let (a, b) = (1.0 + tau, 1.0 - tau);
    let h = eq.grid.spacing();
    let level = |p: Point| (p.x / a).powi(2) + (p.y / b).powi(2);
    for (i, &m) in eq.support_mask.iter().enumerate() {
        let p = eq.grid.node_at(i);
        let margin = 2.0 * h / b;
        if level(p) < (1.0 - margin).powi(2) {
            assert!(m, "interior node {p:?} missing");
        } else if level(p) > (1.0 + margin).powi(2) {
            assert!(!m, "exterior node {p:?} in the droplet");
        }
    }
    let expected = 1.0 / (PI * (1.0 - tau * tau));
    let inner: Vec<f64> = eq
        .support_mask
        .iter()
        .enumerate()
        .filter(|(i, &m)| m && level(eq.grid.node_at(*i)) < 0.8)
        .map(|(i, _)| eq.density.values[i])
        .collect();
    assert!(inner.iter().all(|d| (d - expected).abs() < 0.01 * expected));
}

#[test]
fn tabulated_potential_matches_the_builtin() {
    let builtin = quadratic_eq();
    let table = GridPotential::tabulate(129, 3.0, |p| 0.5 * p.norm_sqr()).unwrap();
    let parsed = GridPotential::parse(&table.to_text()).unwrap();
    assert_eq!(parsed, table);
    let sampled = solve(&ConfinementPotential::sampled(table, "grid:test"), 3.0, 129);
    check_basic_invariants(&sampled);
    assert!((sampled.c_v - builtin.c_v).abs() < 1e-3);
    let h = builtin.grid.spacing();
    let l1: f64 = builtin
        .density
        .values
        .iter()
        .zip(&sampled.density.values)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * h
        * h;
    assert!(l1 < 0.02, "L1 difference {l1}");
}

#[test]
fn two_wells_split_into_two_components() {
    let a = Point::new(1.5, 0.0);
    let v = ConfinementPotential::user("two wells", move |p| 0.5 * (p - a).norm_sqr().min((p + a).norm_sqr()));
    let eq = solve(&v, 3.5, 129);
    check_basic_invariants(&eq);
    assert_eq!(eq.components.len(), 2);
    let masses: Vec<f64> = eq
        .components
        .iter()
        .map(|c| c.nodes.iter().map(|&i| eq.density.values[i]).sum::<f64>() * eq.grid.spacing().powi(2))
        .collect();
    assert!(masses.iter().all(|m| (m - 0.5).abs() < 0.02), "{masses:?}");
}

#[test]
fn measures_round_trip_through_files() {
    let eq = quadratic_eq();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eq.eqm");
    eq.save(&path).unwrap();
    let back = EquilibriumMeasure::load(&path, ConfinementPotential::quadratic()).unwrap();
    assert_eq!(back.grid, eq.grid);
    assert_eq!(back.c_v, eq.c_v);
    assert_eq!(back.density.values, eq.density.values);
    assert_eq!(back.support_mask, eq.support_mask);
    assert_eq!(back.components.len(), eq.components.len());
    std::fs::write(&path, b"EQM1 truncated").unwrap();
    assert!(EquilibriumMeasure::load(&path, ConfinementPotential::quadratic()).is_err());
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(Grid2D::new(0.0, 65).is_err());
    assert!(Grid2D::new(1.0, 2).is_err());
    let g = Grid2D::new(3.0, 65).unwrap();
    assert!(solve_equilibrium(&ConfinementPotential::quadratic(), g, 0.0).is_err());
    assert!(ConfinementPotential::from_tag("cubic").is_err());
    assert!(GridPotential::parse("GRD1 2 1\n0 0\n0 0\n").is_err());
}

#[test]
fn splitting_identity_on_ginibre_samples() {
    let eq = quadratic_eq();
    let v = ConfinementPotential::quadratic();
    let kappa = calibrate_kappa(eq, Point::new(2.0, 0.0)).unwrap();
    assert!((kappa - 1.0).abs() < 1e-9);
    assert!(calibrate_kappa(eq, Point::ORIGIN).is_err());
    for seed in 0..3 {
        let c = ginibre_exact_with(200, seed, GinibreMethod::Hessenberg).unwrap();
        let r = split_identity_residual(&c, eq, &v, kappa);
        assert!(r.split_residual.abs() <= 1e-9 * r.hamiltonian.abs(), "{r:?}");
        // Bilinear interpolation of the concave h0 undershoots by at most h²/4.
        assert!(r.zeta_sum >= -200.0 * eq.grid.spacing().powi(2) / 4.0, "{}", r.zeta_sum);
    }
}

#[test]
fn coincident_points_have_infinite_energy() {
    let c = Configuration::from_points(vec![Point::new(0.1, 0.2), Point::new(0.1, 0.2)], 2.0).unwrap();
    assert_eq!(hamiltonian(&c, &ConfinementPotential::quadratic()), f64::INFINITY);
    assert_eq!(next_order_energy(&c, quadratic_eq()), f64::INFINITY);
}

fn cloud() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y)| Point::new(x, y)), 2..30)
        .prop_filter("distinct points", |p| {
            p.iter().enumerate().all(|(i, a)| p[..i].iter().all(|b| a.dist(*b) > 1e-4))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hamiltonian_is_permutation_and_rotation_invariant(points in cloud(), theta in 0.0f64..6.3) {
        let v = ConfinementPotential::quadratic();
        let h = hamiltonian(&Configuration::from_points(points.clone(), 2.0).unwrap(), &v);
        let mut rev = points.clone();
        rev.reverse();
        let hr = hamiltonian(&Configuration::from_points(rev, 2.0).unwrap(), &v);
        prop_assert_eq!(h, hr);
        let rotated: Vec<Point> = points.iter().map(|p| p.rotated(theta)).collect();
        let hrot = hamiltonian(&Configuration::from_points(rotated, 2.0).unwrap(), &v);
        prop_assert!((h - hrot).abs() <= 1e-10 * (1.0 + h.abs()));
    }

    #[test]
    fn splitting_holds_for_arbitrary_clouds(points in cloud()) {
        let eq = quadratic_eq();
        let c = Configuration::from_points(points, 2.0).unwrap();
        let r = split_identity_residual(&c, eq, eq.potential(), 1.0);
        prop_assert!(r.split_residual.abs() <= 1e-9 * (1.0 + r.hamiltonian.abs()), "{:?}", r);
    }

    #[test]
    fn zeta_is_nonnegative_everywhere(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let eq = quadratic_eq();
        let p = Point::new(x, y);
        prop_assert!(eq.effective_potential(p) >= 0.0);
        prop_assert!(eq.zeta_unclamped(p) > -1e-3);
    }
}
