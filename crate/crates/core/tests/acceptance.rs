//! Acceptance suite: one test per criterion, each printing a single
//! `criterion k: PASS|FAIL ...` line. Tests hold a shared lock so that the
//! runtime budgets are measured without contention.
//!
//! Criterion 4 needs at least 50 exact samples at N = 4096. Without
//! `COULOMB_LAB_FULL=1` that part is not run; its runtime is projected from
//! a timed N = 1024 draw and the criterion fails if the projection exceeds
//! the budget.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use coulomb_lab::energy::{calibrate_kappa, split_identity_residual, KAPPA_PROBE};
use coulomb_lab::equilibrium::{radial_equilibrium_oracle, solve_equilibrium, EquilibriumMeasure, DEFAULT_MASS_TOL};
use coulomb_lab::field::{
    chi_smoothing, default_exclusion_radius, gmc_measure, max_over_disk, potential_at, potential_field,
};
use coulomb_lab::fluctuations::{
    centered_statistic, equilibrium_mean, exp_moment_from_statistics, make_zero_mean_combination,
    master_equation_residual, transport_solve, TestFunction,
};
use coulomb_lab::grid::Grid2D;
use coulomb_lab::lab::{run_maxscan, ExperimentConfig};
use coulomb_lab::model::{ConfinementPotential, Configuration, GasParams};
use coulomb_lab::numerics::{ks_distance, median, variance};
use coulomb_lab::sampler::{
    chain_rng, ginibre_exact_with, ginibre_moduli, mcmc_sample_chain, ChainSettings, GinibreMethod, ProposalKind,
};
use coulomb_lab::Point;
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Written to the stderr handle directly so that the line shows up without
/// `--nocapture`.
fn report(k: u32, pass: bool, detail: String) {
    let line = format!("criterion {k}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() <= budget_s
}

fn equilibrium(v: &ConfinementPotential, m: usize, half_width: f64) -> EquilibriumMeasure {
    solve_equilibrium(v, Grid2D::new(half_width, m).unwrap(), DEFAULT_MASS_TOL).unwrap()
}

// Criterion 1.
const C1_RESOLUTION: usize = 257;
const C1_HALF_WIDTH: f64 = 3.0;
const C1_L1_TOL: f64 = 0.02;
const C1_RADIUS_CELLS: f64 = 2.0;
const C1_CV_TOL: f64 = 0.01;
const C1_BUDGET_S: f64 = 60.0;

fn oracle_check(v: ConfinementPotential) -> (bool, String) {
    let start = Instant::now();
    let eq = equilibrium(&v, C1_RESOLUTION, C1_HALF_WIDTH);
    let elapsed = start.elapsed();
    let oracle = radial_equilibrium_oracle(&v.radial_profile().unwrap()).unwrap();
    let h = eq.grid.spacing();
    let l1: f64 = (0..eq.grid.len())
        .map(|i| (eq.density.values[i] - oracle.density(eq.grid.node_at(i).norm())).abs())
        .sum::<f64>()
        * h
        * h;
    let radius_err = (eq.support_radius() - oracle.radius).abs();
    let cv_err = (eq.c_v - oracle.c_v).abs();
    let pass = l1 <= C1_L1_TOL
        && radius_err <= C1_RADIUS_CELLS * h
        && cv_err <= C1_CV_TOL
        && within(elapsed, C1_BUDGET_S);
    let detail = format!(
        "{}: L1 {l1:.4} (<= {C1_L1_TOL}), radius error {:.2}h (<= {C1_RADIUS_CELLS}h), c_V {:.5} vs {:.5}, {:.1}s",
        v.tag(),
        radius_err / h,
        eq.c_v,
        oracle.c_v,
        elapsed.as_secs_f64()
    );
    (pass, detail)
}

#[test]
fn criterion_1_equilibrium_oracle() {
    let _g = serial();
    let (pq, dq) = oracle_check(ConfinementPotential::quadratic());
    let (p4, d4) = oracle_check(ConfinementPotential::quartic());
    report(1, pq && p4, format!("{dq}; {d4}"));
    assert!(pq && p4, "{dq}; {d4}");
}

// Criterion 2.
const C2_RESOLUTION: usize = 129;
const C2_REL_TOL: f64 = 1e-6;
const C2_KAPPA_TOL: f64 = 1e-6;
const C2_BUDGET_S: f64 = 5.0;

#[test]
fn criterion_2_splitting_identity() {
    let _g = serial();
    let start = Instant::now();
    let v = ConfinementPotential::quadratic();
    let eq = equilibrium(&v, C2_RESOLUTION, 3.0);
    let kappa = calibrate_kappa(&eq, KAPPA_PROBE).unwrap();
    let mut rng = chain_rng(2024, 0);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = [1, 2, 8][k % 3];
        let pts = (0..n)
            .map(|_| Point::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
            .collect();
        let conf = Configuration::from_points(pts, 2.0).unwrap();
        let r = split_identity_residual(&conf, &eq, &v, kappa);
        worst = worst.max((r.split_residual / r.hamiltonian).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= C2_REL_TOL && (kappa - 1.0).abs() <= C2_KAPPA_TOL && within(elapsed, C2_BUDGET_S);
    let detail = format!(
        "kappa {kappa:.9} (expected 1, not 2N), worst |residual|/|H| {worst:.2e} (<= {C2_REL_TOL:e}), {:.2}s",
        elapsed.as_secs_f64()
    );
    report(2, pass, detail.clone());
    assert!(pass, "{detail}");
}

// Criterion 3.
const C3_N: usize = 64;
const C3_SAMPLES: usize = 500;
const C3_KS_TOL: f64 = 0.1;
const C3_BUDGET_S: f64 = 600.0;

#[test]
fn criterion_3_sampler_cross_validation() {
    let _g = serial();
    let start = Instant::now();
    let v = ConfinementPotential::quadratic();
    let eq = equilibrium(&v, 129, 3.0);
    let xi = TestFunction::half_square();
    let mean = equilibrium_mean(&eq, &xi);
    let exact: Vec<f64> = (0..C3_SAMPLES as u64)
        .map(|s| {
            let c = ginibre_exact_with(C3_N, 30_000 + s, GinibreMethod::Hessenberg).unwrap();
            centered_statistic(c.points(), &xi, mean)
        })
        .collect();
    let thinning = 20;
    let burn_in = 500;
    let settings = ChainSettings {
        step_size: 0.1,
        n_steps: burn_in + thinning * C3_SAMPLES,
        burn_in,
        thinning,
        seed: 3,
        kind: ProposalKind::Metropolis,
        tune: true,
    };
    let set = mcmc_sample_chain(GasParams::new(C3_N, 2.0).unwrap(), &v, &eq, &settings, 0).unwrap();
    let mcmc: Vec<f64> = set
        .configurations
        .iter()
        .map(|c| centered_statistic(c.points(), &xi, mean))
        .collect();
    let ks = ks_distance(&exact, &mcmc);
    let elapsed = start.elapsed();
    let pass = mcmc.len() == C3_SAMPLES && ks <= C3_KS_TOL && within(elapsed, C3_BUDGET_S);
    let detail = format!(
        "KS {ks:.4} (<= {C3_KS_TOL}) between {} exact and {} MCMC samples of Fluct(|x|^2/2), acceptance {:.2}, {:.1}s",
        exact.len(),
        mcmc.len(),
        set.acceptance_rate,
        elapsed.as_secs_f64()
    );
    report(3, pass, detail.clone());
    assert!(pass, "{detail}");
}

// Criterion 4.
const C4_SAMPLES: usize = 50;
const C4_BRACKET: (f64, f64) = (0.55, 0.95);
const C4_LIMIT: f64 = std::f64::consts::FRAC_1_SQRT_2;
const C4_BUDGET_S: f64 = 3600.0;
const C4_FULL_ENV: &str = "COULOMB_LAB_FULL";

fn exact_medians(eq: &EquilibriumMeasure, n: usize, samples: usize, seed: u64) -> (f64, Duration) {
    let start = Instant::now();
    let ratios: Vec<f64> = (0..samples as u64)
        .map(|s| {
            let c = ginibre_exact_with(n, seed + s, GinibreMethod::Hessenberg).unwrap();
            disk_max(eq, &c) / (n as f64).ln()
        })
        .collect();
    (median(&ratios).unwrap(), start.elapsed())
}

fn disk_max(eq: &EquilibriumMeasure, c: &Configuration) -> f64 {
    let f = potential_field(c, eq, Point::ORIGIN, 0.5, 256, default_exclusion_radius(c.n())).unwrap();
    max_over_disk(&f).unwrap().0
}

#[test]
fn criterion_4_maximum_of_the_field() {
    let _g = serial();
    let start = Instant::now();
    let v = ConfinementPotential::quadratic();
    let eq = equilibrium(&v, 257, 3.0);
    let (m256, _) = exact_medians(&eq, 256, C4_SAMPLES, 40_000);
    let (m1024, t1024) = exact_medians(&eq, 1024, C4_SAMPLES, 41_000);

    let chain = ChainSettings {
        step_size: 0.02,
        n_steps: 300 + 20 * C4_SAMPLES,
        burn_in: 300,
        thinning: 20,
        seed: 4,
        kind: ProposalKind::Metropolis,
        tune: true,
    };
    let set = mcmc_sample_chain(GasParams::new(1024, 8.0).unwrap(), &v, &eq, &chain, 0).unwrap();
    let beta8: Vec<f64> = set
        .configurations
        .iter()
        .map(|c| disk_max(&eq, c) / 1024f64.ln())
        .collect();
    let m1024_b8 = median(&beta8).unwrap();

    let full = std::env::var(C4_FULL_ENV).is_ok_and(|v| v == "1");
    let (m4096, large_part) = if full {
        let (m, _) = exact_medians(&eq, 4096, C4_SAMPLES, 42_000);
        let ok = (C4_BRACKET.0..=C4_BRACKET.1).contains(&m) && (m - C4_LIMIT).abs() < (m256 - C4_LIMIT).abs();
        (Some(m), ok)
    } else {
        (None, false)
    };
    let elapsed = start.elapsed();
    // Dense QR cost grows like N^3.
    let projected = elapsed.as_secs_f64() + t1024.as_secs_f64() * 64.0;
    let beta_part = m1024_b8 < m1024;
    let pass = large_part && beta_part && within(elapsed, C4_BUDGET_S);
    let large = match m4096 {
        Some(m) => format!("median(N=4096) {m:.4} in [{}, {}]", C4_BRACKET.0, C4_BRACKET.1),
        None => format!(
            "N=4096 part not run: projected runtime {:.0}s exceeds the {C4_BUDGET_S}s budget (set {C4_FULL_ENV}=1 to run it)",
            projected
        ),
    };
    let detail = format!(
        "medians max/log N at beta=2: N=256 {m256:.4}, N=1024 {m1024:.4}; beta=8 N=1024 {m1024_b8:.4} (< beta=2: {beta_part}); {large}; {:.0}s",
        elapsed.as_secs_f64()
    );
    report(4, pass, detail.clone());
    assert!(pass, "{detail}");
}

// Criteria 5 and 6 use the exact moduli of the eigenvalues; the statistics
// are radial about the origin, so this is exact in law.
const C5_NS: [usize; 3] = [128, 512, 2048];
const C5_SAMPLES: usize = 2000;
const C5_SMOOTHING: f64 = 0.5;
const C5_BAND: f64 = 3.0;
const C5_GROWTH: f64 = 2.0;
const C5_BUDGET_S: f64 = 1800.0;

fn moduli_statistics(eq: &EquilibriumMeasure, xi: &TestFunction, n: usize, samples: usize, seed: u64) -> Vec<f64> {
    let mean = equilibrium_mean(eq, xi);
    (0..samples as u64)
        .map(|s| {
            let pts: Vec<Point> = ginibre_moduli(n, seed + s)
                .unwrap()
                .into_iter()
                .map(|r| Point::new(r, 0.0))
                .collect();
            centered_statistic(&pts, xi, mean)
        })
        .collect()
}

#[test]
fn criterion_5_order_one_exponential_moments() {
    let _g = serial();
    let start = Instant::now();
    let eq = equilibrium(&ConfinementPotential::quadratic(), 257, 3.0);
    let g = chi_smoothing(Point::ORIGIN, C5_SMOOTHING).unwrap();
    let (xi, _) = make_zero_mean_combination(&g, &eq).unwrap();
    let mut lines = Vec::new();
    let mut at_plus = Vec::new();
    for (k, &n) in C5_NS.iter().enumerate() {
        let fluct = moduli_statistics(&eq, &xi, n, C5_SAMPLES, 50_000 + 10_000 * k as u64);
        let plus = exp_moment_from_statistics(&fluct, 2.0, n, 1.0 / n as f64).unwrap();
        let minus = exp_moment_from_statistics(&fluct, 2.0, n, -1.0 / n as f64).unwrap();
        lines.push(format!(
            "N={n}: t=+1/N {:.4}±{:.4}, t=-1/N {:.4}±{:.4}",
            plus.estimate, plus.stderr, minus.estimate, minus.stderr
        ));
        at_plus.push(plus.estimate);
    }
    let elapsed = start.elapsed();
    let in_band = at_plus.iter().all(|e| e.abs() <= C5_BAND);
    let no_growth = at_plus.windows(2).all(|w| w[1].abs() <= C5_GROWTH * w[0].abs());
    let pass = in_band && no_growth && within(elapsed, C5_BUDGET_S);
    let detail = format!(
        "{} (band +-{C5_BAND}, successive ratio <= {C5_GROWTH}), {:.1}s",
        lines.join("; "),
        elapsed.as_secs_f64()
    );
    report(5, pass, detail.clone());
    assert!(pass, "{detail}");
}

const C6_SAMPLES: usize = 300;
const C6_RATIO: f64 = 2.0;
const C6_BUDGET_S: f64 = 1200.0;

#[test]
fn criterion_6_variance_boundedness() {
    let _g = serial();
    let start = Instant::now();
    let eq = equilibrium(&ConfinementPotential::quadratic(), 257, 3.0);
    let xi = TestFunction::bump(Point::ORIGIN, 0.6, 1.0).unwrap();
    let v128 = variance(&moduli_statistics(&eq, &xi, 128, C6_SAMPLES, 60_000));
    let v2048 = variance(&moduli_statistics(&eq, &xi, 2048, C6_SAMPLES, 61_000));
    let elapsed = start.elapsed();
    let ratio = v2048 / v128;
    let pass = ratio <= C6_RATIO && within(elapsed, C6_BUDGET_S);
    let detail = format!(
        "var(N=128) {v128:.5}, var(N=2048) {v2048:.5}, ratio {ratio:.3} (<= {C6_RATIO}), {} samples each, {:.1}s",
        C6_SAMPLES,
        elapsed.as_secs_f64()
    );
    report(6, pass, detail.clone());
    assert!(pass, "{detail}");
}

// Criterion 7.
const C7_RESOLUTIONS: [usize; 3] = [129, 257, 513];
const C7_PSI_CELLS: f64 = 5.0;
const C7_RATIO: (f64, f64) = (0.375, 0.625);
const C7_BUDGET_S: f64 = 300.0;

#[test]
fn criterion_7_transport_verification() {
    let _g = serial();
    let start = Instant::now();
    let v = ConfinementPotential::quadratic();
    let xi = TestFunction::half_square();
    let mut sds = Vec::new();
    let mut psi_ok = true;
    let mut lines = Vec::new();
    for m in C7_RESOLUTIONS {
        let eq = equilibrium(&v, m, 3.0);
        let tf = transport_solve(&eq, &xi).unwrap();
        let stats = master_equation_residual(&eq, &xi, &tf).unwrap();
        let h = eq.grid.spacing();
        let err = (0..eq.grid.len())
            .filter(|&i| eq.support_mask[i])
            .map(|i| {
                let p = eq.grid.node_at(i);
                let s = tf.psi.values[i];
                (s[0] + 0.5 * p.x).hypot(s[1] + 0.5 * p.y)
            })
            .fold(0.0, f64::max);
        psi_ok &= err <= C7_PSI_CELLS * h;
        lines.push(format!("M={m}: psi error {:.2}h, residual sd {:.3e}", err / h, stats.stddev));
        sds.push(stats.stddev);
    }
    let ratios: Vec<f64> = sds.windows(2).map(|w| w[1] / w[0]).collect();
    let halves = ratios.iter().all(|r| (C7_RATIO.0..=C7_RATIO.1).contains(r));
    let elapsed = start.elapsed();
    let pass = psi_ok && halves && within(elapsed, C7_BUDGET_S);
    let detail = format!(
        "{}; sd ratios {:.3}, {:.3} (in [{}, {}]), {:.1}s",
        lines.join("; "),
        ratios[0],
        ratios[1],
        C7_RATIO.0,
        C7_RATIO.1,
        elapsed.as_secs_f64()
    );
    report(7, pass, detail.clone());
    assert!(pass, "{detail}");
}

// Criterion 8.
const C8_CANCEL_TOL: f64 = 1e-3;
const C8_OUTSIDE_TOL: f64 = 1e-6;
const C8_MIN_ORDER: f64 = 1.8;
const C8_BUDGET_S: f64 = 60.0;

/// Largest error of the five-point Laplacian of `g` against `2π χ` on a
/// grid of spacing `h` around the centre.
fn laplacian_error(g: &coulomb_lab::field::SmoothedLog, h: f64) -> f64 {
    let reach = 1.2 * g.scale;
    let k = (reach / h).ceil() as i64;
    let mut worst: f64 = 0.0;
    for i in -k..=k {
        for j in -k..=k {
            let p = Point::new(g.center.x + i as f64 * h, g.center.y + j as f64 * h);
            let lap = (g.value(Point::new(p.x + h, p.y))
                + g.value(Point::new(p.x - h, p.y))
                + g.value(Point::new(p.x, p.y + h))
                + g.value(Point::new(p.x, p.y - h))
                - 4.0 * g.value(p))
                / (h * h);
            worst = worst.max((lap - g.laplacian(p)).abs());
        }
    }
    worst
}

#[test]
fn criterion_8_field_identities() {
    let _g = serial();
    let start = Instant::now();
    let eq = equilibrium(&ConfinementPotential::quadratic(), 257, 3.0);
    let mut cancel: f64 = 0.0;
    for r in [1.5, 2.0, 3.0] {
        for k in 0..16 {
            let z = Point::polar(r, 2.0 * PI * k as f64 / 16.0);
            cancel = cancel.max(potential_at(&[Point::ORIGIN], &eq, z).abs());
        }
    }
    let center = Point::new(0.2, -0.1);
    let g = chi_smoothing(center, 0.3).unwrap();
    let mut outside: f64 = 0.0;
    for k in 0..64 {
        for r in [0.3, 0.31, 0.5, 1.0, 4.0] {
            let p = center + Point::polar(r, 0.1 + 2.0 * PI * k as f64 / 64.0);
            outside = outside.max((g.value(p) - (p - center).norm().ln()).abs());
        }
    }
    let hs = [0.02, 0.01, 0.005];
    let errs: Vec<f64> = hs.iter().map(|&h| laplacian_error(&g, h)).collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let elapsed = start.elapsed();
    let pass = cancel <= C8_CANCEL_TOL
        && outside <= C8_OUTSIDE_TOL
        && orders.iter().all(|&o| o >= C8_MIN_ORDER)
        && within(elapsed, C8_BUDGET_S);
    let detail = format!(
        "max |Pot_1| {cancel:.2e} (<= {C8_CANCEL_TOL:e}); |g - log| outside {outside:.2e} (<= {C8_OUTSIDE_TOL:e}); \
         Laplacian errors {:.2e}, {:.2e}, {:.2e} at h = {:?}, orders {:.2}, {:.2} (>= {C8_MIN_ORDER}); {:.1}s",
        errs[0],
        errs[1],
        errs[2],
        hs,
        orders[0],
        orders[1],
        elapsed.as_secs_f64()
    );
    report(8, pass, detail.clone());
    assert!(pass, "{detail}");
}

// Criterion 9.
const C9_N: usize = 1024;
const C9_FIELDS: u64 = 3;
const C9_SUM_TOL: f64 = 1e-12;
const C9_GAMMAS: [f64; 3] = [0.0, 0.5, 1.0];
const C9_BUDGET_S: f64 = 300.0;

#[test]
fn criterion_9_gmc_sanity() {
    let _g = serial();
    let start = Instant::now();
    let eq = equilibrium(&ConfinementPotential::quadratic(), 257, 3.0);
    let mut sum_err: f64 = 0.0;
    let mut uniform_err: f64 = 0.0;
    let mut monotone = true;
    let mut means = Vec::new();
    for s in 0..C9_FIELDS {
        let c = ginibre_exact_with(C9_N, 90_000 + s, GinibreMethod::Hessenberg).unwrap();
        let field = potential_field(&c, &eq, Point::ORIGIN, 0.5, 256, default_exclusion_radius(C9_N)).unwrap();
        let kept = field.excluded.iter().filter(|&&e| !e).count() as f64;
        let mut wm = Vec::new();
        for gamma in C9_GAMMAS {
            let m = gmc_measure(&field, gamma).unwrap();
            sum_err = sum_err.max((m.total() - 1.0).abs());
            if gamma == 0.0 {
                for (w, &e) in m.weights.iter().zip(&field.excluded) {
                    let expected = if e { 0.0 } else { 1.0 / kept };
                    uniform_err = uniform_err.max((w - expected).abs());
                }
            }
            wm.push(m.weighted_mean(&field.values));
        }
        monotone &= wm.windows(2).all(|w| w[1] > w[0]);
        means.push(wm);
    }
    let elapsed = start.elapsed();
    let pass = sum_err <= C9_SUM_TOL && uniform_err <= 1e-15 && monotone && within(elapsed, C9_BUDGET_S);
    let detail = format!(
        "|sum - 1| {sum_err:.1e} (<= {C9_SUM_TOL:e}), gamma=0 deviation from uniform {uniform_err:.1e}, \
         weighted means over gamma {:?}: {:?} (increasing: {monotone}); {:.1}s",
        C9_GAMMAS,
        means
            .iter()
            .map(|m| m.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
        elapsed.as_secs_f64()
    );
    report(9, pass, detail.clone());
    assert!(pass, "{detail}");
}

// Criterion 10.
#[test]
fn criterion_10_determinism() {
    let _g = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let text = format!(
            "potential = quadratic\nns = 32, 64\nbetas = 2, 4\nseeds = 11, 12\nsamples = 3\n\
             n_steps = 120\nburn_in = 20\nthinning = 25\nfield_resolution = 64\n\
             equilibrium_resolution = 129\ncache = false\noutput_dir = {}\n",
            dir.path().join(name).display()
        );
        let config = ExperimentConfig::parse(&text).unwrap();
        let record = run_maxscan(&config).unwrap();
        record.write(&config.output_dir).unwrap();
        assert!(record.errors.is_empty(), "{:?}", record.errors);
        std::fs::read(config.output_dir.join("maxscan.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    let rows = a.iter().filter(|&&c| c == b'\n').count() - 1;
    let pass = a == b && rows > 0;
    let detail = format!(
        "two maxscan runs, {rows} rows each, byte-identical CSV: {}; {:.1}s",
        a == b,
        start.elapsed().as_secs_f64()
    );
    report(10, pass, detail.clone());
    assert!(pass, "{detail}");
}
