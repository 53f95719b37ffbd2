//! Energies of a configuration and the splitting of the Hamiltonian.

use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumMeasure;
use crate::error::Result;
use crate::geometry::Point;
use crate::model::{ConfinementPotential, Configuration};
use crate::numerics::KahanSum;

/// Pairs closer than this are treated as coincident.
pub const COINCIDENCE_DISTANCE: f64 = 1e-14;

/// Probe used to calibrate the coefficient of the `ζ` term.
pub const KAPPA_PROBE: Point = Point::new(2.0, 0.0);

/// The pieces of the splitting `H = N² I_V + κ N Σ ζ(x_i) + F_N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub hamiltonian: f64,
    pub continuous_energy: f64,
    pub next_order: f64,
    pub zeta_sum: f64,
    pub kappa: f64,
    pub split_residual: f64,
}

/// Points in lexicographic order, so that pair sums do not depend on the
/// order in which the configuration lists them.
fn canonical(points: &[Point]) -> Vec<Point> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p
}

/// `½ Σ_{i≠j} -log|x_i - x_j|`, or `+∞` if two points coincide.
pub fn interaction_energy(points: &[Point]) -> f64 {
    let p = canonical(points);
    let min_d2 = COINCIDENCE_DISTANCE * COINCIDENCE_DISTANCE;
    let mut acc = KahanSum::new();
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            let d2 = p[i].dist_sqr(p[j]);
            if d2 < min_d2 {
                return f64::INFINITY;
            }
            acc.add(-0.5 * d2.ln());
        }
    }
    acc.value()
}

fn sum_over<F: Fn(Point) -> f64>(points: &[Point], f: F) -> f64 {
    canonical(points).into_iter().map(f).collect::<KahanSum>().value()
}

/// `H_N(X) = ½ Σ_{i≠j} g(x_i - x_j) + N Σ V(x_i)` by direct summation.
pub fn hamiltonian(config: &Configuration, v: &ConfinementPotential) -> f64 {
    let pts = config.points();
    let n = pts.len() as f64;
    let inter = interaction_energy(pts);
    if inter.is_infinite() {
        return f64::INFINITY;
    }
    inter + n * sum_over(pts, |p| v.value(p))
}

/// `I_V(μ_V) = ½ ∫ h0 dμ + ∫ V dμ`.
pub fn continuous_energy(eq: &EquilibriumMeasure) -> f64 {
    let v = eq.potential();
    0.5 * eq.integrate_field(&eq.h0.values) + eq.integrate(|p| v.value(p))
}

/// `∬ g dμ dμ = ∫ h0 dμ`.
pub fn self_energy(eq: &EquilibriumMeasure) -> f64 {
    eq.integrate_field(&eq.h0.values)
}

/// `F_N = ½ Σ_{i≠j} g(x_i - x_j) - N Σ h0(x_i) + (N²/2) ∬ g dμ dμ`.
pub fn next_order_energy(config: &Configuration, eq: &EquilibriumMeasure) -> f64 {
    let pts = config.points();
    let n = pts.len() as f64;
    let inter = interaction_energy(pts);
    if inter.is_infinite() {
        return f64::INFINITY;
    }
    inter - n * sum_over(pts, |p| eq.background_potential(p)) + 0.5 * n * n * self_energy(eq)
}

/// `Σ ζ(x_i)` with `ζ = h0 + V - c_V` (no clamping).
pub fn zeta_sum(config: &Configuration, eq: &EquilibriumMeasure) -> f64 {
    sum_over(config.points(), |p| eq.zeta_unclamped(p))
}

/// Coefficient of the `ζ` term, read off from a single particle at a probe
/// point outside the droplet where the other pieces are known exactly.
pub fn calibrate_kappa(eq: &EquilibriumMeasure, probe: Point) -> Result<f64> {
    let config = Configuration::from_points(vec![probe], 1.0)?;
    let h = hamiltonian(&config, eq.potential());
    let i = continuous_energy(eq);
    let f = next_order_energy(&config, eq);
    let z = zeta_sum(&config, eq);
    if z.abs() < 1e-6 {
        return Err(crate::error::LabError::domain(
            "calibration probe lies on the droplet; ζ vanishes there",
        ));
    }
    Ok((h - i - f) / z)
}

/// Assembles the splitting and its residual for a calibrated `κ`.
pub fn split_identity_residual(
    config: &Configuration,
    eq: &EquilibriumMeasure,
    v: &ConfinementPotential,
    kappa: f64,
) -> EnergyReport {
    let n = config.n() as f64;
    let hamiltonian = hamiltonian(config, v);
    let continuous_energy = continuous_energy(eq);
    let next_order = next_order_energy(config, eq);
    let zeta_sum = zeta_sum(config, eq);
    let split_residual =
        hamiltonian - (n * n * continuous_energy + kappa * n * zeta_sum + next_order);
    EnergyReport {
        hamiltonian,
        continuous_energy,
        next_order,
        zeta_sum,
        kappa,
        split_residual,
    }
}
