//! The potential field `Pot_N(z) = Σ log|z - x_i| + N h0(z)`, its
//! mollified versions, disk maxima and normalized exponential measures.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumMeasure;
use crate::error::{LabError, Result};
use crate::geometry::Point;
use crate::grid::{Grid2D, ScalarField};
use crate::model::Configuration;
use crate::numerics::{gauss_legendre, HermiteTable, KahanSum};

/// Default number of nodes per side of the disk grid.
pub const DEFAULT_FIELD_RESOLUTION: usize = 256;
/// Largest excluded fraction accepted without a warning.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.05;

/// Default exclusion radius `1 / (4 sqrt(N))`.
pub fn default_exclusion_radius(n: usize) -> f64 {
    0.25 / (n.max(1) as f64).sqrt()
}

/// Unnormalized standard bump `exp(-1/(1 - t^2))` for `t < 1`.
#[inline]
fn bump(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

const TABLE_NODES: usize = 2049;

/// Profile of `log|·| * ρ` for the normalized radial bump `ρ` supported in
/// the unit disk, tabulated on `[0, 1]`. Rescaling gives every other scale:
/// for `ρ_a(y) = a^{-2} ρ(y/a)`, `(log|·| * ρ_a)(x) = log a + k(|x|/a)`.
#[derive(Debug)]
struct UnitProfile {
    norm: f64,
    values: HermiteTable,
    mass: HermiteTable,
}

fn unit_profile() -> &'static UnitProfile {
    static PROFILE: std::sync::OnceLock<UnitProfile> = std::sync::OnceLock::new();
    PROFILE.get_or_init(build_unit_profile)
}

fn build_unit_profile() -> UnitProfile {
    let (gx, gw) = gauss_legendre(16);
    let n = TABLE_NODES;
    let dr = 1.0 / (n - 1) as f64;
    // Per-interval integrals of 2π s ρ(s) and 2π s log(s) ρ(s).
    let mut dm = vec![0.0; n - 1];
    let mut dl = vec![0.0; n - 1];
    for k in 0..n - 1 {
        let (a, b) = (k as f64 * dr, (k + 1) as f64 * dr);
        let (mut m, mut l) = (0.0, 0.0);
        for (x, w) in gx.iter().zip(&gw) {
            let s = 0.5 * (a + b) + 0.5 * (b - a) * x;
            let f = 2.0 * PI * s * bump(s) * 0.5 * (b - a) * w;
            m += f;
            l += f * s.ln();
        }
        dm[k] = m;
        dl[k] = l;
    }
    let norm: f64 = dm.iter().sum();
    // Cumulative mass M(r) and tail T(r) = ∫_r^1 log s dM(s).
    let mut mass = vec![0.0; n];
    for k in 0..n - 1 {
        mass[k + 1] = mass[k] + dm[k] / norm;
    }
    let mut tail = vec![0.0; n];
    for k in (0..n - 1).rev() {
        tail[k] = tail[k + 1] + dl[k] / norm;
    }
    let mut values = vec![0.0; n];
    let mut slopes = vec![0.0; n];
    let mut density = vec![0.0; n];
    for k in 0..n {
        let r = k as f64 * dr;
        values[k] = if k == 0 { tail[0] } else { r.ln() * mass[k] + tail[k] };
        slopes[k] = if k == 0 { 0.0 } else { mass[k] / r };
        density[k] = 2.0 * PI * r * bump(r) / norm;
    }
    UnitProfile {
        norm,
        values: HermiteTable::new(0.0, dr, values, slopes),
        mass: HermiteTable::new(0.0, dr, mass, density),
    }
}

/// `log|· - z| * ρ_a`: the logarithm smoothed by the normalized radial bump
/// of radius `a` centred at `z`. Equals `log|x - z|` for `|x - z| ≥ a` and
/// satisfies `Δ g = 2π ρ_a(· - z)`.
#[derive(Clone, Debug)]
pub struct SmoothedLog {
    pub center: Point,
    pub scale: f64,
}

impl SmoothedLog {
    pub fn new(center: Point, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(LabError::domain(format!("smoothing scale must be positive, got {scale}")));
        }
        center.validated()?;
        unit_profile();
        Ok(SmoothedLog { center, scale })
    }

    /// Radial profile as a function of the distance to the centre.
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        if r >= self.scale {
            r.ln()
        } else {
            self.scale.ln() + unit_profile().values.eval(r / self.scale)
        }
    }

    /// Mass of the bump inside radius `r`.
    pub fn mass_within(&self, r: f64) -> f64 {
        if r >= self.scale {
            1.0
        } else {
            unit_profile().mass.eval(r / self.scale).clamp(0.0, 1.0)
        }
    }

    pub fn value(&self, p: Point) -> f64 {
        self.radial(p.dist(self.center))
    }

    pub fn gradient(&self, p: Point) -> [f64; 2] {
        let d = p - self.center;
        let r2 = d.norm_sqr();
        if r2 == 0.0 {
            return [0.0, 0.0];
        }
        let f = self.mass_within(r2.sqrt()) / r2;
        [f * d.x, f * d.y]
    }

    /// The bump `ρ_a(p - z)` itself.
    pub fn bump(&self, p: Point) -> f64 {
        let a = self.scale;
        bump(p.dist(self.center) / a) / (unit_profile().norm * a * a)
    }

    /// `Δ g = 2π ρ_a`.
    pub fn laplacian(&self, p: Point) -> f64 {
        2.0 * PI * self.bump(p)
    }

    pub fn sample(&self, grid: &Grid2D) -> ScalarField {
        grid.sample(|p| self.value(p))
    }
}

/// The `χ`-smoothing function: `g = log|· - z| * χ` with `χ` the normalized
/// radial bump on `D(z, r')`, so that `Δg = 2πχ`.
pub fn chi_smoothing(z: Point, r_prime: f64) -> Result<SmoothedLog> {
    SmoothedLog::new(z, r_prime)
}

/// Polar quadrature of `∫ ρ_a(y) f(z + y) dy`.
fn bump_average<F: Fn(Point) -> f64>(z: Point, a: f64, f: F) -> f64 {
    const RADIAL: usize = 24;
    const ANGULAR: usize = 48;
    let (gx, gw) = gauss_legendre(RADIAL);
    let norm = unit_profile().norm;
    let mut acc = KahanSum::new();
    for (x, w) in gx.iter().zip(&gw) {
        let t = 0.5 * (1.0 + x);
        let radial_weight = 0.5 * w * 2.0 * PI * t * bump(t) / norm;
        let mut ring = KahanSum::new();
        for k in 0..ANGULAR {
            let theta = 2.0 * PI * (k as f64 + 0.5) / ANGULAR as f64;
            ring.add(f(z + Point::polar(a * t, theta)));
        }
        acc.add(radial_weight * ring.value() / ANGULAR as f64);
    }
    acc.value()
}

/// `Fluct_N[ρ_ε * log|· - z|] = Σ k_ε(x_i - z) + N ∫ ρ_ε(y) h0(z + y) dy`.
pub fn mollified_statistic(
    config: &Configuration,
    eq: &EquilibriumMeasure,
    z: Point,
    eps: f64,
) -> Result<f64> {
    let k = SmoothedLog::new(z, eps)?;
    let n = config.n() as f64;
    let particles: KahanSum = config.points().iter().map(|&p| k.value(p)).collect();
    let background = bump_average(z, eps, |p| eq.background_potential(p));
    Ok(particles.value() + n * background)
}

/// `Pot_N` sampled on the nodes of a disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldGrid {
    pub center: Point,
    pub radius: f64,
    pub resolution: usize,
    pub delta: f64,
    /// Nodes of the square `resolution x resolution` grid lying in the disk, in row-major order.
    pub nodes: Vec<Point>,
    pub values: Vec<f64>,
    /// Nodes within `delta` of a particle.
    pub excluded: Vec<bool>,
    pub warnings: Vec<String>,
}

impl FieldGrid {
    pub fn excluded_fraction(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        self.excluded.iter().filter(|&&e| e).count() as f64 / self.nodes.len() as f64
    }

    /// CSV rows `x,y,pot,excluded`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,pot,excluded\n");
        for ((p, v), e) in self.nodes.iter().zip(&self.values).zip(&self.excluded) {
            out.push_str(&format!("{},{},{},{}\n", p.x, p.y, v, *e as u8));
        }
        out
    }
}

/// `Σ log|z - x_i|`, with logarithms of products of eight squared distances.
#[inline]
fn log_sum(z: Point, points: &[Point]) -> (f64, f64) {
    let mut log_acc = 0.0;
    let mut prod = 1.0;
    let mut min_d2 = f64::INFINITY;
    for chunk in points.chunks(8) {
        for &p in chunk {
            let d2 = z.dist_sqr(p);
            min_d2 = min_d2.min(d2);
            prod *= d2;
        }
        log_acc += prod.ln();
        prod = 1.0;
    }
    (0.5 * log_acc, min_d2)
}

/// `Pot_N(z)` at a single point.
pub fn potential_at(points: &[Point], eq: &EquilibriumMeasure, z: Point) -> f64 {
    log_sum(z, points).0 + points.len() as f64 * eq.background_potential(z)
}

/// Evaluates `Pot_N` for an arbitrary list of particles (possibly empty).
pub fn potential_field_points(
    points: &[Point],
    eq: &EquilibriumMeasure,
    center: Point,
    radius: f64,
    resolution: usize,
    delta: f64,
) -> Result<FieldGrid> {
    center.validated()?;
    if !(radius > 0.0) || resolution < 2 || !(delta >= 0.0) {
        return Err(LabError::domain(
            "disk radius must be positive, resolution at least 2 and delta non-negative",
        ));
    }
    let mut warnings = Vec::new();
    if eq.distance_to_exterior(center) <= radius {
        let msg = format!(
            "disk D(({}, {}), {radius}) is not strictly inside the droplet",
            center.x, center.y
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let step = 2.0 * radius / (resolution - 1) as f64;
    let mut nodes = Vec::new();
    for row in 0..resolution {
        for col in 0..resolution {
            let p = Point::new(
                center.x - radius + col as f64 * step,
                center.y - radius + row as f64 * step,
            );
            if p.dist_sqr(center) <= radius * radius * (1.0 + 1e-12) {
                nodes.push(p);
            }
        }
    }
    let n = points.len() as f64;
    let d2 = delta * delta;
    let evaluated: Vec<(f64, bool)> = nodes
        .par_iter()
        .map(|&z| {
            let (s, min_d2) = log_sum(z, points);
            (s + n * eq.background_potential(z), min_d2 < d2)
        })
        .collect();
    let (values, excluded): (Vec<f64>, Vec<bool>) = evaluated.into_iter().unzip();
    let field = FieldGrid {
        center,
        radius,
        resolution,
        delta,
        nodes,
        values,
        excluded,
        warnings,
    };
    let frac = field.excluded_fraction();
    let mut field = field;
    if frac > MAX_EXCLUDED_FRACTION {
        let msg = format!(
            "excluded fraction {frac:.4} exceeds {MAX_EXCLUDED_FRACTION}; delta {delta} is large for N = {}",
            points.len()
        );
        log::debug!("{msg}");
        field.warnings.push(msg);
    }
    Ok(field)
}

/// `Pot_N` on a disk; nodes within `delta` of a particle are excluded.
pub fn potential_field(
    config: &Configuration,
    eq: &EquilibriumMeasure,
    center: Point,
    radius: f64,
    resolution: usize,
    delta: f64,
) -> Result<FieldGrid> {
    potential_field_points(config.points(), eq, center, radius, resolution, delta)
}

/// Maximum over non-excluded nodes; the first node in row-major order wins ties.
pub fn max_over_disk(field: &FieldGrid) -> Result<(f64, Point)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, (&v, &e)) in field.values.iter().zip(&field.excluded).enumerate() {
        if e || v.is_nan() {
            continue;
        }
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, i));
        }
    }
    best.map(|(v, i)| (v, field.nodes[i]))
        .ok_or_else(|| LabError::DegenerateField("every node of the disk is excluded".into()))
}

/// Normalized `exp(γ Pot_N)` on non-excluded nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmcMeasure {
    pub gamma: f64,
    /// One weight per field node; zero on excluded nodes.
    pub weights: Vec<f64>,
}

impl GmcMeasure {
    pub fn total(&self) -> f64 {
        self.weights.iter().copied().collect::<KahanSum>().value()
    }

    /// `∫ f dμ^γ` for per-node values `f`.
    pub fn weighted_mean(&self, values: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(values)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, v)| w * v)
            .collect::<KahanSum>()
            .value()
    }

    /// CSV rows `x,y,weight`.
    pub fn to_csv(&self, field: &FieldGrid) -> String {
        let mut out = String::from("x,y,weight\n");
        for (p, w) in field.nodes.iter().zip(&self.weights) {
            out.push_str(&format!("{},{},{}\n", p.x, p.y, w));
        }
        out
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(LabError::domain(format!("gamma must be non-negative, got {gamma}")));
    }
    Ok(())
}

/// Per-field normalization: the weights sum to one.
pub fn gmc_measure(field: &FieldGrid, gamma: f64) -> Result<GmcMeasure> {
    check_gamma(gamma)?;
    let (top, _) = max_over_disk(field)?;
    let mut weights: Vec<f64> = field
        .values
        .iter()
        .zip(&field.excluded)
        .map(|(&v, &e)| if e { 0.0 } else { (gamma * (v - top)).exp() })
        .collect();
    let total: f64 = weights.iter().copied().collect::<KahanSum>().value();
    for w in &mut weights {
        *w /= total;
    }
    // A final compensated pass absorbs the rounding of the division.
    let residual = weights.iter().copied().collect::<KahanSum>().value() - 1.0;
    if let Some(i) = weights.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i) {
        weights[i] -= residual;
    }
    Ok(GmcMeasure { gamma, weights })
}

/// Cross-sample normalization: every field is divided by the ensemble mean
/// of `Σ exp(γ Pot_N)`, so the totals average to one.
pub fn gmc_measure_ensemble(fields: &[FieldGrid], gamma: f64) -> Result<Vec<GmcMeasure>> {
    check_gamma(gamma)?;
    if fields.is_empty() {
        return Err(LabError::domain("ensemble normalization needs at least one field"));
    }
    let tops = fields
        .iter()
        .map(|f| max_over_disk(f).map(|(v, _)| v))
        .collect::<Result<Vec<_>>>()?;
    let shift = tops.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| {
            f.values
                .iter()
                .zip(&f.excluded)
                .map(|(&v, &e)| if e { 0.0 } else { (gamma * (v - shift)).exp() })
                .collect()
        })
        .collect();
    let mean_total = raw
        .iter()
        .map(|w| w.iter().copied().collect::<KahanSum>().value())
        .collect::<KahanSum>()
        .value()
        / fields.len() as f64;
    Ok(raw
        .into_iter()
        .map(|w| GmcMeasure {
            gamma,
            weights: w.into_iter().map(|x| x / mean_total).collect(),
        })
        .collect())
}
