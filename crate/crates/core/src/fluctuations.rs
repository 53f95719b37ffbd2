//! Linear statistics, exponential moments and the transport field that
//! inverts the master equation
//! `ψ·∇ζ + ξ - ∫ ∇g(x - y)·ψ(y) dμ(y) = c_ξ`.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{harmonic_extension_fn, multicut_flux_check, EquilibriumMeasure};
use crate::error::{LabError, Result};
use crate::field::SmoothedLog;
use crate::geometry::Point;
use crate::grid::{Grid2D, ScalarField, VectorField};
use crate::model::Configuration;
use crate::numerics::{conjugate_gradient, mean, KahanSum};
use crate::sampler::SampleSet;

/// Largest `|t| N` accepted by [`exp_moment_estimate`].
pub const DEFAULT_MAX_TN: f64 = 10.0;
/// Share of the empirical mean carried by one sample above which the
/// exponential moment is flagged as unreliable.
pub const HEAVY_TAIL_FRACTION: f64 = 0.2;
/// `U = {ζ < margin}` for the master-equation residual.
pub const DEFAULT_RESIDUAL_MARGIN: f64 = 0.05;
/// Width of the tangential blending band outside the droplet, in cells.
pub const BLEND_WIDTH_CELLS: f64 = 4.0;
/// Width of the band outside the droplet over which the normal part is
/// blended with the boundary value, in cells.
pub const NORMAL_BLEND_CELLS: f64 = 3.0;
/// Relative per-component flux above which a multi-cut droplet is declared
/// incompatible, scaled by `h`.
pub const FLUX_TOLERANCE_FACTOR: f64 = 10.0;

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// Regularity class of a test function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularity {
    Lipschitz,
    C11,
    /// `C^{2,α}`; the exponent is not tracked numerically.
    C2Alpha,
}

/// A test function with its gradient and Laplacian.
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    eval: ScalarFn,
    gradient: VectorFn,
    laplacian: ScalarFn,
    pub regularity: Regularity,
    /// `C` in `|ξ(x)| ≤ C (log|x| + 1)`; infinite when no such bound holds.
    pub growth: f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("regularity", &self.regularity)
            .field("growth", &self.growth)
            .finish()
    }
}

impl TestFunction {
    pub fn new<E, G, L>(
        name: impl Into<String>,
        eval: E,
        gradient: G,
        laplacian: L,
        regularity: Regularity,
        growth: f64,
    ) -> Self
    where
        E: Fn(Point) -> f64 + Send + Sync + 'static,
        G: Fn(Point) -> [f64; 2] + Send + Sync + 'static,
        L: Fn(Point) -> f64 + Send + Sync + 'static,
    {
        TestFunction {
            name: name.into(),
            eval: Arc::new(eval),
            gradient: Arc::new(gradient),
            laplacian: Arc::new(laplacian),
            regularity,
            growth,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(
            format!("const({c})"),
            move |_| c,
            |_| [0.0, 0.0],
            |_| 0.0,
            Regularity::C2Alpha,
            c.abs(),
        )
    }

    /// `|x|² / 2`.
    pub fn half_square() -> Self {
        Self::new(
            "half_square",
            |p| 0.5 * p.norm_sqr(),
            |p| [p.x, p.y],
            |_| 2.0,
            Regularity::C2Alpha,
            f64::INFINITY,
        )
    }

    /// `amplitude · exp(-1/(1 - |x - c|²/r²))`, smooth with support `D(c, r)`.
    pub fn bump(center: Point, radius: f64, amplitude: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(LabError::domain("bump radius must be positive"));
        }
        let r2 = radius * radius;
        let parts = move |p: Point| -> Option<(f64, f64, f64, Point)> {
            let d = p - center;
            let s = d.norm_sqr() / r2;
            if s >= 1.0 {
                return None;
            }
            let f = amplitude * (-1.0 / (1.0 - s)).exp();
            Some((s, f, 1.0 - s, d))
        };
        Ok(Self::new(
            format!("bump({}, {}; {radius})", center.x, center.y),
            move |p| parts(p).map_or(0.0, |(_, f, _, _)| f),
            move |p| {
                parts(p).map_or([0.0, 0.0], |(_, f, q, d)| {
                    let k = -f / (q * q) * 2.0 / r2;
                    [k * d.x, k * d.y]
                })
            },
            move |p| {
                parts(p).map_or(0.0, |(s, f, q, _)| {
                    let d1 = -f / (q * q);
                    let d2 = f * (2.0 * s - 1.0) / q.powi(4);
                    d2 * 4.0 * s / r2 + d1 * 4.0 / r2
                })
            },
            Regularity::C2Alpha,
            amplitude.abs(),
        ))
    }

    /// The smoothed logarithm `log|· - z| * χ` as a test function.
    pub fn smoothed_log(g: &SmoothedLog) -> Self {
        let (a, b, c) = (g.clone(), g.clone(), g.clone());
        Self::new(
            format!("smoothed_log({}, {}; {})", g.center.x, g.center.y, g.scale),
            move |p| a.value(p),
            move |p| b.gradient(p),
            move |p| c.laplacian(p),
            Regularity::C2Alpha,
            1.0 + g.center.norm() + g.scale.ln().abs(),
        )
    }

    /// `a ξ₁ + b ξ₂`.
    pub fn combine(a: f64, first: &TestFunction, b: f64, second: &TestFunction) -> Self {
        let (f1, f2) = (first.eval.clone(), second.eval.clone());
        let (g1, g2) = (first.gradient.clone(), second.gradient.clone());
        let (l1, l2) = (first.laplacian.clone(), second.laplacian.clone());
        let regularity = match (first.regularity, second.regularity) {
            (Regularity::Lipschitz, _) | (_, Regularity::Lipschitz) => Regularity::Lipschitz,
            (Regularity::C11, _) | (_, Regularity::C11) => Regularity::C11,
            _ => Regularity::C2Alpha,
        };
        Self::new(
            format!("{a}*{} + {b}*{}", first.name, second.name),
            move |p| a * f1(p) + b * f2(p),
            move |p| {
                let (u, v) = (g1(p), g2(p));
                [a * u[0] + b * v[0], a * u[1] + b * v[1]]
            },
            move |p| a * l1(p) + b * l2(p),
            regularity,
            a.abs() * first.growth + b.abs() * second.growth,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn value(&self, p: Point) -> f64 {
        (self.eval)(p)
    }

    #[inline]
    pub fn gradient(&self, p: Point) -> [f64; 2] {
        (self.gradient)(p)
    }

    #[inline]
    pub fn laplacian(&self, p: Point) -> f64 {
        (self.laplacian)(p)
    }

    /// Largest difference quotient of the gradient over neighbouring nodes
    /// of an `n x n` grid on the square of half-width `radius` about `center`.
    pub fn gradient_lipschitz(&self, center: Point, radius: f64, n: usize) -> f64 {
        let n = n.max(2);
        let step = 2.0 * radius / (n - 1) as f64;
        let node = |i: usize, j: usize| {
            Point::new(center.x - radius + i as f64 * step, center.y - radius + j as f64 * step)
        };
        let mut best: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let g = self.gradient(node(i, j));
                for (ii, jj) in [(i + 1, j), (i, j + 1)] {
                    if ii < n && jj < n {
                        let h = self.gradient(node(ii, jj));
                        best = best.max((g[0] - h[0]).hypot(g[1] - h[1]) / step);
                    }
                }
            }
        }
        best
    }

    /// Rejects `C11` and `C2Alpha` tags whose sampled gradient quotients
    /// exceed `bound`.
    pub fn check_regularity(&self, center: Point, radius: f64, bound: f64) -> Result<f64> {
        let lip = self.gradient_lipschitz(center, radius, 129);
        if self.regularity != Regularity::Lipschitz && !(lip <= bound) {
            return Err(LabError::domain(format!(
                "{} is tagged {:?} but its gradient quotients reach {lip}",
                self.name, self.regularity
            )));
        }
        Ok(lip)
    }
}

/// `ξ = g - c h0` with `c` chosen so that `∫ Δξ = 0`: since `∫Δg = 2π` and
/// `∫Δh0 = -2π` times the total mass, `c = -1` for a unit-mass measure.
pub fn make_zero_mean_combination(g: &SmoothedLog, eq: &EquilibriumMeasure) -> Result<(TestFunction, f64)> {
    let c = 2.0 * PI / (-2.0 * PI * eq.mass());
    let h0 = background_test_function(eq);
    let combo = TestFunction::combine(1.0, &TestFunction::smoothed_log(g), -c, &h0);
    Ok((
        TestFunction {
            regularity: Regularity::C11,
            ..combo
        },
        c,
    ))
}

/// `h0` as a test function: bilinear with centred-difference gradients in
/// the box, `-log|x|` outside, and `Δh0 = -2π μ` with `μ` the stored
/// density at the nearest node, so that `∫ Δh0 = -2π` under node quadrature.
pub fn background_test_function(eq: &EquilibriumMeasure) -> TestFunction {
    let grid = eq.grid;
    let m = grid.resolution();
    let mut grad = VectorField::zeros(grid);
    for row in 0..m {
        for col in 0..m {
            grad.values[grid.index(col, row)] = eq.h0.gradient_at(col, row);
        }
    }
    let eq_value = Arc::new(eq.clone());
    let eq_lap = eq_value.clone();
    TestFunction::new(
        "h0",
        move |p| eq_value.background_potential(p),
        move |p| {
            grad.interpolate(p).unwrap_or_else(|| {
                let r2 = p.norm_sqr();
                [-p.x / r2, -p.y / r2]
            })
        },
        move |p| {
            eq_lap
                .grid
                .nearest(p)
                .map_or(0.0, |i| -2.0 * PI * eq_lap.density.values[i])
        },
        Regularity::C11,
        1.0,
    )
}

/// `∫ ξ dμ_V` by grid quadrature.
pub fn equilibrium_mean(eq: &EquilibriumMeasure, xi: &TestFunction) -> f64 {
    eq.integrate(|p| xi.value(p))
}

/// `Σ ξ(x_i) - N mean` for a precomputed `mean = ∫ ξ dμ_V`.
pub fn centered_statistic(points: &[Point], xi: &TestFunction, mean: f64) -> f64 {
    let sum: KahanSum = points.iter().map(|&p| xi.value(p)).collect();
    sum.value() - points.len() as f64 * mean
}

/// `Fluct_N(ξ) = Σ ξ(x_i) - N ∫ ξ dμ_V`.
pub fn linear_statistic(config: &Configuration, eq: &EquilibriumMeasure, xi: &TestFunction) -> f64 {
    centered_statistic(config.points(), xi, equilibrium_mean(eq, xi))
}

/// `Fluct_N(ξ)` for every configuration of a sample set.
pub fn linear_statistics(samples: &SampleSet, eq: &EquilibriumMeasure, xi: &TestFunction) -> Vec<f64> {
    let mean = equilibrium_mean(eq, xi);
    samples
        .configurations
        .iter()
        .map(|c| centered_statistic(c.points(), xi, mean))
        .collect()
}

/// `Fluct_N(ξ)` for a radial `ξ` from the moduli alone.
pub fn radial_linear_statistic(moduli: &[f64], eq: &EquilibriumMeasure, xi: &TestFunction) -> f64 {
    let points: Vec<Point> = moduli.iter().map(|&r| Point::new(r, 0.0)).collect();
    centered_statistic(&points, xi, equilibrium_mean(eq, xi))
}

/// Empirical exponential moment with its uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMoment {
    /// `log` of the empirical mean of `exp(-β t N Fluct_N(ξ))`.
    pub estimate: f64,
    /// Jackknife standard error.
    pub stderr: f64,
    /// Largest single-sample share of the empirical mean.
    pub top_share: f64,
    pub heavy_tail: bool,
    pub samples: usize,
}

/// Log-mean-exp of `-β t N F_s` over the given statistics, with a
/// leave-one-out jackknife error.
pub fn exp_moment_from_statistics(fluct: &[f64], beta: f64, n: usize, t: f64) -> Result<ExpMoment> {
    if fluct.is_empty() {
        return Err(LabError::domain("exponential moment of an empty sample set"));
    }
    let scale = -beta * t * n as f64;
    let a: Vec<f64> = fluct.iter().map(|f| scale * f).collect();
    let top = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(LabError::Numeric("non-finite linear statistic".into()));
    }
    let w: Vec<f64> = a.iter().map(|x| (x - top).exp()).collect();
    let s = w.len();
    let total: f64 = w.iter().copied().collect::<KahanSum>().value();
    let estimate = top + (total / s as f64).ln();
    let top_share = w.iter().copied().fold(0.0, f64::max) / total;
    let stderr = if s < 2 {
        f64::INFINITY
    } else {
        let mut prefix = vec![0.0; s + 1];
        let mut acc = KahanSum::new();
        for i in 0..s {
            acc.add(w[i]);
            prefix[i + 1] = acc.value();
        }
        let mut suffix = vec![0.0; s + 1];
        let mut acc = KahanSum::new();
        for i in (0..s).rev() {
            acc.add(w[i]);
            suffix[i] = acc.value();
        }
        let loo: Vec<f64> = (0..s)
            .map(|i| top + ((prefix[i] + suffix[i + 1]) / (s - 1) as f64).ln())
            .collect();
        let m = mean(&loo);
        let var: f64 = loo.iter().map(|x| (x - m) * (x - m)).sum::<f64>() * (s - 1) as f64 / s as f64;
        var.sqrt()
    };
    let heavy_tail = top_share > HEAVY_TAIL_FRACTION;
    if heavy_tail {
        log::warn!("exponential moment at t = {t}: one sample carries {top_share:.2} of the mean");
    }
    Ok(ExpMoment {
        estimate,
        stderr,
        top_share,
        heavy_tail,
        samples: s,
    })
}

/// `log E[exp(-β t N Fluct_N(ξ))]` estimated from a sample set, for
/// `|t| N ≤ 10`.
pub fn exp_moment_estimate(
    samples: &SampleSet,
    eq: &EquilibriumMeasure,
    xi: &TestFunction,
    t: f64,
) -> Result<ExpMoment> {
    let params = samples
        .params()
        .ok_or_else(|| LabError::domain("exponential moment of an empty sample set"))?;
    if !(t.abs() * params.n as f64 <= DEFAULT_MAX_TN) {
        return Err(LabError::domain(format!(
            "|t| N = {} exceeds {DEFAULT_MAX_TN}",
            t.abs() * params.n as f64
        )));
    }
    let fluct = linear_statistics(samples, eq, xi);
    exp_moment_from_statistics(&fluct, params.beta, params.n, t)
}

/// Transport field solving the master equation near the droplet.
#[derive(Clone, Debug)]
pub struct TransportField {
    pub psi: VectorField,
    pub c_xi: f64,
    /// Left side of the master equation minus `c_xi` on `U`, zero elsewhere.
    pub residual_field: ScalarField,
    /// Nodes of `U = {ζ < margin}`.
    pub region: Vec<bool>,
    pub margin: f64,
    /// Largest difference quotient of `ψ` between neighbouring nodes of `U`.
    pub lipschitz: f64,
    /// Per-component boundary flux of the harmonic extension.
    pub component_flux: Vec<f64>,
}

impl TransportField {
    pub fn grid(&self) -> Grid2D {
        self.psi.grid
    }

    /// CSV rows `x,y,psi1,psi2,residual` over `U`.
    pub fn to_csv(&self) -> String {
        let g = self.psi.grid;
        let mut out = String::from("x,y,psi1,psi2,residual\n");
        for i in 0..g.len() {
            if self.region[i] {
                let p = g.node_at(i);
                let v = self.psi.values[i];
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    p.x, p.y, v[0], v[1], self.residual_field.values[i]
                ));
            }
        }
        out
    }
}

/// Summary of the master-equation residual over `U`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub stddev: f64,
    pub max_abs: f64,
    pub nodes: usize,
}

const DIRS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn step(grid: &Grid2D, i: usize, k: usize) -> Option<usize> {
    let m = grid.resolution() as isize;
    let (c, r) = grid.col_row(i);
    let (cc, rr) = (c as isize + DIRS[k].0, r as isize + DIRS[k].1);
    (cc >= 0 && rr >= 0 && cc < m && rr < m).then(|| grid.index(cc as usize, rr as usize))
}

/// `∇ζ` at every node: zero on the droplet, centred differences of `h0`
/// plus `∇V` elsewhere.
fn zeta_gradient(eq: &EquilibriumMeasure) -> Vec<[f64; 2]> {
    let g = eq.grid;
    (0..g.len())
        .map(|i| {
            if eq.support_mask[i] {
                return [0.0, 0.0];
            }
            let (c, r) = g.col_row(i);
            let dh = eq.h0.gradient_at(c, r);
            let dv = eq.potential().gradient(g.node_at(i));
            [dh[0] + dv[0], dh[1] + dv[1]]
        })
        .collect()
}

/// Solves for `ψ` with the default margin.
pub fn transport_solve(eq: &EquilibriumMeasure, xi: &TestFunction) -> Result<TransportField> {
    transport_solve_with(eq, xi, DEFAULT_RESIDUAL_MARGIN)
}

/// Inside the droplet `ψ = (∇v - ∇ξ/(2π)) / μ` with `v` harmonic and
/// `∂_n v = ∂_n ξ^Σ / (2π)`, so that `div(μψ) = -Δξ/(2π)` and
/// `μ ψ·n = [∇ξ^Σ]·n / (2π)`. Outside, `ψ` is the normal field
/// `(ξ^Σ - ξ) ∇ζ / |∇ζ|²` plus the tangential part of the nearest boundary
/// value, faded out over [`BLEND_WIDTH_CELLS`] cells; within
/// [`NORMAL_BLEND_CELLS`] cells the whole field is blended with the boundary value.
pub fn transport_solve_with(eq: &EquilibriumMeasure, xi: &TestFunction, margin: f64) -> Result<TransportField> {
    if !(margin > 0.0) {
        return Err(LabError::domain("the residual margin must be positive"));
    }
    let grid = eq.grid;
    let n = grid.len();
    let h = grid.spacing();
    let ext = harmonic_extension_fn(eq, |p| xi.value(p))?;
    let flux = multicut_flux_check(eq, &ext);
    if eq.components.len() > 1 {
        for (k, &f) in flux.iter().enumerate() {
            let scale: f64 = ext
                .crossings
                .iter()
                .enumerate()
                .filter(|(_, x)| x.component == k)
                .map(|(j, _)| ext.face_flux(j).abs())
                .sum();
            let tol = (FLUX_TOLERANCE_FACTOR * h * scale).max(1e-10);
            if f.abs() > tol {
                return Err(LabError::Incompatible { component: k, flux: f });
            }
        }
    }

    // Neumann problem for v on the droplet nodes.
    let mut compact = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    for i in 0..n {
        if eq.support_mask[i] {
            compact[i] = nodes.len();
            nodes.push(i);
        }
    }
    let mut face: Vec<[f64; 4]> = vec![[f64::NAN; 4]; n];
    let mut rhs = vec![0.0; nodes.len()];
    for k in 0..ext.crossings.len() {
        let x = &ext.crossings[k];
        let dir = DIRS.iter().position(|&d| d == x.dir).expect("axis direction");
        let q = ext.face_flux(k) / (2.0 * PI);
        face[x.inside][dir] = q;
        rhs[compact[x.inside]] += q;
    }
    for comp in &eq.components {
        let avg = comp.nodes.iter().map(|&i| rhs[compact[i]]).sum::<f64>() / comp.nodes.len() as f64;
        for &i in &comp.nodes {
            rhs[compact[i]] -= avg;
        }
    }
    let links: Vec<[usize; 4]> = nodes
        .iter()
        .map(|&i| {
            let mut l = [usize::MAX; 4];
            for (k, slot) in l.iter_mut().enumerate() {
                if let Some(j) = step(&grid, i, k).filter(|&j| eq.support_mask[j]) {
                    *slot = compact[j];
                }
            }
            l
        })
        .collect();
    let apply = |x: &[f64], y: &mut [f64]| {
        for (a, l) in links.iter().enumerate() {
            let mut s = 0.0;
            for &b in l {
                if b != usize::MAX {
                    s += x[a] - x[b];
                }
            }
            y[a] = s;
        }
    };
    let mut v = vec![0.0; nodes.len()];
    if rhs.iter().any(|&b| b != 0.0) {
        conjugate_gradient(apply, &rhs, &mut v, 1e-12, 20 * nodes.len() + 100)?;
    }

    let mut psi = VectorField::zeros(grid);
    for (a, &i) in nodes.iter().enumerate() {
        let p = grid.node_at(i);
        let value = |k: usize| -> f64 {
            if links[a][k] != usize::MAX {
                v[links[a][k]]
            } else if !face[i][k].is_nan() {
                v[a] + face[i][k]
            } else {
                v[a]
            }
        };
        let dv = [(value(1) - value(0)) / (2.0 * h), (value(3) - value(2)) / (2.0 * h)];
        let dxi = xi.gradient(p);
        let mu = eq.potential().laplacian(p) / (2.0 * PI);
        if !(mu > 0.0) {
            return Err(LabError::Numeric(format!(
                "non-positive density ΔV/(2π) = {mu} on the droplet"
            )));
        }
        psi.values[i] = [
            (dv[0] - dxi[0] / (2.0 * PI)) / mu,
            (dv[1] - dxi[1] / (2.0 * PI)) / mu,
        ];
    }

    // Outside: nearest droplet boundary node by breadth-first search.
    let grad_zeta = zeta_gradient(eq);
    let mut source = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for comp in &eq.components {
        for &b in &comp.boundary {
            source[b] = b;
            queue.push_back(b);
        }
    }
    while let Some(i) = queue.pop_front() {
        for k in 0..4 {
            if let Some(j) = step(&grid, i, k) {
                if source[j] == usize::MAX && !eq.support_mask[j] {
                    source[j] = source[i];
                    queue.push_back(j);
                }
            }
        }
    }
    let band = BLEND_WIDTH_CELLS * h;
    for i in 0..n {
        if eq.support_mask[i] {
            continue;
        }
        let p = grid.node_at(i);
        let g = grad_zeta[i];
        let g2 = g[0] * g[0] + g[1] * g[1];
        let b = source[i];
        let inner = if b == usize::MAX { [0.0, 0.0] } else { psi.values[b] };
        if !(g2 > 1e-24) {
            psi.values[i] = inner;
            continue;
        }
        let jump = ext.field.values[i] - xi.value(p);
        let mut value = [jump * g[0] / g2, jump * g[1] / g2];
        if b != usize::MAX {
            let w = (1.0 - p.dist(grid.node_at(b)) / band).max(0.0);
            if w > 0.0 {
                let along = (inner[0] * g[0] + inner[1] * g[1]) / g2;
                value[0] += w * (inner[0] - along * g[0]);
                value[1] += w * (inner[1] - along * g[1]);
            }
        }
        if b != usize::MAX {
            // Within a few cells of the droplet the quotient (ξ^Σ - ξ)/|∇ζ| is
            // 0/0 on the grid; hand over to the boundary value continuously.
            let lambda = (p.dist(grid.node_at(b)) / (NORMAL_BLEND_CELLS * h)).min(1.0);
            value[0] = lambda * value[0] + (1.0 - lambda) * inner[0];
            value[1] = lambda * value[1] + (1.0 - lambda) * inner[1];
        }
        psi.values[i] = value;
    }

    let region: Vec<bool> = (0..n)
        .map(|i| {
            let (c, r) = grid.col_row(i);
            !grid.is_boundary(c, r) && eq.zeta.values[i] < margin
        })
        .collect();
    let left = master_left_side(eq, xi, &psi, &grad_zeta, &region);
    let in_region: Vec<f64> = (0..n).filter(|&i| region[i]).map(|i| left[i]).collect();
    let c_xi = in_region.iter().copied().collect::<KahanSum>().value() / in_region.len().max(1) as f64;
    let residual: Vec<f64> = (0..n)
        .map(|i| if region[i] { left[i] - c_xi } else { 0.0 })
        .collect();

    let mut lipschitz: f64 = 0.0;
    for i in 0..n {
        if !region[i] {
            continue;
        }
        for k in [1, 3] {
            if let Some(j) = step(&grid, i, k).filter(|&j| region[j]) {
                let (a, b) = (psi.values[i], psi.values[j]);
                lipschitz = lipschitz.max((a[0] - b[0]).hypot(a[1] - b[1]) / h);
            }
        }
    }

    Ok(TransportField {
        psi,
        c_xi,
        residual_field: ScalarField::new(grid, residual)?,
        region,
        margin,
        lipschitz,
        component_flux: flux,
    })
}

/// `ψ·∇ζ + ξ - ∫ ∇g(x - y)·ψ(y) dμ(y)` on the nodes of `region`, with the
/// convolution by midpoint quadrature over the droplet nodes, self node
/// dropped. `∇g(x) = -x/|x|²`.
fn master_left_side(
    eq: &EquilibriumMeasure,
    xi: &TestFunction,
    psi: &VectorField,
    grad_zeta: &[[f64; 2]],
    region: &[bool],
) -> Vec<f64> {
    let grid = eq.grid;
    let h2 = grid.spacing() * grid.spacing();
    let sources: Vec<(f64, f64, f64, f64)> = (0..grid.len())
        .filter(|&i| eq.density.values[i] != 0.0)
        .map(|i| {
            let p = grid.node_at(i);
            let w = h2 * eq.density.values[i];
            let v = psi.values[i];
            (p.x, p.y, w * v[0], w * v[1])
        })
        .collect();
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !region[i] {
                return 0.0;
            }
            let p = grid.node_at(i);
            let mut conv = KahanSum::new();
            for &(x, y, a, b) in &sources {
                let (dx, dy) = (p.x - x, p.y - y);
                let r2 = dx * dx + dy * dy;
                if r2 == 0.0 {
                    continue;
                }
                conv.add(-(dx * a + dy * b) / r2);
            }
            let v = psi.values[i];
            let g = grad_zeta[i];
            v[0] * g[0] + v[1] * g[1] + xi.value(p) - conv.value()
        })
        .collect()
}

/// Re-evaluates the master equation for `tf` and reports the spread of the
/// left side about its mean over `U`.
pub fn master_equation_residual(eq: &EquilibriumMeasure, xi: &TestFunction, tf: &TransportField) -> Result<ResidualStats> {
    if tf.grid() != eq.grid {
        return Err(LabError::domain("transport field and equilibrium use different grids"));
    }
    let left = master_left_side(eq, xi, &tf.psi, &zeta_gradient(eq), &tf.region);
    let values: Vec<f64> = (0..left.len()).filter(|&i| tf.region[i]).map(|i| left[i]).collect();
    if values.is_empty() {
        return Err(LabError::domain("the residual region is empty"));
    }
    let m = values.iter().copied().collect::<KahanSum>().value() / values.len() as f64;
    let var = values.iter().map(|v| (v - m) * (v - m)).collect::<KahanSum>().value() / values.len() as f64;
    let max_abs = values.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
    Ok(ResidualStats {
        stddev: var.sqrt(),
        max_abs,
        nodes: values.len(),
    })
}

/// The terms of `E[exp(-βtN Fluct)] = e^{T0} E[exp(T1 + T2)]` along the
/// transport `φ_t = Id + tψ` with `V_t = V + tξ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTerms {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    /// Quadrature value of the first-order part of `T0`, which vanishes
    /// identically because `∇ζ = 0` on the droplet and is therefore left out of `t0`.
    pub t0_first_order_defect: f64,
}

/// Largest number of quadrature nodes used for the double integrals.
const EXPANSION_NODES: usize = 6000;

struct Quadrature {
    points: Vec<Point>,
    weights: Vec<f64>,
    psi: Vec<[f64; 2]>,
}

fn expansion_quadrature(eq: &EquilibriumMeasure, tf: &TransportField) -> Quadrature {
    let g = eq.grid;
    let m = g.resolution();
    let count = eq.density.values.iter().filter(|&&d| d != 0.0).count();
    let mut stride = 1;
    while count / (stride * stride) > EXPANSION_NODES {
        stride += 1;
    }
    let (mut points, mut weights, mut psi) = (Vec::new(), Vec::new(), Vec::new());
    for row in (0..m).step_by(stride) {
        for col in (0..m).step_by(stride) {
            let i = g.index(col, row);
            if eq.density.values[i] != 0.0 {
                points.push(g.node_at(i));
                weights.push(eq.density.values[i]);
                psi.push(tf.psi.values[i]);
            }
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Quadrature { points, weights, psi }
}

/// `g(φ_t(x) - φ_t(y)) - g(x - y)` with the differences formed before the
/// logarithm, so that translations give exactly zero.
#[inline]
fn kernel_difference(d: [f64; 2], delta: [f64; 2], t: f64) -> f64 {
    let r2 = d[0] * d[0] + d[1] * d[1];
    let e = [d[0] + t * delta[0], d[1] + t * delta[1]];
    let s2 = e[0] * e[0] + e[1] * e[1];
    -0.5 * (s2 / r2).ln()
}

/// First-order part `-t (d·δ)/|d|²` of [`kernel_difference`].
#[inline]
fn kernel_first_order(d: [f64; 2], delta: [f64; 2], t: f64) -> f64 {
    let r2 = d[0] * d[0] + d[1] * d[1];
    -t * (d[0] * delta[0] + d[1] * delta[1]) / r2
}

fn jacobian(psi: &VectorField) -> (VectorField, VectorField) {
    let g = psi.grid;
    let m = g.resolution();
    let comp = |k: usize| ScalarField {
        grid: g,
        values: psi.values.iter().map(|v| v[k]).collect(),
    };
    let (a, b) = (comp(0), comp(1));
    let mut rows = (VectorField::zeros(g), VectorField::zeros(g));
    for r in 0..m {
        for c in 0..m {
            let i = g.index(c, r);
            rows.0.values[i] = a.gradient_at(c, r);
            rows.1.values[i] = b.gradient_at(c, r);
        }
    }
    rows
}

/// `T0`, `T1`, `T2` for one configuration. Requires `|t| Lip(ψ) < 1/2`.
pub fn expansion_terms(
    config: &Configuration,
    eq: &EquilibriumMeasure,
    tf: &TransportField,
    xi: &TestFunction,
    t: f64,
) -> Result<ExpansionTerms> {
    if tf.grid() != eq.grid {
        return Err(LabError::domain("transport field and equilibrium use different grids"));
    }
    if !(t.abs() * tf.lipschitz < 0.5) {
        return Err(LabError::domain(format!(
            "|t| Lip(ψ) = {} is not below 1/2; the transport may fail to be injective",
            t.abs() * tf.lipschitz
        )));
    }
    if t == 0.0 {
        return Ok(ExpansionTerms::default());
    }
    let v = eq.potential();
    let beta = config.beta();
    let n = config.n() as f64;
    let q = expansion_quadrature(eq, tf);
    let (j0, j1) = jacobian(&tf.psi);
    let psi_at = |p: Point| tf.psi.interpolate(p).unwrap_or([0.0, 0.0]);
    let log_det = |p: Point| -> f64 {
        let a = j0.interpolate(p).unwrap_or([0.0, 0.0]);
        let b = j1.interpolate(p).unwrap_or([0.0, 0.0]);
        ((1.0 + t * a[0]) * (1.0 + t * b[1]) - t * a[1] * t * b[0]).ln()
    };
    let potential_shift = |p: Point, s: [f64; 2]| -> f64 {
        let moved = Point::new(p.x + t * s[0], p.y + t * s[1]);
        v.value(moved) - v.value(p) + t * xi.value(moved)
    };
    // A(x) = ∫ [g(φx - φy) - g(x - y)] dμ(y) and its first-order part.
    let against_measure = |p: Point, s: [f64; 2]| -> (f64, f64) {
        let mut full = KahanSum::new();
        let mut first = KahanSum::new();
        for k in 0..q.points.len() {
            let y = q.points[k];
            let d = [p.x - y.x, p.y - y.y];
            if d[0] == 0.0 && d[1] == 0.0 {
                continue;
            }
            let delta = [s[0] - q.psi[k][0], s[1] - q.psi[k][1]];
            full.add(q.weights[k] * kernel_difference(d, delta, t));
            first.add(q.weights[k] * kernel_first_order(d, delta, t));
        }
        (full.value(), first.value())
    };

    let node_terms: Vec<(f64, f64, f64, f64, f64)> = (0..q.points.len())
        .into_par_iter()
        .map(|k| {
            let p = q.points[k];
            let s = q.psi[k];
            let (a, a1) = against_measure(p, s);
            let dv = v.gradient(p);
            let shift = potential_shift(p, s);
            let shift1 = t * (dv[0] * s[0] + dv[1] * s[1] + xi.value(p));
            (a, a1, shift, shift1, log_det(p))
        })
        .collect();
    let wsum = |f: &dyn Fn(&(f64, f64, f64, f64, f64)) -> f64| -> f64 {
        node_terms
            .iter()
            .zip(&q.weights)
            .map(|(x, w)| w * f(x))
            .collect::<KahanSum>()
            .value()
    };
    let double = wsum(&|x| x.0);
    let double1 = wsum(&|x| x.1);
    let shift = wsum(&|x| x.2);
    let shift1 = wsum(&|x| x.3);
    let log_det_mean = wsum(&|x| x.4);
    let xi_mean = q
        .points
        .iter()
        .zip(&q.weights)
        .map(|(&p, w)| w * xi.value(p))
        .collect::<KahanSum>()
        .value();
    let remainder = 0.5 * (double - double1) + (shift - shift1);
    let t0 = -beta * n * n * remainder + n * log_det_mean;
    let t0_first_order_defect = -beta * n * n * (0.5 * double1 + shift1 - t * xi_mean);

    let pts = config.points();
    let particle_terms: Vec<(f64, f64, f64, [f64; 2])> = pts
        .par_iter()
        .map(|&p| {
            let s = psi_at(p);
            let (a, _) = against_measure(p, s);
            (a, potential_shift(p, s), log_det(p), s)
        })
        .collect();
    let particle_sum = |f: &dyn Fn(&(f64, f64, f64, [f64; 2])) -> f64| -> f64 {
        particle_terms.iter().map(f).collect::<KahanSum>().value()
    };
    let fluct = |particles: f64, nodes: f64| particles - n * nodes;
    let t1 = -beta * n * fluct(particle_sum(&|x| x.0 + x.1), double + shift)
        + fluct(particle_sum(&|x| x.2), log_det_mean);

    let mut pairs = KahanSum::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = [pts[i].x - pts[j].x, pts[i].y - pts[j].y];
            if d[0] == 0.0 && d[1] == 0.0 {
                return Err(LabError::domain("coincident particles in the expansion"));
            }
            let (si, sj) = (particle_terms[i].3, particle_terms[j].3);
            pairs.add(2.0 * kernel_difference(d, [si[0] - sj[0], si[1] - sj[1]], t));
        }
    }
    let particle_measure = particle_sum(&|x| x.0);
    let t2 = -0.5 * beta * (pairs.value() - 2.0 * n * particle_measure + n * n * double);
    Ok(ExpansionTerms {
        t0,
        t1,
        t2,
        t0_first_order_defect,
    })
}
