//! Equilibrium measure via the obstacle problem.
//!
//! With `g = -log|x|` we have `-Δ h0 = 2π μ`, so on the droplet the density
//! is `ΔV / (2π)`. The potential `h0` is the smallest superharmonic function
//! lying above the obstacle `c - V` with boundary data `-log|x|` on the box;
//! the constant `c` is fixed by requiring unit mass on the coincidence set.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{LabError, Result};
use crate::geometry::Point;
use crate::grid::{Grid2D, ScalarField};
use crate::model::{ConfinementPotential, RadialProfile};
use crate::numerics::{bisect, KahanSum};

/// Complementarity tolerance used by the final obstacle solve.
pub const OBSTACLE_TOL: f64 = 1e-8;
/// Default mass tolerance for the `c` search.
pub const DEFAULT_MASS_TOL: f64 = 1e-3;
/// Default nodes per side.
pub const DEFAULT_RESOLUTION: usize = 257;

const EQM_MAGIC: &[u8; 4] = b"EQM1";
const BISECTION_TOL: f64 = 1e-6;
const C_TOL: f64 = 1e-7;
const MASS_TARGET: f64 = 1e-7;

/// Output of [`solve_obstacle_fixed_c`].
#[derive(Clone, Debug)]
pub struct ObstacleSolution {
    pub h: ScalarField,
    pub mask: Vec<bool>,
    pub residual: f64,
    pub sweeps: usize,
}

/// Over-relaxation factor optimal for the Dirichlet Laplacian on an `m x m` grid.
pub fn optimal_relaxation(m: usize) -> f64 {
    2.0 / (1.0 + (std::f64::consts::PI / (m - 1) as f64).sin())
}

struct Obstacle {
    grid: Grid2D,
    obstacle: Vec<f64>,
}

impl Obstacle {
    fn new(v: &ConfinementPotential, c: f64, grid: Grid2D) -> Self {
        let obstacle = grid.nodes().map(|p| c - v.value(p)).collect();
        Obstacle { grid, obstacle }
    }

    fn boundary_value(p: Point) -> f64 {
        -p.norm().ln()
    }

    fn initial_guess(&self) -> Vec<f64> {
        let h = self.grid.spacing();
        self.grid
            .nodes()
            .zip(&self.obstacle)
            .map(|(p, &o)| (-p.norm().max(h).ln()).max(o))
            .collect()
    }

    fn apply_boundary(&self, u: &mut [f64]) {
        let m = self.grid.resolution();
        for k in 0..m {
            for (c, r) in [(k, 0), (k, m - 1), (0, k), (m - 1, k)] {
                let idx = self.grid.index(c, r);
                u[idx] = Self::boundary_value(self.grid.node(c, r));
            }
        }
    }

    fn sweep(&self, u: &mut [f64], omega: f64) {
        let m = self.grid.resolution();
        for colour in 0..2 {
            for row in 1..m - 1 {
                let start = 1 + (row + 1 + colour) % 2;
                let base = row * m;
                let mut col = start;
                while col < m - 1 {
                    let i = base + col;
                    let gs = 0.25 * (u[i - 1] + u[i + 1] + u[i - m] + u[i + m]);
                    let next = u[i] + omega * (gs - u[i]);
                    u[i] = next.max(self.obstacle[i]);
                    col += 2;
                }
            }
        }
    }

    /// Largest nodewise `|min(-Δ_h u, u - obstacle)|` over interior nodes.
    fn residual(&self, u: &[f64]) -> f64 {
        let m = self.grid.resolution();
        let inv_h2 = 1.0 / (self.grid.spacing() * self.grid.spacing());
        let mut worst: f64 = 0.0;
        for row in 1..m - 1 {
            for col in 1..m - 1 {
                let i = row * m + col;
                let lap = (4.0 * u[i] - u[i - 1] - u[i + 1] - u[i - m] - u[i + m]) * inv_h2;
                worst = worst.max(lap.min(u[i] - self.obstacle[i]).abs());
            }
        }
        worst
    }

    fn solve(&self, warm: Option<&[f64]>, tol: f64) -> Result<(Vec<f64>, f64, usize)> {
        let m = self.grid.resolution();
        let mut u = match warm {
            Some(w) => w.iter().zip(&self.obstacle).map(|(a, &o)| a.max(o)).collect(),
            None => self.initial_guess(),
        };
        self.apply_boundary(&mut u);
        let omega = optimal_relaxation(m);
        let max_sweeps = 50 * m;
        let mut sweeps = 0;
        let mut residual = self.residual(&u);
        while residual > tol {
            if sweeps >= max_sweeps {
                return Err(LabError::IterationLimit {
                    iterations: sweeps,
                    residual,
                });
            }
            for _ in 0..10 {
                self.sweep(&mut u, omega);
            }
            sweeps += 10;
            residual = self.residual(&u);
        }
        Ok((u, residual, sweeps))
    }

    fn mask(&self, u: &[f64]) -> Vec<bool> {
        let m = self.grid.resolution();
        (0..u.len())
            .map(|i| {
                let (c, r) = (i % m, i / m);
                !self.grid.is_boundary(c, r) && u[i] - self.obstacle[i] <= OBSTACLE_TOL
            })
            .collect()
    }
}

/// Solves the discrete obstacle problem for a fixed constant `c`.
pub fn solve_obstacle_fixed_c(
    v: &ConfinementPotential,
    c: f64,
    grid: Grid2D,
) -> Result<ObstacleSolution> {
    let problem = Obstacle::new(v, c, grid);
    let (u, residual, sweeps) = problem.solve(None, OBSTACLE_TOL)?;
    let mask = problem.mask(&u);
    Ok(ObstacleSolution {
        h: ScalarField::new(grid, u)?,
        mask,
        residual,
        sweeps,
    })
}

/// A connected component of the droplet.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub nodes: Vec<usize>,
    /// Mask nodes with at least one unmasked 4-neighbour.
    pub boundary: Vec<usize>,
}

/// Equilibrium measure sampled on a grid.
#[derive(Clone, Debug)]
pub struct EquilibriumMeasure {
    pub grid: Grid2D,
    /// Density normalized to unit total mass.
    pub density: ScalarField,
    pub support_mask: Vec<bool>,
    pub c_v: f64,
    pub h0: ScalarField,
    pub zeta: ScalarField,
    pub components: Vec<Component>,
    /// Mass of `ΔV/(2π)` over the mask before normalization.
    pub raw_mass: f64,
    /// Component label per node (`usize::MAX` off the droplet).
    pub labels: Vec<usize>,
    potential: ConfinementPotential,
}

impl EquilibriumMeasure {
    pub fn potential(&self) -> &ConfinementPotential {
        &self.potential
    }

    /// Total mass `h^2 Σ density`.
    pub fn mass(&self) -> f64 {
        let h = self.grid.spacing();
        h * h * self.density.values.iter().copied().collect::<KahanSum>().value()
    }

    /// `h0(p)`: bilinear inside the box, the unit monopole `-log|p|` outside.
    pub fn background_potential(&self, p: Point) -> f64 {
        match self.h0.interpolate(p) {
            Some(v) => v,
            None => -p.norm().ln(),
        }
    }

    /// `h0 + V - c_V` without clamping.
    pub fn zeta_unclamped(&self, p: Point) -> f64 {
        self.background_potential(p) + self.potential.value(p) - self.c_v
    }

    /// `ζ_V(p)`, zero on the droplet and non-negative elsewhere.
    pub fn effective_potential(&self, p: Point) -> f64 {
        if self.in_support(p) {
            return 0.0;
        }
        self.zeta_unclamped(p).max(0.0)
    }

    /// Whether the node nearest to `p` belongs to the droplet.
    pub fn in_support(&self, p: Point) -> bool {
        self.grid
            .nearest(p)
            .is_some_and(|i| self.support_mask[i])
    }

    /// Grid quadrature `∫ f dμ`.
    pub fn integrate<F: Fn(Point) -> f64>(&self, f: F) -> f64 {
        let h = self.grid.spacing();
        let mut acc = KahanSum::new();
        for (i, &d) in self.density.values.iter().enumerate() {
            if d != 0.0 {
                acc.add(d * f(self.grid.node_at(i)));
            }
        }
        h * h * acc.value()
    }

    /// Grid quadrature `∫ f dμ` for a field on the same grid.
    pub fn integrate_field(&self, f: &[f64]) -> f64 {
        let h = self.grid.spacing();
        let acc: KahanSum = self
            .density
            .values
            .iter()
            .zip(f)
            .filter(|(d, _)| **d != 0.0)
            .map(|(d, v)| d * v)
            .collect();
        h * h * acc.value()
    }

    /// Largest distance from the origin of a droplet node.
    pub fn support_radius(&self) -> f64 {
        self.support_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| self.grid.node_at(i).norm())
            .fold(0.0, f64::max)
    }

    /// Smallest distance from `p` to a node outside the droplet.
    pub fn distance_to_exterior(&self, p: Point) -> f64 {
        self.support_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| !m)
            .map(|(i, _)| self.grid.node_at(i).dist(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes the binary `EQM1` representation.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(EQM_MAGIC)?;
        w.write_all(&(self.grid.resolution() as u64).to_le_bytes())?;
        w.write_all(&self.grid.half_width().to_le_bytes())?;
        w.write_all(&self.c_v.to_le_bytes())?;
        for field in [&self.density, &self.h0, &self.zeta] {
            let mut buf = Vec::with_capacity(field.values.len() * 8);
            for v in &field.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        let mask: Vec<u8> = self.support_mask.iter().map(|&b| b as u8).collect();
        w.write_all(&mask)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads an `EQM1` stream. The potential is not stored in the file and
    /// must be supplied by the caller.
    pub fn read_from<R: Read>(mut r: R, potential: ConfinementPotential) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| LabError::format("truncated EQM1 header"))?;
        if &magic != EQM_MAGIC {
            return Err(LabError::format("missing EQM1 magic"));
        }
        let mut b8 = [0u8; 8];
        let mut next8 = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)
                .map_err(|_| LabError::format("truncated EQM1 stream"))?;
            Ok(b8)
        };
        let m = u64::from_le_bytes(next8(&mut r)?) as usize;
        let half_width = f64::from_le_bytes(next8(&mut r)?);
        let c_v = f64::from_le_bytes(next8(&mut r)?);
        if m > 1 << 15 {
            return Err(LabError::format(format!("implausible EQM1 resolution {m}")));
        }
        let grid = Grid2D::new(half_width, m).map_err(|e| LabError::format(e.to_string()))?;
        let mut fields = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut buf = vec![0u8; m * m * 8];
            r.read_exact(&mut buf)
                .map_err(|_| LabError::format("truncated EQM1 field data"))?;
            let values = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            fields.push(ScalarField::new(grid, values)?);
        }
        let mut mask = vec![0u8; m * m];
        r.read_exact(&mut mask)
            .map_err(|_| LabError::format("truncated EQM1 mask"))?;
        let support_mask: Vec<bool> = mask.iter().map(|&b| b != 0).collect();
        let zeta = fields.pop().unwrap();
        let h0 = fields.pop().unwrap();
        let density = fields.pop().unwrap();
        let (components, labels) = connected_components(&grid, &support_mask);
        let mut eq = EquilibriumMeasure {
            grid,
            density,
            support_mask,
            c_v,
            h0,
            zeta,
            components,
            raw_mass: 1.0,
            labels,
            potential,
        };
        eq.raw_mass = eq.mass();
        Ok(eq)
    }

    pub fn load(path: impl AsRef<Path>, potential: ConfinementPotential) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file), potential)
    }
}

/// 4-connected components of a node mask and the per-node labels.
pub fn connected_components(grid: &Grid2D, mask: &[bool]) -> (Vec<Component>, Vec<usize>) {
    let m = grid.resolution();
    let mut labels = vec![usize::MAX; mask.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut nodes = Vec::new();
        let mut boundary = Vec::new();
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            nodes.push(i);
            let (c, r) = grid.col_row(i);
            let mut on_edge = false;
            let candidates = [
                (c > 0).then(|| i - 1),
                (c + 1 < m).then(|| i + 1),
                (r > 0).then(|| i - m),
                (r + 1 < m).then(|| i + m),
            ];
            for n in candidates {
                match n {
                    Some(n) if mask[n] => {
                        if labels[n] == usize::MAX {
                            labels[n] = id;
                            queue.push_back(n);
                        }
                    }
                    _ => on_edge = true,
                }
            }
            if on_edge {
                boundary.push(i);
            }
        }
        nodes.sort_unstable();
        boundary.sort_unstable();
        components.push(Component { nodes, boundary });
    }
    (components, labels)
}

fn touches_ring(grid: &Grid2D, mask: &[bool]) -> bool {
    let m = grid.resolution();
    (0..mask.len()).any(|i| {
        let (c, r) = grid.col_row(i);
        mask[i] && (c <= 1 || r <= 1 || c >= m - 2 || r >= m - 2)
    })
}

/// Discrete measure `(-Δ_h u)^+ / (2π)` on mask nodes, per unit area.
fn discrete_density(grid: &Grid2D, u: &[f64], mask: &[bool]) -> Vec<f64> {
    let m = grid.resolution();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let two_pi = 2.0 * std::f64::consts::PI;
    (0..u.len())
        .map(|i| {
            if !mask[i] {
                return 0.0;
            }
            let lap = (4.0 * u[i] - u[i - 1] - u[i + 1] - u[i - m] - u[i + m]) * inv_h2;
            lap.max(0.0) / two_pi
        })
        .collect()
}

fn total_mass(grid: &Grid2D, density: &[f64]) -> f64 {
    let h = grid.spacing();
    h * h * density.iter().copied().collect::<KahanSum>().value()
}

/// Radial average of the potential on circles, used to size the box.
fn radialized(v: &ConfinementPotential) -> RadialProfile {
    if let Some(p) = v.radial_profile() {
        return p;
    }
    let v = v.clone();
    RadialProfile::from_values(move |r| {
        const K: usize = 64;
        (0..K)
            .map(|k| v.value(Point::polar(r, 2.0 * std::f64::consts::PI * k as f64 / K as f64)))
            .sum::<f64>()
            / K as f64
    })
}

/// Default grid: half-width `1.5 R + 1` where `R` solves the radial mass
/// equation of the angular average of `V`, with [`DEFAULT_RESOLUTION`] nodes.
pub fn default_grid(v: &ConfinementPotential) -> Result<Grid2D> {
    default_grid_with(v, DEFAULT_RESOLUTION)
}

pub fn default_grid_with(v: &ConfinementPotential, m: usize) -> Result<Grid2D> {
    let oracle = radial_equilibrium_oracle(&radialized(v))?;
    Grid2D::new(1.5 * oracle.radius + 1.0, m)
}

struct Search<'a> {
    v: &'a ConfinementPotential,
    grid: Grid2D,
    warm: Option<Vec<f64>>,
}

impl Search<'_> {
    /// Mass of the coincidence set for `c`; `+∞` when the set reaches the box.
    fn mass(&mut self, c: f64, tol: f64) -> Result<(f64, Vec<f64>, Vec<bool>)> {
        let problem = Obstacle::new(self.v, c, self.grid);
        let (u, _, _) = problem.solve(self.warm.as_deref(), tol)?;
        let mask = problem.mask(&u);
        self.warm = Some(u.clone());
        let mass = if touches_ring(&self.grid, &mask) {
            f64::INFINITY
        } else {
            total_mass(&self.grid, &discrete_density(&self.grid, &u, &mask))
        };
        Ok((mass, u, mask))
    }
}

fn find_c(v: &ConfinementPotential, grid: Grid2D, bracket: (f64, f64), warm: Option<Vec<f64>>) -> Result<(f64, Vec<f64>)> {
    let mut s = Search { v, grid, warm };
    let (mut lo, mut hi) = bracket;
    let mut m_lo = s.mass(lo, BISECTION_TOL)?.0;
    let mut expand = 0;
    while m_lo >= 1.0 {
        if expand > 40 {
            return Err(LabError::config("grid too small or V violates growth"));
        }
        let w = hi - lo;
        hi = lo;
        lo -= 2.0 * w;
        m_lo = s.mass(lo, BISECTION_TOL)?.0;
        expand += 1;
    }
    let mut m_hi = s.mass(hi, BISECTION_TOL)?.0;
    while m_hi < 1.0 {
        if expand > 40 || !m_hi.is_finite() {
            return Err(LabError::config("grid too small or V violates growth"));
        }
        let w = hi - lo;
        lo = hi;
        m_lo = m_hi;
        hi += 2.0 * w;
        m_hi = s.mass(hi, BISECTION_TOL)?.0;
        expand += 1;
    }
    while hi - lo > C_TOL && (m_lo - 1.0).abs() > MASS_TARGET && (m_hi - 1.0).abs() > MASS_TARGET {
        let mid = 0.5 * (lo + hi);
        let m = s.mass(mid, BISECTION_TOL)?.0;
        if m < 1.0 {
            lo = mid;
            m_lo = m;
        } else {
            hi = mid;
            m_hi = m;
        }
    }
    let c = if (1.0 - m_lo) <= (m_hi - 1.0) { lo } else { hi };
    Ok((c, s.warm.unwrap_or_default()))
}

fn prolong(coarse: &Grid2D, values: &[f64], fine: &Grid2D) -> Vec<f64> {
    let field = ScalarField {
        grid: *coarse,
        values: values.to_vec(),
    };
    fine.nodes()
        .map(|p| field.interpolate(p).unwrap_or(-p.norm().ln()))
        .collect()
}

/// Computes the equilibrium measure by bisection on `c`.
///
/// Coarser grids (halving the resolution down to 65 nodes) supply the
/// starting bracket and initial guess. The density is `ΔV/(2π)` on the
/// coincidence set, rescaled to unit mass; the mass before rescaling is
/// kept in `raw_mass`.
pub fn solve_equilibrium(
    v: &ConfinementPotential,
    grid: Grid2D,
    mass_tol: f64,
) -> Result<EquilibriumMeasure> {
    if !(mass_tol > 0.0) {
        return Err(LabError::domain("mass tolerance must be positive"));
    }
    let ring_ratio = {
        let l = grid.half_width();
        let corner = Point::new(l, l);
        let min_ring = (0..64)
            .map(|k| {
                let p = Point::polar(l, 2.0 * std::f64::consts::PI * k as f64 / 64.0);
                v.value(p) / p.norm().ln()
            })
            .fold(f64::INFINITY, f64::min);
        if l > 1.0 {
            min_ring.min(v.value(corner) / corner.norm().ln())
        } else {
            f64::INFINITY
        }
    };
    if ring_ratio <= 1.0 {
        return Err(LabError::config("grid too small or V violates growth"));
    }

    let m = grid.resolution();
    let (c, u) = if m > 65 && (m - 1) % 2 == 0 {
        let coarse = Grid2D::new(grid.half_width(), (m - 1) / 2 + 1)?;
        let eq = solve_equilibrium(v, coarse, mass_tol)?;
        let warm = prolong(&coarse, &eq.h0.values, &grid);
        let width = 4.0 * coarse.spacing();
        find_c(v, grid, (eq.c_v - width, eq.c_v + width), Some(warm))?
    } else {
        let v_min = grid.nodes().map(|p| v.value(p)).fold(f64::INFINITY, f64::min);
        let v_max = grid
            .nodes()
            .map(|p| -p.norm().max(grid.spacing()).ln() + v.value(p))
            .fold(f64::NEG_INFINITY, f64::max);
        find_c(v, grid, (v_min - 1.0, v_max), None)?
    };

    let problem = Obstacle::new(v, c, grid);
    let (mut h0, _, _) = problem.solve(Some(&u), OBSTACLE_TOL)?;
    let mask = problem.mask(&h0);
    if touches_ring(&grid, &mask) {
        return Err(LabError::config("grid too small: droplet reaches the box boundary"));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let partial = discrete_density(&grid, &h0, &mask);
    let mut density = vec![0.0; grid.len()];
    let mut zeta = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        if mask[i] {
            let interior = grid.neighbours(i).iter().all(|&j| mask[j]);
            density[i] = if interior {
                v.laplacian(grid.node_at(i)) / two_pi
            } else {
                partial[i]
            };
        }
    }
    let raw_mass = total_mass(&grid, &density);
    if !(raw_mass > 0.0) {
        return Err(LabError::config("empty droplet"));
    }
    if (raw_mass - 1.0).abs() > mass_tol {
        log::warn!("droplet mass {raw_mass} misses 1 by more than {mass_tol}; grid too coarse");
    }
    for i in 0..grid.len() {
        let obs = problem.obstacle[i];
        if mask[i] {
            h0[i] = obs;
            density[i] /= raw_mass;
        } else {
            zeta[i] = (h0[i] - obs).max(0.0);
        }
    }
    let (components, labels) = connected_components(&grid, &mask);
    Ok(EquilibriumMeasure {
        grid,
        density: ScalarField::new(grid, density)?,
        support_mask: mask,
        c_v: c,
        h0: ScalarField::new(grid, h0)?,
        zeta: ScalarField::new(grid, zeta)?,
        components,
        raw_mass,
        labels,
        potential: v.clone(),
    })
}

/// Analytic equilibrium data for a radial potential.
#[derive(Clone)]
pub struct RadialOracle {
    pub radius: f64,
    pub c_v: f64,
    profile: RadialProfile,
}

impl RadialOracle {
    /// `(v''(r) + v'(r)/r) / (2π)` inside the droplet, zero outside.
    pub fn density(&self, r: f64) -> f64 {
        if r > self.radius {
            return 0.0;
        }
        let p = &self.profile;
        let lap = if r > 1e-12 {
            p.d2v(r) + p.dv(r) / r
        } else {
            2.0 * p.d2v(1e-12)
        };
        lap / (2.0 * std::f64::consts::PI)
    }

    /// `h0(r)`: `c_V - v(r)` inside, `-log r` outside.
    pub fn h0(&self, r: f64) -> f64 {
        if r <= self.radius {
            self.c_v - self.profile.v(r)
        } else {
            -r.ln()
        }
    }

    /// Mass inside radius `r`, i.e. `r v'(r)` capped at one.
    pub fn mass_within(&self, r: f64) -> f64 {
        (r.min(self.radius) * self.profile.dv(r.min(self.radius))).min(1.0)
    }
}

/// Solves `R v'(R) = 1` and returns the radial equilibrium data.
pub fn radial_equilibrium_oracle(profile: &RadialProfile) -> Result<RadialOracle> {
    let f = |r: f64| r * profile.dv(r) - 1.0;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(LabError::domain("no root of r v'(r) = 1 in bracket"));
        }
    }
    let radius = bisect(f, 1e-9, hi, 1e-14)?;
    Ok(RadialOracle {
        radius,
        c_v: profile.v(radius) - radius.ln(),
        profile: profile.clone(),
    })
}

/// A crossing of the free boundary on the segment between a droplet node
/// and an exterior 4-neighbour.
#[derive(Clone, Copy, Debug)]
pub struct Crossing {
    pub inside: usize,
    pub outside: usize,
    /// Component label of `inside`.
    pub component: usize,
    /// Distance from `outside` to the crossing, in units of `h`.
    pub theta: f64,
    /// Boundary point.
    pub point: Point,
    /// Dirichlet value at the crossing.
    pub value: f64,
    /// Unit step from `inside` to `outside` in index space.
    pub dir: (isize, isize),
}

/// Bounded harmonic extension of a function off the droplet.
#[derive(Clone, Debug)]
pub struct HarmonicExtension {
    pub field: ScalarField,
    pub crossings: Vec<Crossing>,
    mask: Vec<bool>,
}

impl HarmonicExtension {
    /// `h ∂_e ξ^Σ` at a crossing, one-sided from the exterior along the
    /// axis `e` pointing out of the droplet.
    pub fn face_flux(&self, k: usize) -> f64 {
        let x = &self.crossings[k];
        let g = &self.field.grid;
        let m = g.resolution() as isize;
        let (c, r) = g.col_row(x.outside);
        let step = |n: isize| -> Option<usize> {
            let cc = c as isize + n * x.dir.0;
            let rr = r as isize + n * x.dir.1;
            if cc < 0 || rr < 0 || cc >= m || rr >= m {
                return None;
            }
            Some(g.index(cc as usize, rr as usize))
        };
        let f = &self.field.values;
        let exterior = |i: usize| !self.mask[i];
        let q1 = step(1).filter(|&i| exterior(i));
        let q2 = step(2).filter(|&i| exterior(i));
        let a = x.theta;
        let quad = |ta: f64, fa: f64, tb: f64, fb: f64| {
            x.value * (-1.0 / ta - 1.0 / tb) + fa * tb / (ta * (tb - ta)) - fb * ta / (tb * (tb - ta))
        };
        match (q1, q2) {
            (Some(i1), Some(i2)) if a < 0.2 => quad(a + 1.0, f[i1], a + 2.0, f[i2]),
            (Some(i1), _) => quad(a, f[x.outside], a + 1.0, f[i1]),
            _ => (f[x.outside] - x.value) / a.max(1e-3),
        }
    }
}

/// Locates the free boundary on the segment from exterior node `q` towards
/// droplet node `p`, using that `sqrt(ζ)` is close to linear in the
/// distance to the boundary.
fn crossing_theta(eq: &EquilibriumMeasure, q: usize, dir: (isize, isize)) -> f64 {
    let g = &eq.grid;
    let m = g.resolution() as isize;
    let (c, r) = g.col_row(q);
    let (c2, r2) = (c as isize + dir.0, r as isize + dir.1);
    let sq = eq.zeta.values[q].max(0.0).sqrt();
    if c2 < 0 || r2 < 0 || c2 >= m || r2 >= m {
        return 1.0;
    }
    let q2 = g.index(c2 as usize, r2 as usize);
    if eq.support_mask[q2] {
        return 1.0;
    }
    let sq2 = eq.zeta.values[q2].max(0.0).sqrt();
    if sq2 <= sq {
        return 1.0;
    }
    (sq / (sq2 - sq)).clamp(MIN_ARM, RAW_MAX_ARM)
}

const MIN_ARM: f64 = 1e-6;
const RAW_MAX_ARM: f64 = 2.0;
/// Radius, in cells, of the neighbourhood used to smooth crossing locations.
const SMOOTHING_RADIUS_CELLS: f64 = 6.0;

/// Refits each crossing against a weighted local quadratic through the
/// neighbouring crossings of the same component, which removes the
/// cell-to-cell jitter of the raw locations.
fn smooth_crossings(grid: &Grid2D, crossings: &mut [Crossing]) {
    let h = grid.spacing();
    let radius = SMOOTHING_RADIUS_CELLS * h;
    let cell = |p: Point| ((p.x / radius).floor() as i64, (p.y / radius).floor() as i64);
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (k, x) in crossings.iter().enumerate() {
        buckets.entry(cell(x.point)).or_default().push(k);
    }
    let refits: Vec<Option<Refit>> = crossings
        .iter()
        .map(|x| {
            let (cx, cy) = cell(x.point);
            let mut near = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for &j in buckets.get(&(cx + dx, cy + dy)).into_iter().flatten() {
                        let y = &crossings[j];
                        let d = y.point.dist(x.point);
                        if y.component == x.component && d <= radius {
                            let w = 1.0 - (d / radius).powi(2);
                            near.push((y.point, w * w));
                        }
                    }
                }
            }
            refit_crossing(grid, x, &near)
        })
        .collect();
    for (x, r) in crossings.iter_mut().zip(refits) {
        if let Some(r) = r {
            x.theta = r.theta;
            x.point = r.point;
        }
    }
}

struct Refit {
    theta: f64,
    point: Point,
}

fn refit_crossing(grid: &Grid2D, x: &Crossing, near: &[(Point, f64)]) -> Option<Refit> {
    if near.len() < 6 {
        return None;
    }
    let wsum: f64 = near.iter().map(|(_, w)| w).sum();
    let centre = near.iter().fold(Point::ORIGIN, |acc, (p, w)| acc + *p * (*w / wsum));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (p, w) in near {
        let d = *p - centre;
        sxx += w * d.x * d.x;
        sxy += w * d.x * d.y;
        syy += w * d.y * d.y;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let t = Point::new(angle.cos(), angle.sin());
    let n = Point::new(-t.y, t.x);
    // Weighted least squares for o = a + b s + c s².
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (p, w) in near {
        let d = *p - centre;
        let (s, o) = (d.dot(t), d.dot(n));
        let row = [1.0, s, s * s];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += w * row[i] * row[j];
            }
            atb[i] += w * row[i] * o;
        }
    }
    let [a, b, c] = solve3(ata, atb)?;
    let h = grid.spacing();
    let dir = Point::new(x.dir.0 as f64, x.dir.1 as f64);
    let q = grid.node_at(x.outside) - centre;
    let (s0, o0) = (q.dot(t), q.dot(n));
    let (ds, dn) = (-h * dir.dot(t), -h * dir.dot(n));
    let qa = -c * ds * ds;
    let qb = dn - b * ds - 2.0 * c * s0 * ds;
    let qc = o0 - a - b * s0 - c * s0 * s0;
    let roots: Vec<f64> = if qa.abs() < 1e-14 * (qb.abs() + qc.abs()) {
        if qb == 0.0 {
            vec![]
        } else {
            vec![-qc / qb]
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            vec![]
        } else {
            let sq = disc.sqrt();
            vec![(-qb + sq) / (2.0 * qa), (-qb - sq) / (2.0 * qa)]
        }
    };
    let best = roots
        .into_iter()
        .filter(|r| r.is_finite())
        .min_by(|p, q| (p - x.theta).abs().total_cmp(&(q - x.theta).abs()));
    match best {
        Some(r) if r > MIN_ARM && r <= 1.0 => Some(Refit {
            theta: r,
            point: grid.node_at(x.outside) - dir * (r * h),
        }),
        _ => {
            // The axis misses the fitted boundary before reaching the droplet
            // node: anchor the crossing at that node with the value taken at
            // its projection onto the fitted curve.
            let p = grid.node_at(x.inside) - centre;
            let s = p.dot(t);
            Some(Refit {
                theta: 1.0,
                point: centre + t * s + n * (a + b * s + c * s * s),
            })
        }
    }
}

/// Solves a 3x3 system by Cramer's rule.
fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    let scale = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if !(d.abs() > 1e-14 * scale.powi(3)) {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = b[i];
        }
        *slot = det(mk) / d;
    }
    Some(out)
}

fn find_crossings<F: Fn(Point) -> f64>(eq: &EquilibriumMeasure, xi: &F) -> Vec<Crossing> {
    let g = &eq.grid;
    let m = g.resolution();
    let h = g.spacing();
    let mut out = Vec::new();
    for comp in &eq.components {
        for &p in &comp.boundary {
            let (c, r) = g.col_row(p);
            for dir in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (cc, rr) = (c as isize + dir.0, r as isize + dir.1);
                if cc < 0 || rr < 0 || cc >= m as isize || rr >= m as isize {
                    continue;
                }
                let q = g.index(cc as usize, rr as usize);
                if eq.support_mask[q] {
                    continue;
                }
                let theta = crossing_theta(eq, q, dir);
                let qp = g.node_at(q);
                let point = qp - Point::new(dir.0 as f64, dir.1 as f64) * (theta * h);
                out.push(Crossing {
                    inside: p,
                    outside: q,
                    component: eq.labels[p],
                    theta,
                    point,
                    value: xi(point),
                    dir,
                });
            }
        }
    }
    smooth_crossings(g, &mut out);
    for x in &mut out {
        x.value = xi(x.point);
    }
    out
}

/// Harmonic extension of `xi` off the droplet (Shortley–Weller stencil at
/// the free boundary, reflecting conditions on the box).
pub fn harmonic_extension_fn<F: Fn(Point) -> f64>(
    eq: &EquilibriumMeasure,
    xi: F,
) -> Result<HarmonicExtension> {
    if eq.components.is_empty() {
        return Err(LabError::domain("harmonic extension needs a non-empty droplet"));
    }
    let g = eq.grid;
    let m = g.resolution();
    let n = g.len();
    let crossings = find_crossings(eq, &xi);
    let mut arm: Vec<[f64; 4]> = vec![[1.0; 4]; n];
    let mut fixed: Vec<[f64; 4]> = vec![[f64::NAN; 4]; n];
    let dirs = [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)];
    for x in &crossings {
        let k = dirs.iter().position(|&d| d == (-x.dir.0, -x.dir.1)).unwrap();
        arm[x.outside][k] = x.theta;
        fixed[x.outside][k] = x.value;
    }

    let mut u: Vec<f64> = (0..n)
        .map(|i| {
            if eq.support_mask[i] {
                xi(g.node_at(i))
            } else {
                0.0
            }
        })
        .collect();
    let mean_boundary = if crossings.is_empty() {
        0.0
    } else {
        crossings.iter().map(|x| x.value).sum::<f64>() / crossings.len() as f64
    };
    for i in 0..n {
        if !eq.support_mask[i] {
            u[i] = mean_boundary;
        }
    }

    let neighbour = |c: usize, r: usize, k: usize| -> Option<usize> {
        let (dc, dr) = dirs[k];
        let (cc, rr) = (c as isize + dc, r as isize + dr);
        if cc < 0 || rr < 0 || cc >= m as isize || rr >= m as isize {
            None
        } else {
            Some(g.index(cc as usize, rr as usize))
        }
    };
    // Row coefficients: (const, diag, [(neighbour, weight)]).
    let mut rows: Vec<(usize, f64, f64, [(usize, f64); 4])> = Vec::new();
    for i in 0..n {
        if eq.support_mask[i] {
            continue;
        }
        let (c, r) = g.col_row(i);
        let mut konst = 0.0;
        let mut diag = 0.0;
        let mut nb = [(usize::MAX, 0.0); 4];
        for axis in 0..2 {
            let (k0, k1) = (2 * axis, 2 * axis + 1);
            // Resolve each side to (arm, Some(neighbour) or fixed value).
            let side = |k: usize| -> Option<(f64, Option<usize>, f64)> {
                if !fixed[i][k].is_nan() {
                    return Some((arm[i][k], None, fixed[i][k]));
                }
                neighbour(c, r, k).map(|j| (1.0, Some(j), 0.0))
            };
            let (s0, s1) = match (side(k0), side(k1)) {
                (Some(a), Some(b)) => (a, b),
                (Some(a), None) => (a, a),
                (None, Some(b)) => (b, b),
                (None, None) => continue,
            };
            let span = 2.0 / (s0.0 + s1.0);
            for (k, s) in [(k0, s0), (k1, s1)] {
                let w = span / s.0;
                diag += w;
                match s.1 {
                    Some(j) => {
                        if nb[k].0 == usize::MAX {
                            nb[k] = (j, w);
                        } else {
                            nb[k].1 += w;
                        }
                    }
                    None => konst += w * s.2,
                }
            }
        }
        rows.push((i, konst, diag, nb));
    }
    let parity = |i: usize| {
        let (c, r) = g.col_row(i);
        (c + r) % 2
    };
    let omega = optimal_relaxation(2 * m);
    let max_sweeps = 200 * m;
    let mut sweeps = 0;
    loop {
        let mut change: f64 = 0.0;
        for colour in 0..2 {
            for &(i, konst, diag, nb) in &rows {
                if parity(i) != colour {
                    continue;
                }
                let mut s = konst;
                for &(j, w) in &nb {
                    if j != usize::MAX {
                        s += w * u[j];
                    }
                }
                let target = s / diag;
                let delta = omega * (target - u[i]);
                u[i] += delta;
                change = change.max(delta.abs());
            }
        }
        sweeps += 1;
        if change < 1e-13 {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(LabError::IterationLimit {
                iterations: sweeps,
                residual: change,
            });
        }
    }
    Ok(HarmonicExtension {
        field: ScalarField::new(g, u)?,
        crossings,
        mask: eq.support_mask.clone(),
    })
}

/// Harmonic extension of a grid-sampled function; boundary values at the
/// free boundary are interpolated bilinearly.
pub fn harmonic_extension(eq: &EquilibriumMeasure, xi: &ScalarField) -> Result<HarmonicExtension> {
    if xi.grid != eq.grid {
        return Err(LabError::domain("field and equilibrium use different grids"));
    }
    harmonic_extension_fn(eq, |p| xi.interpolate(p).unwrap_or(0.0))
}

/// Outward flux `∮ ∇ξ^Σ · n` over each droplet component, assembled from
/// exterior one-sided derivatives at the boundary crossings.
pub fn multicut_flux_check(eq: &EquilibriumMeasure, ext: &HarmonicExtension) -> Vec<f64> {
    let mut flux = vec![KahanSum::new(); eq.components.len()];
    for k in 0..ext.crossings.len() {
        flux[ext.crossings[k].component].add(ext.face_flux(k));
    }
    flux.into_iter().map(|f| f.value()).collect()
}
