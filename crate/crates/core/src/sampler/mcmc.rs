use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{chain_rng, ChainSettings, ProposalKind, SampleSet};
use crate::energy::hamiltonian;
use crate::equilibrium::EquilibriumMeasure;
use crate::error::{LabError, Result};
use crate::geometry::Point;
use crate::model::{ConfinementPotential, Configuration, GasParams};

const TUNE_EVERY: usize = 10;
const LOW_ACCEPTANCE: f64 = 0.01;

/// Draws `n` i.i.d. points from the equilibrium density: a node is picked
/// with probability proportional to its mass, then jittered uniformly
/// within its cell.
pub fn sample_from_equilibrium<R: Rng>(eq: &EquilibriumMeasure, n: usize, rng: &mut R) -> Vec<Point> {
    let mut cdf = Vec::with_capacity(eq.grid.len());
    let mut acc = 0.0;
    for &d in &eq.density.values {
        acc += d.max(0.0);
        cdf.push(acc);
    }
    let h = eq.grid.spacing();
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let p = eq.grid.node_at(k);
            let jx = (rng.random::<f64>() - 0.5) * h;
            let jy = (rng.random::<f64>() - 0.5) * h;
            Point::new(p.x + jx, p.y + jy)
        })
        .collect()
}

/// Change of `H_N` when particle `i` moves to `y`, computed in `O(N)`.
///
/// Logarithms are taken of products of eight distance ratios at a time.
pub fn delta_energy(points: &[Point], i: usize, y: Point, v: &ConfinementPotential) -> f64 {
    let x = points[i];
    let n = points.len() as f64;
    let mut log_acc = 0.0;
    let mut prod = 1.0;
    let mut count = 0;
    for (j, &p) in points.iter().enumerate() {
        if j == i {
            continue;
        }
        prod *= y.dist_sqr(p) / x.dist_sqr(p);
        count += 1;
        if count == 8 {
            log_acc += prod.ln();
            prod = 1.0;
            count = 0;
        }
    }
    log_acc += prod.ln();
    -0.5 * log_acc + n * (v.value(y) - v.value(x))
}

/// `∇_{x_i} H_N` with particle `i` placed at `y`.
pub fn site_gradient(points: &[Point], i: usize, y: Point, v: &ConfinementPotential) -> [f64; 2] {
    let n = points.len() as f64;
    let gv = v.gradient(y);
    let mut gx = n * gv[0];
    let mut gy = n * gv[1];
    for (j, &p) in points.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = y - p;
        let r2 = d.norm_sqr();
        gx -= d.x / r2;
        gy -= d.y / r2;
    }
    [gx, gy]
}

/// Metropolis acceptance probability `min(1, exp(-β ΔH + log q-ratio))`.
pub fn acceptance_probability(beta: f64, delta_h: f64, log_proposal_ratio: f64) -> f64 {
    let a = -beta * delta_h + log_proposal_ratio;
    if a >= 0.0 {
        1.0
    } else {
        a.exp()
    }
}

struct Chain<'a> {
    points: Vec<Point>,
    v: &'a ConfinementPotential,
    beta: f64,
    step: f64,
    kind: ProposalKind,
    rng: ChaCha8Rng,
}

impl Chain<'_> {
    fn gaussian(&mut self) -> Point {
        Point::new(
            self.rng.sample(StandardNormal),
            self.rng.sample(StandardNormal),
        )
    }

    /// One single-site update; returns whether it was accepted.
    fn update(&mut self, i: usize) -> bool {
        let x = self.points[i];
        let noise = self.gaussian();
        let (y, log_q) = match self.kind {
            ProposalKind::Metropolis => (x + noise * self.step, 0.0),
            ProposalKind::Langevin => {
                let tau = 0.5 * self.step * self.step;
                let gx = site_gradient(&self.points, i, x, self.v);
                let drift = |p: Point, g: [f64; 2]| p - Point::new(g[0], g[1]) * (tau * self.beta);
                let y = drift(x, gx) + noise * self.step;
                let gy = site_gradient(&self.points, i, y, self.v);
                let s2 = 2.0 * self.step * self.step;
                let forward = (y - drift(x, gx)).norm_sqr();
                let backward = (x - drift(y, gy)).norm_sqr();
                (y, (forward - backward) / s2)
            }
        };
        let u: f64 = self.rng.random();
        if !y.is_finite() {
            return false;
        }
        let dh = delta_energy(&self.points, i, y, self.v);
        if dh.is_nan() {
            return false;
        }
        if u < acceptance_probability(self.beta, dh, log_q) {
            self.points[i] = y;
            true
        } else {
            false
        }
    }

    fn sweep(&mut self) -> u64 {
        (0..self.points.len()).map(|i| self.update(i) as u64).sum()
    }
}

/// Runs chain number `chain` (its own RNG stream).
pub fn mcmc_sample_chain(
    params: GasParams,
    v: &ConfinementPotential,
    eq: &EquilibriumMeasure,
    settings: &ChainSettings,
    chain: u64,
) -> Result<SampleSet> {
    settings.validate()?;
    let mut rng = chain_rng(settings.seed, chain);
    let points = sample_from_equilibrium(eq, params.n, &mut rng);
    let mut c = Chain {
        points,
        v,
        beta: params.beta,
        step: settings.step_size,
        kind: settings.kind,
        rng,
    };
    let record = |pts: &[Point]| -> Result<(Configuration, f64)> {
        let conf = Configuration::new(pts.to_vec(), params)?;
        let e = hamiltonian(&conf, v);
        Ok((conf, e))
    };

    let mut configurations = Vec::new();
    let mut energy_trace = Vec::new();
    let (mut proposals, mut accepted) = (0u64, 0u64);
    let mut window = 0u64;
    for s in 1..=settings.n_steps {
        let acc = c.sweep();
        if s <= settings.burn_in {
            window += acc;
            if settings.tune && s % TUNE_EVERY == 0 {
                let rate = window as f64 / (TUNE_EVERY * params.n) as f64;
                if rate < 0.3 {
                    c.step *= 0.8;
                } else if rate > 0.5 {
                    c.step *= 1.25;
                }
                window = 0;
            }
            continue;
        }
        proposals += params.n as u64;
        accepted += acc;
        if (s - settings.burn_in) % settings.thinning == 0 {
            let (conf, e) = record(&c.points)?;
            configurations.push(conf);
            energy_trace.push(e);
        }
    }
    if configurations.is_empty() {
        let (conf, e) = record(&c.points)?;
        configurations.push(conf);
        energy_trace.push(e);
    }
    let acceptance_rate = if proposals > 0 {
        accepted as f64 / proposals as f64
    } else {
        0.0
    };
    let mut warnings = Vec::new();
    if proposals > 0 && acceptance_rate < LOW_ACCEPTANCE {
        let msg = format!(
            "acceptance rate {acceptance_rate:.4} below {LOW_ACCEPTANCE} after burn-in; step size {} too large",
            c.step
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(SampleSet {
        configurations,
        acceptance_rate,
        proposals,
        accepted,
        energy_trace,
        step_size: c.step,
        seed: settings.seed,
        chain,
        warnings,
    })
}

/// Single chain on stream 0 targeting `exp(-β H_N)`.
pub fn mcmc_sample(
    params: GasParams,
    v: &ConfinementPotential,
    eq: &EquilibriumMeasure,
    settings: &ChainSettings,
) -> Result<SampleSet> {
    mcmc_sample_chain(params, v, eq, settings, 0)
}

/// Independent chains `0..chains` run in parallel; results are ordered by chain.
pub fn run_chains(
    params: GasParams,
    v: &ConfinementPotential,
    eq: &EquilibriumMeasure,
    settings: &ChainSettings,
    chains: usize,
) -> Result<Vec<SampleSet>> {
    if chains == 0 {
        return Err(LabError::domain("at least one chain is required"));
    }
    (0..chains as u64)
        .into_par_iter()
        .map(|k| mcmc_sample_chain(params, v, eq, settings, k))
        .collect()
}
