//! Sampling configurations from the Gibbs measure.
//!
//! [`mcmc_sample`] targets `exp(-β H_N)` for any potential with single-site
//! Metropolis or Langevin proposals; [`ginibre_exact`] draws exact `β = 2`
//! samples for the quadratic potential from the eigenvalues of a Ginibre
//! matrix.

mod diagnostics;
mod eigen;
mod ginibre;
mod mcmc;

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::Point;
use crate::model::{Configuration, GasParams};

pub use diagnostics::{autocorrelation_time, chain_diagnostics, ChainDiagnostics};
pub use eigen::{eigenvalues, hessenberg_eigenvalues, hessenberg_reduce, ComplexMatrix};
pub use ginibre::{ginibre_exact, ginibre_exact_with, ginibre_matrix, ginibre_moduli, GinibreMethod};
pub use mcmc::{
    acceptance_probability, delta_energy, mcmc_sample, mcmc_sample_chain, run_chains,
    sample_from_equilibrium, site_gradient,
};

/// The generator used everywhere: ChaCha8 keyed by the seed, one stream per chain.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// Proposal used by the single-site chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    Metropolis,
    Langevin,
}

impl std::str::FromStr for ProposalKind {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metropolis" => Ok(ProposalKind::Metropolis),
            "langevin" => Ok(ProposalKind::Langevin),
            other => Err(LabError::config(format!("unknown proposal kind '{other}'"))),
        }
    }
}

/// Chain parameters. `n_steps`, `burn_in` and `thinning` count sweeps of
/// `N` single-site proposals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub step_size: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub kind: ProposalKind,
    /// Adapt the step size during burn-in.
    pub tune: bool,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            step_size: 0.05,
            n_steps: 1000,
            burn_in: 200,
            thinning: 10,
            seed: 0,
            kind: ProposalKind::Metropolis,
            tune: true,
        }
    }
}

impl ChainSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(LabError::domain(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.burn_in > self.n_steps {
            return Err(LabError::domain(format!(
                "burn-in {} exceeds the number of sweeps {}",
                self.burn_in, self.n_steps
            )));
        }
        if self.thinning == 0 {
            return Err(LabError::domain("thinning must be at least 1"));
        }
        Ok(())
    }
}

/// Output of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub configurations: Vec<Configuration>,
    /// Accepted fraction of the post-burn-in proposals.
    pub acceptance_rate: f64,
    pub proposals: u64,
    pub accepted: u64,
    /// `H_N` of each recorded configuration.
    pub energy_trace: Vec<f64>,
    pub step_size: f64,
    pub seed: u64,
    pub chain: u64,
    pub warnings: Vec<String>,
}

impl SampleSet {
    /// Wraps independent configurations (for instance exact samples).
    pub fn from_configurations(configurations: Vec<Configuration>, seed: u64) -> Result<Self> {
        if let Some(first) = configurations.first() {
            let p = first.params();
            if configurations.iter().any(|c| c.params() != p) {
                return Err(LabError::domain("configurations do not share (N, β)"));
            }
        }
        Ok(SampleSet {
            configurations,
            acceptance_rate: 1.0,
            proposals: 0,
            accepted: 0,
            energy_trace: Vec::new(),
            step_size: 0.0,
            seed,
            chain: 0,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.configurations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configurations.is_empty()
    }

    pub fn params(&self) -> Option<GasParams> {
        self.configurations.first().map(|c| c.params())
    }

    /// Writes the binary `CGS1` representation.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let params = self
            .params()
            .ok_or_else(|| LabError::domain("cannot write an empty sample set"))?;
        w.write_all(b"CGS1")?;
        w.write_all(&(params.n as u64).to_le_bytes())?;
        w.write_all(&params.beta.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.len() * params.n * 16);
        for c in &self.configurations {
            for p in c.points() {
                buf.extend_from_slice(&p.x.to_le_bytes());
                buf.extend_from_slice(&p.y.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a `CGS1` stream; chain statistics are not stored and come back empty.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| LabError::format("truncated CGS1 header"))?;
        if &magic != b"CGS1" {
            return Err(LabError::format("missing CGS1 magic"));
        }
        let mut b = [0u8; 8];
        let mut word = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b)
                .map_err(|_| LabError::format("truncated CGS1 stream"))?;
            Ok(b)
        };
        let n = u64::from_le_bytes(word(&mut r)?) as usize;
        let beta = f64::from_le_bytes(word(&mut r)?);
        let count = u64::from_le_bytes(word(&mut r)?) as usize;
        let seed = u64::from_le_bytes(word(&mut r)?);
        let params = GasParams::new(n, beta).map_err(|e| LabError::format(e.to_string()))?;
        let mut configurations = Vec::with_capacity(count.min(1 << 20));
        let mut buf = vec![0u8; n * 16];
        for _ in 0..count {
            r.read_exact(&mut buf)
                .map_err(|_| LabError::format("truncated CGS1 configuration data"))?;
            let points = buf
                .chunks_exact(16)
                .map(|c| {
                    Point::new(
                        f64::from_le_bytes(c[..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect();
            configurations.push(Configuration::new(points, params)?);
        }
        SampleSet::from_configurations(configurations, seed)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
