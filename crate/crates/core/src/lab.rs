//! Experiment configuration, drivers and persistence.
//!
//! A configuration is a flat `key = value` text file; list values are
//! comma separated and `#` starts a comment. Every driver returns an
//! [`ExperimentRecord`] holding the configuration echo, per-run results,
//! errors and timings, plus the CSV tables it produced. CSV output depends
//! only on the configuration and the seeds.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::energy::hamiltonian;
use crate::equilibrium::{default_grid_with, solve_equilibrium, EquilibriumMeasure, DEFAULT_MASS_TOL};
use crate::error::{LabError, Result};
use crate::field::{
    chi_smoothing, default_exclusion_radius, gmc_measure, max_over_disk, mollified_statistic, potential_field,
    FieldGrid, DEFAULT_FIELD_RESOLUTION,
};
use crate::fluctuations::{
    centered_statistic, equilibrium_mean, exp_moment_from_statistics, make_zero_mean_combination,
    master_equation_residual, transport_solve, TestFunction, DEFAULT_MAX_TN,
};
use crate::geometry::Point;
use crate::grid::Grid2D;
use crate::model::{ConfinementPotential, Configuration, GasParams};
use crate::numerics::{mean, median, variance};
use crate::sampler::{
    chain_rng, ginibre_exact_with, ginibre_moduli, mcmc_sample_chain, ChainSettings, GinibreMethod, ProposalKind,
};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "COULOMB_LAB_THREADS";

/// How configurations are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerChoice {
    /// Exact eigenvalues for `β = 2` and the quadratic potential, MCMC otherwise.
    Auto,
    Exact,
    /// Exact moduli only; valid for statistics radial about the origin.
    Moduli,
    Mcmc,
}

impl FromStr for SamplerChoice {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(SamplerChoice::Auto),
            "exact" => Ok(SamplerChoice::Exact),
            "moduli" => Ok(SamplerChoice::Moduli),
            "mcmc" => Ok(SamplerChoice::Mcmc),
            other => Err(LabError::config(format!("unknown sampler '{other}'"))),
        }
    }
}

impl SamplerChoice {
    fn as_str(self) -> &'static str {
        match self {
            SamplerChoice::Auto => "auto",
            SamplerChoice::Exact => "exact",
            SamplerChoice::Moduli => "moduli",
            SamplerChoice::Mcmc => "mcmc",
        }
    }
}

/// Parameters shared by all drivers.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub potential: String,
    pub betas: Vec<f64>,
    pub ns: Vec<usize>,
    /// Chain parameters; the seed is taken from `seeds`.
    pub chain: ChainSettings,
    /// One chain per seed; chain `k` uses `seeds[k]`.
    pub seeds: Vec<u64>,
    /// Exact samples per chain.
    pub samples: usize,
    pub sampler: SamplerChoice,
    pub ginibre_method: GinibreMethod,
    pub disk_center: Point,
    pub disk_radius: f64,
    pub field_resolution: usize,
    /// Exclusion radius around particles; `None` uses `1/(4√N)`.
    pub delta: Option<f64>,
    /// Mollification scales reported by the `field` driver.
    pub epsilons: Vec<f64>,
    pub gammas: Vec<f64>,
    /// `t = m / N` for each multiplier `m`.
    pub t_multipliers: Vec<f64>,
    /// `r'` of the smoothed logarithm used by the fluctuation scan.
    pub smoothing_radius: f64,
    pub equilibrium_resolution: usize,
    /// Half-width of the equilibrium box; `None` picks it from the potential.
    pub equilibrium_half_width: Option<f64>,
    pub transport_resolutions: Vec<usize>,
    pub test_functions: Vec<String>,
    pub output_dir: PathBuf,
    pub cache: bool,
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    source: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            potential: "quadratic".into(),
            betas: vec![2.0],
            ns: vec![256],
            chain: ChainSettings::default(),
            seeds: vec![1],
            samples: 10,
            sampler: SamplerChoice::Auto,
            ginibre_method: GinibreMethod::Hessenberg,
            disk_center: Point::new(0.0, 0.0),
            disk_radius: 0.5,
            field_resolution: DEFAULT_FIELD_RESOLUTION,
            delta: None,
            epsilons: vec![0.05],
            gammas: vec![0.0, 0.5, 1.0],
            t_multipliers: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            smoothing_radius: 0.25,
            equilibrium_resolution: 257,
            equilibrium_half_width: None,
            transport_resolutions: vec![129, 257, 513],
            test_functions: vec!["half_square".into()],
            output_dir: PathBuf::from("lab-output"),
            cache: true,
            cache_dir: None,
            threads: None,
            source: String::new(),
        }
    }
}

/// Recognised configuration keys.
pub const CONFIG_KEYS: &[&str] = &[
    "potential",
    "betas",
    "ns",
    "seeds",
    "samples",
    "sampler",
    "ginibre_method",
    "step_size",
    "n_steps",
    "burn_in",
    "thinning",
    "proposal",
    "tune",
    "disk_center",
    "disk_radius",
    "field_resolution",
    "delta",
    "epsilons",
    "gammas",
    "t_multipliers",
    "smoothing_radius",
    "equilibrium_resolution",
    "equilibrium_half_width",
    "transport_resolutions",
    "test_functions",
    "output_dir",
    "cache",
    "cache_dir",
    "threads",
];

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| LabError::config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_one(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(LabError::config(format!("'{key}' must not be empty")));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(LabError::config(format!("invalid boolean '{other}' for '{key}'"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses a configuration file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LabError::config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            config
                .apply(key.trim(), value.trim())
                .map_err(|e| LabError::config(format!("line {}: {e}", lineno + 1)))?;
        }
        config.source = text.to_string();
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key (hyphens are accepted in place of underscores) and
    /// appends the assignment to the echo.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        self.apply(&key, value.trim())?;
        if !self.source.is_empty() && !self.source.ends_with('\n') {
            self.source.push('\n');
        }
        self.source.push_str(&format!("{key} = {}\n", value.trim()));
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "potential" => self.potential = value.to_string(),
            "betas" => self.betas = parse_list(key, value)?,
            "ns" => self.ns = parse_list(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "samples" => self.samples = parse_one(key, value)?,
            "sampler" => self.sampler = value.parse()?,
            "ginibre_method" => self.ginibre_method = value.parse()?,
            "step_size" => self.chain.step_size = parse_one(key, value)?,
            "n_steps" => self.chain.n_steps = parse_one(key, value)?,
            "burn_in" => self.chain.burn_in = parse_one(key, value)?,
            "thinning" => self.chain.thinning = parse_one(key, value)?,
            "proposal" => self.chain.kind = value.parse()?,
            "tune" => self.chain.tune = parse_bool(key, value)?,
            "disk_center" => {
                let c: Vec<f64> = parse_list(key, value)?;
                if c.len() != 2 {
                    return Err(LabError::config("'disk_center' takes two coordinates"));
                }
                self.disk_center = Point::new(c[0], c[1]);
            }
            "disk_radius" => self.disk_radius = parse_one(key, value)?,
            "field_resolution" => self.field_resolution = parse_one(key, value)?,
            "delta" => {
                self.delta = match value {
                    "auto" => None,
                    v => Some(parse_one(key, v)?),
                }
            }
            "epsilons" => self.epsilons = parse_list(key, value)?,
            "gammas" => self.gammas = parse_list(key, value)?,
            "t_multipliers" => self.t_multipliers = parse_list(key, value)?,
            "smoothing_radius" => self.smoothing_radius = parse_one(key, value)?,
            "equilibrium_resolution" => self.equilibrium_resolution = parse_one(key, value)?,
            "equilibrium_half_width" => {
                self.equilibrium_half_width = match value {
                    "auto" => None,
                    v => Some(parse_one(key, v)?),
                }
            }
            "transport_resolutions" => self.transport_resolutions = parse_list(key, value)?,
            "test_functions" => self.test_functions = parse_list(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "cache" => self.cache = parse_bool(key, value)?,
            "cache_dir" => self.cache_dir = Some(PathBuf::from(value)),
            "threads" => {
                self.threads = match value {
                    "auto" => None,
                    v => Some(parse_one(key, v)?),
                }
            }
            other => return Err(LabError::config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// The text the configuration was built from, including overrides.
    pub fn echo(&self) -> &str {
        &self.source
    }

    /// Every key with its resolved value.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let c = &self.chain;
        let pairs: Vec<(&str, String)> = vec![
            ("potential", self.potential.clone()),
            ("betas", join(&self.betas)),
            ("ns", join(&self.ns)),
            ("seeds", join(&self.seeds)),
            ("samples", self.samples.to_string()),
            ("sampler", self.sampler.as_str().into()),
            (
                "ginibre_method",
                match self.ginibre_method {
                    GinibreMethod::Dense => "dense".into(),
                    GinibreMethod::Hessenberg => "hessenberg".into(),
                },
            ),
            ("step_size", c.step_size.to_string()),
            ("n_steps", c.n_steps.to_string()),
            ("burn_in", c.burn_in.to_string()),
            ("thinning", c.thinning.to_string()),
            (
                "proposal",
                match c.kind {
                    ProposalKind::Metropolis => "metropolis".into(),
                    ProposalKind::Langevin => "langevin".into(),
                },
            ),
            ("tune", c.tune.to_string()),
            ("disk_center", format!("{},{}", self.disk_center.x, self.disk_center.y)),
            ("disk_radius", self.disk_radius.to_string()),
            ("field_resolution", self.field_resolution.to_string()),
            ("delta", self.delta.map_or("auto".into(), |d| d.to_string())),
            ("epsilons", join(&self.epsilons)),
            ("gammas", join(&self.gammas)),
            ("t_multipliers", join(&self.t_multipliers)),
            ("smoothing_radius", self.smoothing_radius.to_string()),
            ("equilibrium_resolution", self.equilibrium_resolution.to_string()),
            (
                "equilibrium_half_width",
                self.equilibrium_half_width.map_or("auto".into(), |v| v.to_string()),
            ),
            ("transport_resolutions", join(&self.transport_resolutions)),
            ("test_functions", self.test_functions.join(",")),
            ("output_dir", self.output_dir.display().to_string()),
            ("cache", self.cache.to_string()),
            ("cache_dir", self.cache_directory().display().to_string()),
            ("threads", self.threads.map_or("auto".into(), |t| t.to_string())),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Canonical `key = value` text of [`resolved`](Self::resolved).
    pub fn to_text(&self) -> String {
        self.resolved()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn cache_directory(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    /// Structural checks that do not need the equilibrium measure.
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("betas", self.betas.is_empty()),
            ("ns", self.ns.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("epsilons", self.epsilons.is_empty()),
            ("gammas", self.gammas.is_empty()),
            ("t_multipliers", self.t_multipliers.is_empty()),
            ("transport_resolutions", self.transport_resolutions.is_empty()),
            ("test_functions", self.test_functions.is_empty()),
        ];
        if let Some((key, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(LabError::config(format!("'{key}' must not be empty")));
        }
        for &beta in &self.betas {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(LabError::config(format!("beta must be positive, got {beta}")));
            }
        }
        if self.ns.contains(&0) {
            return Err(LabError::config("N must be at least 1"));
        }
        if self.samples == 0 {
            return Err(LabError::config("'samples' must be at least 1"));
        }
        if !(self.disk_radius > 0.0) || !self.disk_center.is_finite() {
            return Err(LabError::config("the disk needs a finite centre and a positive radius"));
        }
        if self.field_resolution < 2 {
            return Err(LabError::config("'field_resolution' must be at least 2"));
        }
        if self.delta.is_some_and(|d| !(d >= 0.0)) {
            return Err(LabError::config("'delta' must be non-negative"));
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0)) || !(self.smoothing_radius > 0.0) {
            return Err(LabError::config("smoothing scales must be positive"));
        }
        if self.gammas.iter().any(|g| !g.is_finite()) || self.t_multipliers.iter().any(|t| !t.is_finite()) {
            return Err(LabError::config("'gammas' and 't_multipliers' must be finite"));
        }
        if let Some(&m) = self.t_multipliers.iter().find(|m| m.abs() > DEFAULT_MAX_TN) {
            return Err(LabError::config(format!(
                "t multiplier {m} exceeds the admissible |t| N = {DEFAULT_MAX_TN}"
            )));
        }
        if self.threads == Some(0) {
            return Err(LabError::config("'threads' must be at least 1"));
        }
        for spec in &self.test_functions {
            TestFunctionSpec::parse(spec)?;
        }
        self.chain.validate()?;
        ConfinementPotential::from_tag(&self.potential)?;
        Ok(())
    }
}

/// Test functions named in a configuration.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunctionSpec {
    /// `half_square`: `|x|²/2`.
    HalfSquare,
    /// `const:c`.
    Constant(f64),
    /// `bump:x:y:r`.
    Bump(Point, f64),
    /// `log:x:y:r`: the smoothed logarithm minus its `h0` multiple.
    ZeroMeanLog(Point, f64),
}

impl TestFunctionSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.trim().split(':').collect();
        let nums = |from: usize| -> Result<Vec<f64>> { parts[from..].iter().map(|p| parse_one("test_functions", p)).collect() };
        match (parts[0], parts.len()) {
            ("half_square", 1) => Ok(TestFunctionSpec::HalfSquare),
            ("const", 2) => Ok(TestFunctionSpec::Constant(nums(1)?[0])),
            ("bump", 4) | ("log", 4) => {
                let v = nums(1)?;
                if !(v[2] > 0.0) {
                    return Err(LabError::config(format!("'{spec}': radius must be positive")));
                }
                let c = Point::new(v[0], v[1]);
                Ok(if parts[0] == "bump" {
                    TestFunctionSpec::Bump(c, v[2])
                } else {
                    TestFunctionSpec::ZeroMeanLog(c, v[2])
                })
            }
            _ => Err(LabError::config(format!("unknown test function '{spec}'"))),
        }
    }

    pub fn build(&self, eq: &EquilibriumMeasure) -> Result<TestFunction> {
        match *self {
            TestFunctionSpec::HalfSquare => Ok(TestFunction::half_square()),
            TestFunctionSpec::Constant(c) => Ok(TestFunction::constant(c)),
            TestFunctionSpec::Bump(c, r) => TestFunction::bump(c, r, 1.0),
            TestFunctionSpec::ZeroMeanLog(c, r) => Ok(make_zero_mean_combination(&chi_smoothing(c, r)?, eq)?.0),
        }
    }
}

/// Wall-clock time of one stage.
#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// An error confined to one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunError {
    pub n: usize,
    pub beta: f64,
    pub chain: Option<u64>,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumSummary {
    pub resolution: usize,
    pub half_width: f64,
    pub c_v: f64,
    pub mass: f64,
    pub support_radius: f64,
    pub components: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleRow {
    pub n: usize,
    pub beta: f64,
    pub chain: u64,
    pub sample: usize,
    /// Seed of the exact draw, or of the chain for MCMC.
    pub seed: u64,
    pub energy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainSummary {
    pub n: usize,
    pub beta: f64,
    pub chain: u64,
    pub sampler: String,
    pub acceptance_rate: Option<f64>,
    pub step_size: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FieldSummary {
    pub n: usize,
    pub beta: f64,
    pub seed: u64,
    pub max: f64,
    pub argmax: Point,
    pub excluded_fraction: f64,
    /// `(ε, Σ k_ε(x_i) + N ∫ k_ε * ...)` at the disk centre.
    pub mollified: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxRow {
    pub n: usize,
    pub beta: f64,
    pub chain: u64,
    pub sample: usize,
    pub seed: u64,
    pub maxpot: f64,
    pub maxpot_over_log_n: f64,
    pub argmax: Point,
    pub excluded_fraction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxSummary {
    pub n: usize,
    pub beta: f64,
    pub samples: usize,
    pub median_maxpot: f64,
    pub median_maxpot_over_log_n: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FluctRow {
    pub n: usize,
    pub beta: f64,
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub top_share: f64,
    pub heavy_tail: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FluctSummary {
    pub n: usize,
    pub beta: f64,
    pub samples: usize,
    pub mean: f64,
    pub variance: f64,
    /// Empirical 1%, 50% and 99% quantiles.
    pub quantiles: [f64; 3],
}

#[derive(Clone, Debug, Serialize)]
pub struct TransportRow {
    pub function: String,
    pub m: usize,
    pub h: f64,
    pub status: String,
    pub c_xi: Option<f64>,
    pub residual_stddev: Option<f64>,
    pub residual_max: Option<f64>,
    pub nodes: Option<usize>,
    pub lipschitz: Option<f64>,
    /// Residual standard deviation over that of the previous resolution.
    pub ratio: Option<f64>,
    /// Largest `|ψ + x/2|` on the droplet, for `|x|²/2` and the quadratic potential.
    pub psi_error: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GmcRow {
    pub n: usize,
    pub beta: f64,
    pub chain: u64,
    pub sample: usize,
    pub gamma: f64,
    pub total: f64,
    pub weighted_mean_pot: f64,
    pub max_weight: f64,
}

/// Driver-specific results.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Results {
    Equilibrium(EquilibriumSummary),
    Sample {
        rows: Vec<SampleRow>,
        chains: Vec<ChainSummary>,
    },
    Field(FieldSummary),
    Maxscan {
        rows: Vec<MaxRow>,
        summary: Vec<MaxSummary>,
    },
    Fluctscan {
        rows: Vec<FluctRow>,
        summary: Vec<FluctSummary>,
    },
    Transport {
        rows: Vec<TransportRow>,
    },
    Gmc {
        rows: Vec<GmcRow>,
    },
}

/// Everything a driver produced.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentRecord {
    pub kind: String,
    pub version: String,
    pub config_echo: String,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub results: Results,
    pub errors: Vec<RunError>,
    pub timings: Vec<Timing>,
    /// CSV tables by file name.
    #[serde(skip)]
    pub tables: BTreeMap<String, String>,
}

impl ExperimentRecord {
    fn new(kind: &str, config: &ExperimentConfig, results: Results) -> Self {
        ExperimentRecord {
            kind: kind.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_echo: config.echo().to_string(),
            config: config.resolved(),
            seeds: config.seeds.clone(),
            results,
            errors: Vec::new(),
            timings: Vec::new(),
            tables: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| LabError::format(e.to_string()))
    }

    /// Writes every table and `<kind>.json` into `dir`; returns the paths written.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, body) in &self.tables {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
        let path = dir.join(format!("{}.json", self.kind));
        std::fs::write(&path, self.to_json()?)?;
        written.push(path);
        Ok(written)
    }
}

struct Stopwatch {
    start: Instant,
    timings: Vec<Timing>,
}

impl Stopwatch {
    fn new() -> Self {
        Stopwatch {
            start: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(Timing {
            stage: stage.into(),
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

/// Worker pool sized by `threads` and capped by `COULOMB_LAB_THREADS`.
pub fn worker_pool(config: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    let env = std::env::var(THREADS_ENV)
        .ok()
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&t| t > 0)
                .ok_or_else(|| LabError::config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))
        })
        .transpose()?;
    let threads = match (config.threads, env) {
        (Some(a), Some(b)) => a.min(b),
        (a, b) => a.or(b).unwrap_or(0),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| LabError::config(e.to_string()))
}

fn equilibrium_grid(config: &ExperimentConfig, v: &ConfinementPotential, m: usize) -> Result<Grid2D> {
    match config.equilibrium_half_width {
        Some(l) => Grid2D::new(l, m),
        None => default_grid_with(v, m),
    }
}

fn cache_path(config: &ExperimentConfig, grid: &Grid2D) -> Result<PathBuf> {
    let mut hasher = DefaultHasher::new();
    config.potential.hash(&mut hasher);
    if let Some(path) = config.potential.trim().strip_prefix("grid:") {
        std::fs::read(path)?.hash(&mut hasher);
    }
    grid.half_width().to_bits().hash(&mut hasher);
    DEFAULT_MASS_TOL.to_bits().hash(&mut hasher);
    let slug: String = config
        .potential
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .take(32)
        .collect();
    Ok(config
        .cache_directory()
        .join(format!("eq-{slug}-{}-{:016x}.eqm", grid.resolution(), hasher.finish())))
}

/// The equilibrium measure at resolution `m`, read from the cache when present.
pub fn cached_equilibrium(config: &ExperimentConfig, m: usize) -> Result<EquilibriumMeasure> {
    let v = ConfinementPotential::from_tag(&config.potential)?;
    let grid = equilibrium_grid(config, &v, m)?;
    if !config.cache {
        return solve_equilibrium(&v, grid, DEFAULT_MASS_TOL);
    }
    let path = cache_path(config, &grid)?;
    if path.exists() {
        match EquilibriumMeasure::load(&path, v.clone()) {
            Ok(eq) if eq.grid == grid => return Ok(eq),
            Ok(_) => log::warn!("cached equilibrium {} has a different grid; recomputing", path.display()),
            Err(e) => log::warn!("unreadable cached equilibrium {}: {e}; recomputing", path.display()),
        }
    }
    let eq = solve_equilibrium(&v, grid, DEFAULT_MASS_TOL)?;
    std::fs::create_dir_all(config.cache_directory())?;
    eq.save(&path)?;
    Ok(eq)
}

/// Seed of exact draw `sample` at size `n` within the chain keyed by `seed`.
pub fn sample_seed(seed: u64, n: usize, sample: usize) -> u64 {
    chain_rng(seed, ((n as u64) << 32) ^ sample as u64).random()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Plan {
    Exact,
    Moduli,
    Mcmc,
}

fn plan(config: &ExperimentConfig, beta: f64, allow_moduli: bool) -> Result<Plan> {
    let exact_ok = beta == 2.0 && config.potential.trim() == "quadratic";
    match config.sampler {
        SamplerChoice::Auto => Ok(if exact_ok { Plan::Exact } else { Plan::Mcmc }),
        SamplerChoice::Mcmc => Ok(Plan::Mcmc),
        SamplerChoice::Exact | SamplerChoice::Moduli if !exact_ok => Err(LabError::config(
            "exact sampling needs beta = 2 and the quadratic potential",
        )),
        SamplerChoice::Exact => Ok(Plan::Exact),
        SamplerChoice::Moduli if allow_moduli => Ok(Plan::Moduli),
        SamplerChoice::Moduli => Err(LabError::config(
            "the moduli sampler only serves statistics radial about the origin",
        )),
    }
}

/// Configurations of one chain with the seed of each draw.
struct Draws {
    configurations: Vec<(Configuration, u64)>,
    summary: ChainSummary,
}

fn draw_chain(
    config: &ExperimentConfig,
    eq: &EquilibriumMeasure,
    n: usize,
    beta: f64,
    chain: u64,
    plan: Plan,
) -> Result<Draws> {
    let seed = config.seeds[chain as usize];
    let mut summary = ChainSummary {
        n,
        beta,
        chain,
        sampler: String::new(),
        acceptance_rate: None,
        step_size: None,
        warnings: Vec::new(),
    };
    let configurations = match plan {
        Plan::Exact | Plan::Moduli => {
            summary.sampler = "exact".into();
            (0..config.samples)
                .into_par_iter()
                .map(|s| {
                    let seed = sample_seed(seed, n, s);
                    Ok((ginibre_exact_with(n, seed, config.ginibre_method)?, seed))
                })
                .collect::<Result<Vec<_>>>()?
        }
        Plan::Mcmc => {
            summary.sampler = "mcmc".into();
            let params = GasParams::new(n, beta)?;
            let settings = ChainSettings { seed, ..config.chain };
            let set = mcmc_sample_chain(params, eq.potential(), eq, &settings, chain)?;
            summary.acceptance_rate = Some(set.acceptance_rate);
            summary.step_size = Some(set.step_size);
            summary.warnings = set.warnings;
            set.configurations.into_iter().map(|c| (c, seed)).collect()
        }
    };
    Ok(Draws { configurations, summary })
}

fn check_disk(config: &ExperimentConfig, eq: &EquilibriumMeasure) -> Result<()> {
    let d = eq.distance_to_exterior(config.disk_center);
    if d <= config.disk_radius {
        return Err(LabError::config(format!(
            "disk D(({}, {}), {}) is not strictly inside the droplet (distance to the exterior {d})",
            config.disk_center.x, config.disk_center.y, config.disk_radius
        )));
    }
    Ok(())
}

/// `(N, β, chain)` in output order.
fn tasks(config: &ExperimentConfig) -> Vec<(usize, f64, u64)> {
    let mut out = Vec::new();
    for &n in &config.ns {
        for &beta in &config.betas {
            for chain in 0..config.seeds.len() as u64 {
                out.push((n, beta, chain));
            }
        }
    }
    out
}

fn run_error(n: usize, beta: f64, chain: Option<u64>, e: &LabError) -> RunError {
    log::error!("run N = {n}, beta = {beta}, chain {chain:?} failed: {e}");
    RunError {
        n,
        beta,
        chain,
        message: e.to_string(),
    }
}

fn field_for(config: &ExperimentConfig, eq: &EquilibriumMeasure, conf: &Configuration) -> Result<FieldGrid> {
    potential_field(
        conf,
        eq,
        config.disk_center,
        config.disk_radius,
        config.field_resolution,
        config.delta.unwrap_or_else(|| default_exclusion_radius(conf.n())),
    )
}

/// Solves for the equilibrium measure and tabulates it as `x,y,density,h0,zeta`.
pub fn run_equilibrium(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let mut clock = Stopwatch::new();
    let eq = cached_equilibrium(config, config.equilibrium_resolution)?;
    clock.lap("equilibrium");
    let summary = EquilibriumSummary {
        resolution: eq.grid.resolution(),
        half_width: eq.grid.half_width(),
        c_v: eq.c_v,
        mass: eq.mass(),
        support_radius: eq.support_radius(),
        components: eq.components.len(),
    };
    let mut csv = String::from("x,y,density,h0,zeta\n");
    for i in 0..eq.grid.len() {
        let p = eq.grid.node_at(i);
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            p.x, p.y, eq.density.values[i], eq.h0.values[i], eq.zeta.values[i]
        ));
    }
    let mut record = ExperimentRecord::new("equilibrium", config, Results::Equilibrium(summary));
    record.tables.insert("equilibrium.csv".into(), csv);
    record.timings = clock.timings;
    Ok(record)
}

/// Draws configurations for every `(N, β, chain)`; the table lists the
/// energy of each draw and the record keeps the configurations as `CGS1`
/// files named `samples-N<n>-beta<β>-chain<k>.cgs` when written by the CLI.
pub fn run_sample(config: &ExperimentConfig) -> Result<(ExperimentRecord, Vec<(String, crate::sampler::SampleSet)>)> {
    config.validate()?;
    let pool = worker_pool(config)?;
    let mut clock = Stopwatch::new();
    let eq = cached_equilibrium(config, config.equilibrium_resolution)?;
    clock.lap("equilibrium");
    let results: Vec<_> = pool.install(|| {
        tasks(config)
            .into_par_iter()
            .map(|(n, beta, chain)| {
                let out = plan(config, beta, false).and_then(|p| draw_chain(config, &eq, n, beta, chain, p));
                ((n, beta, chain), out)
            })
            .collect()
    });
    clock.lap("sampling");
    let mut rows = Vec::new();
    let mut chains = Vec::new();
    let mut errors = Vec::new();
    let mut sets = Vec::new();
    for ((n, beta, chain), out) in results {
        match out {
            Ok(d) => {
                let mut confs = Vec::new();
                for (s, (c, seed)) in d.configurations.into_iter().enumerate() {
                    rows.push(SampleRow {
                        n,
                        beta,
                        chain,
                        sample: s,
                        seed,
                        energy: hamiltonian(&c, eq.potential()),
                    });
                    confs.push(c);
                }
                let set = crate::sampler::SampleSet::from_configurations(confs, config.seeds[chain as usize])?;
                sets.push((format!("samples-N{n}-beta{beta}-chain{chain}.cgs"), set));
                chains.push(d.summary);
            }
            Err(e) => errors.push(run_error(n, beta, Some(chain), &e)),
        }
    }
    let mut csv = String::from("N,beta,chain,sample,seed,energy\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{},{}\n", r.n, r.beta, r.chain, r.sample, r.seed, r.energy));
    }
    let mut record = ExperimentRecord::new("sample", config, Results::Sample { rows, chains });
    record.tables.insert("samples.csv".into(), csv);
    record.errors = errors;
    record.timings = clock.timings;
    Ok((record, sets))
}

/// The potential field of the first draw at the first `(N, β)`, with its
/// maximum and the mollified statistics at the disk centre.
pub fn run_field(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let pool = worker_pool(config)?;
    let mut clock = Stopwatch::new();
    let eq = cached_equilibrium(config, config.equilibrium_resolution)?;
    check_disk(config, &eq)?;
    clock.lap("equilibrium");
    let (n, beta) = (config.ns[0], config.betas[0]);
    let one = ExperimentConfig { samples: 1, ..config.clone() };
    let (field, conf, seed) = pool.install(|| -> Result<_> {
        let draws = draw_chain(&one, &eq, n, beta, 0, plan(config, beta, false)?)?;
        let (conf, seed) = draws.configurations.into_iter().next().expect("one draw");
        Ok((field_for(config, &eq, &conf)?, conf, seed))
    })?;
    clock.lap("field");
    let (max, argmax) = max_over_disk(&field)?;
    let mollified = config
        .epsilons
        .iter()
        .map(|&e| Ok((e, mollified_statistic(&conf, &eq, config.disk_center, e)?)))
        .collect::<Result<Vec<_>>>()?;
    let summary = FieldSummary {
        n,
        beta,
        seed,
        max,
        argmax,
        excluded_fraction: field.excluded_fraction(),
        mollified,
        warnings: field.warnings.clone(),
    };
    let mut record = ExperimentRecord::new("field", config, Results::Field(summary));
    record.tables.insert("field.csv".into(), field.to_csv());
    record.timings = clock.timings;
    Ok(record)
}

/// Disk maxima of the potential field for every `(N, β, chain, sample)`.
pub fn run_maxscan(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let pool = worker_pool(config)?;
    let mut clock = Stopwatch::new();
    let eq = cached_equilibrium(config, config.equilibrium_resolution)?;
    check_disk(config, &eq)?;
    clock.lap("equilibrium");
    let results: Vec<_> = pool.install(|| {
        tasks(config)
            .into_par_iter()
            .map(|(n, beta, chain)| {
                let out = (|| -> Result<Vec<MaxRow>> {
                    let draws = draw_chain(config, &eq, n, beta, chain, plan(config, beta, false)?)?;
                    draws
                        .configurations
                        .par_iter()
                        .enumerate()
                        .map(|(s, (conf, seed))| {
                            let field = field_for(config, &eq, conf)?;
                            let (maxpot, argmax) = max_over_disk(&field)?;
                            let log_n = (n as f64).ln();
                            Ok(MaxRow {
                                n,
                                beta,
                                chain,
                                sample: s,
                                seed: *seed,
                                maxpot,
                                maxpot_over_log_n: if n > 1 { maxpot / log_n } else { f64::NAN },
                                argmax,
                                excluded_fraction: field.excluded_fraction(),
                            })
                        })
                        .collect()
                })();
                ((n, beta, chain), out)
            })
            .collect()
    });
    clock.lap("sampling and fields");
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for ((n, beta, chain), out) in results {
        match out {
            Ok(r) => rows.extend(r),
            Err(e) => errors.push(run_error(n, beta, Some(chain), &e)),
        }
    }
    let mut summary = Vec::new();
    for &n in &config.ns {
        for &beta in &config.betas {
            let group: Vec<&MaxRow> = rows.iter().filter(|r| r.n == n && r.beta == beta).collect();
            if group.is_empty() {
                continue;
            }
            let maxima: Vec<f64> = group.iter().map(|r| r.maxpot).collect();
            let ratios: Vec<f64> = group.iter().map(|r| r.maxpot_over_log_n).collect();
            summary.push(MaxSummary {
                n,
                beta,
                samples: group.len(),
                median_maxpot: median(&maxima).unwrap_or(f64::NAN),
                median_maxpot_over_log_n: median(&ratios).unwrap_or(f64::NAN),
            });
        }
    }
    let mut csv = String::from("N,beta,chain,sample,maxpot,maxpot_over_logN\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.beta, r.chain, r.sample, r.maxpot, r.maxpot_over_log_n
        ));
    }
    let mut table = String::from("N,beta,samples,median_maxpot,median_maxpot_over_logN\n");
    for s in &summary {
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            s.n, s.beta, s.samples, s.median_maxpot, s.median_maxpot_over_log_n
        ));
    }
    let mut record = ExperimentRecord::new("maxscan", config, Results::Maxscan { rows, summary });
    record.tables.insert("maxscan.csv".into(), csv);
    record.tables.insert("maxscan_summary.csv".into(), table);
    record.errors = errors;
    record.timings = clock.timings;
    Ok(record)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let k = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[k]
}

/// Exponential moments of `Fluct_N(ξ)` for `ξ = g - c h0`, `g` the smoothed
/// logarithm about the disk centre, at `t = m / N`.
pub fn run_fluctscan(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let pool = worker_pool(config)?;
    let mut clock = Stopwatch::new();
    let eq = cached_equilibrium(config, config.equilibrium_resolution)?;
    clock.lap("equilibrium");
    let g = chi_smoothing(config.disk_center, config.smoothing_radius)?;
    let (xi, _) = make_zero_mean_combination(&g, &eq)?;
    let xi_mean = equilibrium_mean(&eq, &xi);
    if config.sampler == SamplerChoice::Moduli && config.disk_center != Point::new(0.0, 0.0) {
        return Err(LabError::config("the moduli sampler needs the smoothing centre at the origin"));
    }
    let results: Vec<_> = pool.install(|| {
        tasks(config)
            .into_par_iter()
            .map(|(n, beta, chain)| {
                let out = (|| -> Result<Vec<f64>> {
                    match plan(config, beta, true)? {
                        Plan::Moduli => {
                            let seed = config.seeds[chain as usize];
                            (0..config.samples)
                                .into_par_iter()
                                .map(|s| {
                                    let points: Vec<Point> = ginibre_moduli(n, sample_seed(seed, n, s))?
                                        .into_iter()
                                        .map(|r| Point::new(r, 0.0))
                                        .collect();
                                    Ok(centered_statistic(&points, &xi, xi_mean))
                                })
                                .collect()
                        }
                        p => Ok(draw_chain(config, &eq, n, beta, chain, p)?
                            .configurations
                            .iter()
                            .map(|(c, _)| centered_statistic(c.points(), &xi, xi_mean))
                            .collect()),
                    }
                })();
                ((n, beta, chain), out)
            })
            .collect()
    });
    clock.lap("sampling");
    let mut errors = Vec::new();
    let mut pooled: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    let mut failed: Vec<(usize, u64)> = Vec::new();
    for ((n, beta, chain), out) in results {
        match out {
            Ok(f) => pooled.entry((n, beta.to_bits())).or_default().extend(f),
            Err(e) => {
                errors.push(run_error(n, beta, Some(chain), &e));
                failed.push((n, beta.to_bits()));
            }
        }
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &n in &config.ns {
        for &beta in &config.betas {
            let key = (n, beta.to_bits());
            if failed.contains(&key) {
                continue;
            }
            let Some(fluct) = pooled.get(&key) else { continue };
            for &m in &config.t_multipliers {
                let t = m / n as f64;
                match exp_moment_from_statistics(fluct, beta, n, t) {
                    Ok(em) => rows.push(FluctRow {
                        n,
                        beta,
                        t,
                        estimate: em.estimate,
                        stderr: em.stderr,
                        top_share: em.top_share,
                        heavy_tail: em.heavy_tail,
                    }),
                    Err(e) => errors.push(run_error(n, beta, None, &e)),
                }
            }
            let mut sorted = fluct.clone();
            sorted.sort_by(f64::total_cmp);
            summary.push(FluctSummary {
                n,
                beta,
                samples: fluct.len(),
                mean: mean(fluct),
                variance: variance(fluct),
                quantiles: [quantile(&sorted, 0.01), quantile(&sorted, 0.5), quantile(&sorted, 0.99)],
            });
        }
    }
    let mut csv = String::from("N,beta,t,estimate,stderr\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.n, r.beta, r.t, r.estimate, r.stderr));
    }
    let mut record = ExperimentRecord::new("fluctscan", config, Results::Fluctscan { rows, summary });
    record.tables.insert("fluctscan.csv".into(), csv);
    record.errors = errors;
    record.timings = clock.timings;
    Ok(record)
}

/// Transport solve and master-equation residual for each test function at
/// each resolution.
pub fn run_transport_verify(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let pool = worker_pool(config)?;
    let mut clock = Stopwatch::new();
    let specs: Vec<(String, TestFunctionSpec)> = config
        .test_functions
        .iter()
        .map(|s| Ok((s.clone(), TestFunctionSpec::parse(s)?)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut previous: BTreeMap<String, f64> = BTreeMap::new();
    pool.install(|| -> Result<()> {
        for &m in &config.transport_resolutions {
            let eq = cached_equilibrium(config, m)?;
            clock.lap(&format!("equilibrium M = {m}"));
            let h = eq.grid.spacing();
            for (name, spec) in &specs {
                let mut row = TransportRow {
                    function: name.clone(),
                    m,
                    h,
                    status: "ok".into(),
                    c_xi: None,
                    residual_stddev: None,
                    residual_max: None,
                    nodes: None,
                    lipschitz: None,
                    ratio: None,
                    psi_error: None,
                };
                let solved = spec.build(&eq).and_then(|xi| {
                    let tf = transport_solve(&eq, &xi)?;
                    let stats = master_equation_residual(&eq, &xi, &tf)?;
                    Ok((tf, stats))
                });
                match solved {
                    Ok((tf, stats)) => {
                        row.c_xi = Some(tf.c_xi);
                        row.residual_stddev = Some(stats.stddev);
                        row.residual_max = Some(stats.max_abs);
                        row.nodes = Some(stats.nodes);
                        row.lipschitz = Some(tf.lipschitz);
                        row.ratio = previous.get(name).map(|p| stats.stddev / p);
                        previous.insert(name.clone(), stats.stddev);
                        if *spec == TestFunctionSpec::HalfSquare && config.potential.trim() == "quadratic" {
                            let err = (0..eq.grid.len())
                                .filter(|&i| eq.support_mask[i])
                                .map(|i| {
                                    let p = eq.grid.node_at(i);
                                    let v = tf.psi.values[i];
                                    (v[0] + 0.5 * p.x).hypot(v[1] + 0.5 * p.y)
                                })
                                .fold(0.0, f64::max);
                            row.psi_error = Some(err);
                        }
                    }
                    Err(e @ LabError::Incompatible { .. }) => {
                        row.status = format!("incompatible: {e}");
                        previous.remove(name);
                    }
                    Err(e) => {
                        row.status = format!("error: {e}");
                        previous.remove(name);
                    }
                }
                rows.push(row);
            }
            clock.lap(&format!("transport M = {m}"));
        }
        Ok(())
    })?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut csv = String::from(
        "function,M,h,status,c_xi,residual_stddev,residual_max,nodes,lipschitz,ratio,psi_error\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},\"{}\",{},{},{},{},{},{},{}\n",
            r.function,
            r.m,
            r.h,
            r.status.replace('"', "'"),
            opt(r.c_xi),
            opt(r.residual_stddev),
            opt(r.residual_max),
            r.nodes.map_or(String::new(), |n| n.to_string()),
            opt(r.lipschitz),
            opt(r.ratio),
            opt(r.psi_error),
        ));
    }
    let mut record = ExperimentRecord::new("transport", config, Results::Transport { rows });
    record.tables.insert("transport.csv".into(), csv);
    record.timings = clock.timings;
    Ok(record)
}

/// Normalised exponential measures of the potential field for each `γ`.
pub fn run_gmc(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let pool = worker_pool(config)?;
    let mut clock = Stopwatch::new();
    let eq = cached_equilibrium(config, config.equilibrium_resolution)?;
    check_disk(config, &eq)?;
    clock.lap("equilibrium");
    let results: Vec<_> = pool.install(|| {
        tasks(config)
            .into_par_iter()
            .map(|(n, beta, chain)| {
                let out = (|| -> Result<Vec<GmcRow>> {
                    let draws = draw_chain(config, &eq, n, beta, chain, plan(config, beta, false)?)?;
                    let per_sample: Vec<Vec<GmcRow>> = draws
                        .configurations
                        .par_iter()
                        .enumerate()
                        .map(|(s, (conf, _))| {
                            let field = field_for(config, &eq, conf)?;
                            config
                                .gammas
                                .iter()
                                .map(|&gamma| {
                                    let m = gmc_measure(&field, gamma)?;
                                    Ok(GmcRow {
                                        n,
                                        beta,
                                        chain,
                                        sample: s,
                                        gamma,
                                        total: m.total(),
                                        weighted_mean_pot: m.weighted_mean(&field.values),
                                        max_weight: m.weights.iter().copied().fold(0.0, f64::max),
                                    })
                                })
                                .collect()
                        })
                        .collect::<Result<_>>()?;
                    Ok(per_sample.into_iter().flatten().collect())
                })();
                ((n, beta, chain), out)
            })
            .collect()
    });
    clock.lap("sampling and fields");
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for ((n, beta, chain), out) in results {
        match out {
            Ok(r) => rows.extend(r),
            Err(e) => errors.push(run_error(n, beta, Some(chain), &e)),
        }
    }
    let mut csv = String::from("N,beta,chain,sample,gamma,total,weighted_mean_pot,max_weight\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.n, r.beta, r.chain, r.sample, r.gamma, r.total, r.weighted_mean_pot, r.max_weight
        ));
    }
    let mut record = ExperimentRecord::new("gmc", config, Results::Gmc { rows });
    record.tables.insert("gmc.csv".into(), csv);
    record.errors = errors;
    record.timings = clock.timings;
    Ok(record)
}
