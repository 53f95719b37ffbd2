use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coulomb_lab::lab::{self, ExperimentConfig, ExperimentRecord};
use coulomb_lab::Result;

/// Numerical laboratory for the two-dimensional Coulomb gas.
#[derive(Parser)]
#[command(name = "coulomb-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the equilibrium measure and tabulate density, h0 and ζ.
    Equilibrium(ConfigArgs),
    /// Draw configurations and store them as CGS1 files.
    Sample(ConfigArgs),
    /// Potential field of one configuration on the disk.
    Field(ConfigArgs),
    /// Disk maxima of the potential field over N, β and seeds.
    Maxscan(ConfigArgs),
    /// Exponential moments of a zero-mean linear statistic.
    Fluctscan(ConfigArgs),
    /// Transport solve and master-equation residual across resolutions.
    Transport(ConfigArgs),
    /// Normalised exponential measures of the potential field.
    Gmc(ConfigArgs),
}

/// Each flag overrides the configuration key of the same name.
#[derive(Args)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the named flags.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// `quadratic`, `quartic` or `grid:<path>`.
    #[arg(long)]
    potential: Option<String>,
    /// Inverse temperatures, comma separated.
    #[arg(long)]
    betas: Option<String>,
    /// Particle counts, comma separated.
    #[arg(long)]
    ns: Option<String>,
    /// One chain per seed.
    #[arg(long)]
    seeds: Option<String>,
    /// Exact draws per chain.
    #[arg(long)]
    samples: Option<String>,
    /// `auto`, `exact`, `moduli` or `mcmc`.
    #[arg(long)]
    sampler: Option<String>,
    /// `hessenberg` or `dense`.
    #[arg(long)]
    ginibre_method: Option<String>,
    /// Initial MCMC step size.
    #[arg(long)]
    step_size: Option<String>,
    /// MCMC sweeps.
    #[arg(long)]
    n_steps: Option<String>,
    /// Sweeps discarded before recording.
    #[arg(long)]
    burn_in: Option<String>,
    /// Sweeps between recorded configurations.
    #[arg(long)]
    thinning: Option<String>,
    /// `metropolis` or `langevin`.
    #[arg(long)]
    proposal: Option<String>,
    /// Adapt the step size during burn-in.
    #[arg(long)]
    tune: Option<String>,
    /// Disk centre as `x,y`.
    #[arg(long, alias = "center", allow_hyphen_values = true)]
    disk_center: Option<String>,
    /// Disk radius.
    #[arg(long, alias = "radius")]
    disk_radius: Option<String>,
    /// Nodes per side of the disk grid.
    #[arg(long, alias = "resolution")]
    field_resolution: Option<String>,
    /// Exclusion radius around particles, or `auto`.
    #[arg(long)]
    delta: Option<String>,
    /// Mollification scales.
    #[arg(long, alias = "epsilon")]
    epsilons: Option<String>,
    /// GMC exponents.
    #[arg(long, alias = "gamma", allow_hyphen_values = true)]
    gammas: Option<String>,
    /// Values of `t N` for the fluctuation scan.
    #[arg(long, allow_hyphen_values = true)]
    t_multipliers: Option<String>,
    /// Support radius of the smoothed logarithm.
    #[arg(long)]
    smoothing_radius: Option<String>,
    /// Obstacle grid nodes per side.
    #[arg(long)]
    equilibrium_resolution: Option<String>,
    /// Half-width of the obstacle box, or `auto`.
    #[arg(long)]
    equilibrium_half_width: Option<String>,
    /// Grid sizes for the transport check.
    #[arg(long)]
    transport_resolutions: Option<String>,
    /// `half_square`, `const:c`, `bump:x:y:r` or `log:x:y:r`.
    #[arg(long, allow_hyphen_values = true)]
    test_functions: Option<String>,
    /// Directory for tables and the JSON record.
    #[arg(short, long)]
    output_dir: Option<String>,
    /// Reuse equilibrium solves from the cache.
    #[arg(long)]
    cache: Option<String>,
    /// Cache location, default `<output_dir>/cache`.
    #[arg(long)]
    cache_dir: Option<String>,
    /// Worker threads, or `auto`.
    #[arg(long)]
    threads: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let named = [
            ("potential", &self.potential),
            ("betas", &self.betas),
            ("ns", &self.ns),
            ("seeds", &self.seeds),
            ("samples", &self.samples),
            ("sampler", &self.sampler),
            ("ginibre_method", &self.ginibre_method),
            ("step_size", &self.step_size),
            ("n_steps", &self.n_steps),
            ("burn_in", &self.burn_in),
            ("thinning", &self.thinning),
            ("proposal", &self.proposal),
            ("tune", &self.tune),
            ("disk_center", &self.disk_center),
            ("disk_radius", &self.disk_radius),
            ("field_resolution", &self.field_resolution),
            ("delta", &self.delta),
            ("epsilons", &self.epsilons),
            ("gammas", &self.gammas),
            ("t_multipliers", &self.t_multipliers),
            ("smoothing_radius", &self.smoothing_radius),
            ("equilibrium_resolution", &self.equilibrium_resolution),
            ("equilibrium_half_width", &self.equilibrium_half_width),
            ("transport_resolutions", &self.transport_resolutions),
            ("test_functions", &self.test_functions),
            ("output_dir", &self.output_dir),
            ("cache", &self.cache),
            ("cache_dir", &self.cache_dir),
            ("threads", &self.threads),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| coulomb_lab::LabError::Config(format!("expected KEY=VALUE, got '{kv}'")))?;
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn finish(record: &ExperimentRecord, config: &ExperimentConfig) -> Result<()> {
    for path in record.write(&config.output_dir)? {
        println!("wrote {}", path.display());
    }
    for e in &record.errors {
        eprintln!("run N = {}, beta = {} failed: {}", e.n, e.beta, e.message);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Equilibrium(args) => {
            let config = args.resolve()?;
            finish(&lab::run_equilibrium(&config)?, &config)
        }
        Command::Sample(args) => {
            let config = args.resolve()?;
            let (record, sets) = lab::run_sample(&config)?;
            std::fs::create_dir_all(&config.output_dir)?;
            for (name, set) in &sets {
                let path = config.output_dir.join(name);
                set.save(&path)?;
                println!("wrote {}", path.display());
            }
            finish(&record, &config)
        }
        Command::Field(args) => {
            let config = args.resolve()?;
            finish(&lab::run_field(&config)?, &config)
        }
        Command::Maxscan(args) => {
            let config = args.resolve()?;
            let record = lab::run_maxscan(&config)?;
            print!("{}", record.tables["maxscan_summary.csv"]);
            finish(&record, &config)
        }
        Command::Fluctscan(args) => {
            let config = args.resolve()?;
            let record = lab::run_fluctscan(&config)?;
            print!("{}", record.tables["fluctscan.csv"]);
            finish(&record, &config)
        }
        Command::Transport(args) => {
            let config = args.resolve()?;
            let record = lab::run_transport_verify(&config)?;
            print!("{}", record.tables["transport.csv"]);
            finish(&record, &config)
        }
        Command::Gmc(args) => {
            let config = args.resolve()?;
            finish(&lab::run_gmc(&config)?, &config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
