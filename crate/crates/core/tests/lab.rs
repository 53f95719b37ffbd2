use std::path::Path;
use std::process::Command;

use coulomb_lab::lab::*;

fn small(dir: &Path) -> ExperimentConfig {
    let text = format!(
        "ns = 16, 32\nseeds = 3, 4\nsamples = 3\nequilibrium_resolution = 65\nfield_resolution = 9\n\
         disk_radius = 0.3\ncache_dir = {}\n",
        dir.join("cache").display()
    );
    let mut c = ExperimentConfig::parse(&text).unwrap();
    c.output_dir = dir.join("out");
    c
}

#[test]
fn config_files_and_overrides_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lab.conf");
    std::fs::write(&path, "# scan\nns = 64\nbetas = 2, 4\n").unwrap();
    let mut c = ExperimentConfig::load(&path).unwrap();
    c.set("disk-radius", "0.2").unwrap();
    assert_eq!(c.ns, vec![64]);
    assert_eq!(c.betas, vec![2.0, 4.0]);
    assert_eq!(c.disk_radius, 0.2);
    assert_eq!(c.echo(), "# scan\nns = 64\nbetas = 2, 4\ndisk_radius = 0.2\n");
    let resolved = c.resolved();
    for key in CONFIG_KEYS {
        assert!(resolved.contains_key(*key), "missing {key}");
    }
    assert!(c.set("no_such_key", "1").is_err());
    assert!(c.set("ns", "-3").is_err());
    assert!(ExperimentConfig::load(dir.path().join("missing.conf")).is_err());
}

#[test]
fn maxscan_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    let a = run_maxscan(&c).unwrap();
    let b = run_maxscan(&c).unwrap();
    assert!(a.errors.is_empty());
    assert_eq!(a.tables, b.tables);
    let csv = &a.tables["maxscan.csv"];
    assert!(csv.starts_with("N,beta,chain,sample,maxpot,maxpot_over_logN\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
    assert!(a.tables["maxscan_summary.csv"].starts_with("N,beta,samples,median_maxpot"));

    let mut other = c.clone();
    other.seeds = vec![5, 4];
    let d = run_maxscan(&other).unwrap();
    let chain = |t: &str, k: &str| {
        t.lines()
            .skip(1)
            .filter(|l| l.split(',').nth(2) == Some(k))
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_ne!(chain(csv, "0"), chain(&d.tables["maxscan.csv"], "0"));
    assert_eq!(chain(csv, "1"), chain(&d.tables["maxscan.csv"], "1"));
}

#[test]
fn failing_runs_do_not_abort_their_siblings() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.sampler = SamplerChoice::Exact;
    c.betas = vec![2.0, 4.0];
    let r = run_maxscan(&c).unwrap();
    assert_eq!(r.errors.len(), 2 * 2);
    assert!(r.errors.iter().all(|e| e.beta == 4.0 && e.chain.is_some()));
    let csv = &r.tables["maxscan.csv"];
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("2")));
    let json = r.to_json().unwrap();
    assert!(json.contains("\"errors\""));
}

#[test]
fn records_and_cache_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    let r = run_equilibrium(&c).unwrap();
    let written = r.write(&c.output_dir).unwrap();
    assert!(written.iter().any(|p| p.ends_with("equilibrium.csv")));
    assert!(written.iter().any(|p| p.ends_with("equilibrium.json")));
    let csv = std::fs::read_to_string(c.output_dir.join("equilibrium.csv")).unwrap();
    assert!(csv.starts_with("x,y,density,h0,zeta\n"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(c.output_dir.join("equilibrium.json")).unwrap()).unwrap();
    assert_eq!(json["kind"], "equilibrium");
    assert_eq!(json["config_echo"], c.echo());
    let cached: Vec<_> = std::fs::read_dir(c.cache_directory())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(cached.iter().any(|f| f.starts_with("eq-quadratic-65-") && f.ends_with(".eqm")), "{cached:?}");
    // A second run reads the cache and reproduces the table.
    assert_eq!(run_equilibrium(&c).unwrap().tables, r.tables);
}

#[test]
fn sample_field_gmc_fluct_and_transport_drivers() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.betas = vec![2.0, 4.0];
    c.ns = vec![16];
    c.seeds = vec![1];
    c.chain.n_steps = 60;
    c.chain.burn_in = 20;
    c.chain.thinning = 20;
    let (rec, sets) = run_sample(&c).unwrap();
    assert!(rec.errors.is_empty());
    assert_eq!(sets.len(), 2);
    assert!(rec.tables["samples.csv"].lines().count() > 1);

    let field = run_field(&c).unwrap();
    assert!(field.tables["field.csv"].starts_with("x,y,pot,excluded\n"));

    let gmc = run_gmc(&c).unwrap();
    assert!(gmc.tables["gmc.csv"].starts_with("N,beta,chain,sample,gamma,total,weighted_mean_pot,max_weight\n"));

    c.betas = vec![2.0];
    c.sampler = SamplerChoice::Moduli;
    c.samples = 20;
    let fl = run_fluctscan(&c).unwrap();
    assert!(fl.errors.is_empty());
    let csv = &fl.tables["fluctscan.csv"];
    assert!(csv.starts_with("N,beta,t,estimate,stderr\n"));
    assert_eq!(csv.lines().count(), 1 + c.t_multipliers.len());

    c.transport_resolutions = vec![65];
    c.test_functions = vec!["const:1".into(), "half_square".into()];
    let tr = run_transport_verify(&c).unwrap();
    let csv = &tr.tables["transport.csv"];
    assert!(csv.starts_with("function,M,h,status,c_xi,residual_stddev"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn disk_outside_the_droplet_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.disk_center = coulomb_lab::Point::new(0.9, 0.0);
    assert!(run_maxscan(&c).is_err());
}

#[test]
fn cli_writes_outputs_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cli");
    let status = Command::new(env!("CARGO_BIN_EXE_coulomb-lab"))
        .args(["equilibrium", "--set", "equilibrium_resolution=65", "--output-dir"])
        .arg(&out)
        .arg("--cache-dir")
        .arg(dir.path().join("cache"))
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(out.join("equilibrium.csv").exists());
    assert!(out.join("equilibrium.json").exists());

    let bad = Command::new(env!("CARGO_BIN_EXE_coulomb-lab"))
        .args(["maxscan", "--set", "potential=cubic", "--output-dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("cubic"));
}
