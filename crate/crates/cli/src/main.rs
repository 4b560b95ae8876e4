//! `obslab`: experiment configs in, JSON and CSV reports out.

mod config;

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use obslab_core::classical::{default_shells, kfrak_estimate};
use obslab_core::flow::{default_dt, integrate_flow, HarmonicModes, PhasePoint, Trajectory};
use obslab_core::oscillator::{
    classify_spherical, convergents, critical_trajectory, lambda_of_mu, OscillatorSpec, Rationality,
};
use obslab_core::potential::PotentialSpec;
use obslab_core::quantum::{band_gramian, band_report, matrix_dump, HermiteBasis};
use obslab_core::sets::{kappa_star, kappa_star_scan, IntervalUnion, KappaGrid};
use serde_json::{json, Value};

use config::{load_json, parse_floats, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "obslab",
    version,
    about = "Observability experiments for confining potentials"
)]
struct Cli {
    /// Worker threads; OBSLAB_THREADS overrides this flag.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Hamiltonian trajectory as CSV.
    Flow(FlowArgs),
    /// Minimal time spent in the set over energy shells, as JSON.
    Kfrak(KfrakArgs),
    /// Observability of a spherical set for a planar oscillator, as JSON.
    Classify(ClassifyArgs),
    /// Band-limited Gramian floor of a harmonic oscillator, as JSON.
    Gramian(GramianArgs),
    /// Density threshold at infinity of a union of radii, as JSON.
    Kappa(KappaArgs),
    /// Optimal radial aspect ratio for a frequency ratio, as JSON.
    Lambda(LambdaArgs),
    /// Continued-fraction convergents of a frequency ratio, as JSON.
    Convergents(ConvergentArgs),
}

#[derive(Args)]
struct FlowArgs {
    /// Potential JSON, inline or as a file path.
    #[arg(long)]
    potential: Option<String>,
    /// Initial point `x1,..,xd,xi1,..,xid`.
    #[arg(long)]
    rho0: Option<String>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Sample the exact flow instead of integrating (harmonic potentials only).
    #[arg(long)]
    exact: bool,
    /// One period of the extremal trajectory for `nu2:nu1 = p:q`.
    #[arg(long, conflicts_with_all = ["potential", "rho0"])]
    lissajous: Option<String>,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KfrakArgs {
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Frequencies `nu1,nu2`.
    #[arg(long)]
    freqs: String,
    /// Union of radii JSON, inline or as a file path.
    #[arg(long)]
    radii: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GramianArgs {
    #[arg(long)]
    config: String,
    /// Also estimate the classical constant from the config's potential and shells.
    #[arg(long)]
    with_classical: bool,
    /// Binary dump of the band Gramian.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KappaArgs {
    #[arg(long)]
    radii: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LambdaArgs {
    /// Ratio `p:q` or a decimal value of `nu2 / nu1`.
    #[arg(long)]
    mu: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergentArgs {
    #[arg(long)]
    mu: f64,
    #[arg(long, default_value_t = 12)]
    count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum CliError {
    Config(String),
    Numerical(obslab_core::Error),
    Io(std::io::Error),
}

impl From<obslab_core::Error> for CliError {
    fn from(e: obslab_core::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e)
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = std::env::var("OBSLAB_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .or(cli.threads);
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let res = match cli.command {
        Command::Flow(a) => cmd_flow(a),
        Command::Kfrak(a) => cmd_kfrak(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Gramian(a) => cmd_gramian(a),
        Command::Kappa(a) => cmd_kappa(a),
        Command::Lambda(a) => cmd_lambda(a),
        Command::Convergents(a) => cmd_convergents(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("obslab: configuration error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(e)) => {
            eprintln!("obslab: numerical error: {e}");
            ExitCode::from(3)
        }
        Err(CliError::Io(e)) => {
            eprintln!("obslab: {e}");
            ExitCode::from(1)
        }
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Wraps a report with the command name, a hash of its inputs and the tolerances used.
fn envelope(command: &str, inputs: &Value, tolerances: Value, report: Value) -> String {
    let mut text = serde_json::to_string_pretty(&json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config::hash(inputs),
        "tolerances": tolerances,
        "report": report,
    }))
    .expect("reports serialize");
    text.push('\n');
    text
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn parse_ratio(s: &str) -> CliResult<(u64, u64)> {
    let Some((p, q)) = s.split_once(':') else {
        return config_err(format!("ratio {s:?} is not of the form p:q"));
    };
    let (Ok(p), Ok(q)) = (p.trim().parse::<u64>(), q.trim().parse::<u64>()) else {
        return config_err(format!("ratio {s:?} is not of the form p:q"));
    };
    if p == 0 || q == 0 {
        return config_err(format!("ratio {s:?} needs positive integers"));
    }
    Ok((p, q))
}

fn cmd_flow(a: FlowArgs) -> CliResult<()> {
    if let Some(r) = &a.lissajous {
        let (p, q) = parse_ratio(r)?;
        let g = num_gcd(p, q);
        let (p, q) = (p / g, q / g);
        let spec = PotentialSpec::harmonic_diag(&[q as f64, p as f64]);
        // nu1 = q and nu2 = p close up after 2 pi
        let rho0 = if p == q {
            PhasePoint::from_flat(&[0.0, 0.0, 1.0, 0.5]).map_err(CliError::from)?
        } else {
            critical_trajectory(p, q, q as f64)?.initial_point()
        };
        let horizon = 2.0 * PI;
        let n = a.samples.max(1);
        let traj = sample_exact(&spec, &rho0, horizon, n)?;
        return emit(&a.out, &traj.to_csv(&spec));
    }
    let Some(pot) = &a.potential else {
        return config_err("flow needs --potential or --lissajous");
    };
    let spec: PotentialSpec = load_json(pot)?;
    spec.validate()?;
    let Some(rho) = &a.rho0 else {
        return config_err("flow needs --rho0");
    };
    let rho0 = PhasePoint::from_flat(&parse_floats(rho)?)?;
    if rho0.dim() != spec.dim() {
        return config_err(format!(
            "rho0 has dimension {}, potential {}",
            rho0.dim(),
            spec.dim()
        ));
    }
    let Some(horizon) = a.horizon else {
        return config_err("flow needs --T");
    };
    if !horizon.is_finite() {
        return config_err("--T must be finite");
    }
    let dt = a.dt.unwrap_or_else(|| default_dt(&spec));
    if !(dt > 0.0) {
        return config_err("--dt must be positive");
    }
    let traj = if a.exact {
        let n = (horizon.abs() / dt).ceil().max(1.0) as usize;
        sample_exact(&spec, &rho0, horizon, n)?
    } else {
        integrate_flow(&spec, &rho0, horizon, dt)?
    };
    emit(&a.out, &traj.to_csv(&spec))
}

fn num_gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        num_gcd(b, a % b)
    }
}

fn sample_exact(
    spec: &PotentialSpec,
    rho0: &PhasePoint,
    horizon: f64,
    n: usize,
) -> CliResult<Trajectory> {
    let modes = HarmonicModes::new(spec)?;
    let times: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    let points = times.iter().map(|&t| modes.flow(rho0, t)).collect();
    Ok(Trajectory {
        times,
        points,
        energy0: obslab_core::flow::hamiltonian(spec, rho0),
    })
}

fn cmd_kfrak(a: KfrakArgs) -> CliResult<()> {
    let mut cfg: ExperimentConfig = load_json(&a.config)?;
    if let Some(s) = a.seed {
        cfg.kfrak.seed = s;
    }
    if let Some(s) = a.seeds {
        cfg.kfrak.seeds = s;
    }
    let spec = cfg.require_potential()?;
    let set = cfg.require_set()?;
    let horizon = cfg.require_horizon()?;
    let shells = cfg.shells.clone().unwrap_or_else(default_shells);
    let rep = kfrak_estimate(spec, set, horizon, &shells, cfg.kfrak)?;
    let text = envelope(
        "kfrak",
        &to_value(&cfg),
        json!({ "crossing_bisection_relative": 1e-10, "energy_jump_relative": 1e-2 }),
        to_value(&rep),
    );
    emit(&a.out.or(cfg.output.and_then(|o| o.report)), &text)
}

fn cmd_classify(a: ClassifyArgs) -> CliResult<()> {
    let freqs = parse_floats(&a.freqs)?;
    let spec = OscillatorSpec::new(freqs.clone())?;
    let radii: IntervalUnion = load_json(&a.radii)?;
    radii.validate()?;
    let rep = classify_spherical(&spec, &radii)?;
    let inputs = json!({ "freqs": freqs, "radii": to_value(&radii) });
    let text = envelope(
        "classify",
        &inputs,
        json!({ "rationality_tol": 1e-12, "rationality_q_max": 10_000 }),
        to_value(&rep),
    );
    emit(&a.out, &text)
}

fn cmd_gramian(a: GramianArgs) -> CliResult<()> {
    let cfg: ExperimentConfig = load_json(&a.config)?;
    let Some(q) = &cfg.quantum else {
        return config_err("gramian needs a quantum section");
    };
    let set = cfg.require_set()?;
    let basis = HermiteBasis::new(q.nu.clone(), q.n)?;
    let mut rep = band_report(&basis, set, q.horizon, q.band)?;
    if a.with_classical {
        let spec = cfg.require_potential()?;
        let shells = cfg.shells.clone().unwrap_or_else(default_shells);
        let k = kfrak_estimate(spec, set, q.horizon, &shells, cfg.kfrak)?;
        rep.classical_k = Some(k.estimate);
    }
    if let Some(path) = &a.dump {
        let (_, g) = band_gramian(&basis, set, q.horizon, q.band)?;
        std::fs::write(path, matrix_dump(&basis, q.horizon, q.band, &g))?;
    }
    let text = envelope(
        "gramian",
        &to_value(&cfg),
        json!({
            "quadrature_doubling": obslab_core::quantum::RESOLUTION_TOL,
            "coherent_mass": obslab_core::quantum::MASS_TOL,
            "band_edge_fraction": 0.8,
        }),
        to_value(&rep),
    );
    emit(&a.out.or(cfg.output.and_then(|o| o.report)), &text)
}

fn cmd_kappa(a: KappaArgs) -> CliResult<()> {
    let radii: IntervalUnion = load_json(&a.radii)?;
    radii.validate()?;
    let closed = kappa_star(&radii)?;
    let grid = KappaGrid::default();
    let scan = kappa_star_scan(&radii, grid)?;
    let text = envelope(
        "kappa",
        &to_value(&radii),
        to_value(&grid),
        json!({ "closed_form": to_value(&closed), "scan": to_value(&scan) }),
    );
    emit(&a.out, &text)
}

fn cmd_lambda(a: LambdaArgs) -> CliResult<()> {
    let r = match parse_ratio(&a.mu) {
        Ok((p, q)) => {
            let g = num_gcd(p, q);
            Rationality::Rational { p: p / g, q: q / g }
        }
        Err(_) => {
            let mu: f64 =
                a.mu.parse()
                    .map_err(|_| CliError::Config(format!("cannot read {:?} as a ratio", a.mu)))?;
            OscillatorSpec::new(vec![1.0, mu])?
                .rationality
                .ok_or_else(|| CliError::Config("ratio must be positive".into()))?
        }
    };
    let text = envelope(
        "lambda",
        &json!({ "mu": a.mu }),
        json!({ "rationality_tol": 1e-12, "rationality_q_max": 10_000 }),
        json!({ "rationality": to_value(&r), "lambda": lambda_of_mu(r) }),
    );
    emit(&a.out, &text)
}

fn cmd_convergents(a: ConvergentArgs) -> CliResult<()> {
    if !(a.mu > 0.0 && a.mu.is_finite()) {
        return config_err("--mu must be positive");
    }
    let list = convergents(a.mu, a.count)?;
    let text = envelope(
        "convergents",
        &json!({ "mu": a.mu, "count": a.count }),
        json!({ "precision_budget": 1e-4 }),
        to_value(&list),
    );
    emit(&a.out, &text)
}
