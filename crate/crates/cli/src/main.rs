#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvlab::bessel::{h_norm, GriddedFunction};
use mvlab::experiments::*;
use mvlab::interpolation::{solve_parameters, ParameterChoice};
use mvlab::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "mvlab", version = mvlab::VERSION, about = "Particle-system experiments and Bessel potential norms")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for tables and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Compare fitted exponents with their tolerances; exit 4 on failure.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replication 0 and report moments and exit fractions.
    Simulate,
    /// Displacement, mixture-norm and error-norm rates in ε.
    Rates,
    /// Density estimates and their stability in n.
    Emergence,
    /// Time regularity of the marginals and of the frozen particles.
    Modulus,
    /// Interpolation parameters for (d, β), solved or from fixed exponents.
    Params {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, requires = "s")]
        r_conj: Option<f64>,
        #[arg(long, requires = "r_conj")]
        s: Option<f64>,
    },
    /// H^s_r norm of a stored grid function.
    Norm {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        s: f64,
        #[arg(long)]
        r: f64,
    },
}

enum Failure {
    Run(Error),
    Check(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

#[derive(Serialize)]
struct NormOutput {
    s: f64,
    r: f64,
    norm: f64,
}

fn scenario(g: &Global) -> Result<ScenarioConfig, Error> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this subcommand needs --config FILE".into()))?;
    let mut c =
        ScenarioConfig::load(path).map_err(|e| Error::Config(format!("cannot load {}: {e}", path.display())))?;
    if let Some(seed) = g.seed {
        c.seed = seed;
    }
    if let Some(out) = &g.out {
        c.output_dir = Some(out.clone());
    }
    c.validate()?;
    Ok(c)
}

fn within(failures: &mut Vec<String>, what: &str, value: Option<f64>, target: f64, tol: f64) {
    match value {
        Some(v) if (v - target).abs() <= tol => {}
        Some(v) => failures.push(format!("{what}: slope {v:.4} outside {target:.4} ± {tol}")),
        None => failures.push(format!("{what}: no fit")),
    }
}

fn check_rates(r: &RateReport) -> Vec<String> {
    let p = &r.params;
    let mut f = Vec::new();
    for at in &r.per_t {
        let t = at.t;
        if let Some(s) = &at.displacement {
            within(
                &mut f,
                &format!("displacement at t={t}"),
                s.fit.slope(),
                (1.0 + p.beta) / 2.0,
                0.1,
            );
        }
        if let Some(s) = &at.mixture_norm {
            let target = -(p.d as f64 / p.r_conj + p.s) / 2.0;
            within(&mut f, &format!("mixture norm at t={t}"), s.fit.slope(), target, 0.1);
        }
        if let Some(s) = &at.error_norm {
            let floor = (1.0 + p.xi) / 2.0 - 0.05;
            match s.fit.slope() {
                Some(v) if v >= floor => {}
                v => f.push(format!("error norm at t={t}: slope {v:?} below {floor:.4}")),
            }
        }
    }
    f
}

fn check_modulus(r: &ModulusReport) -> Vec<String> {
    let mut f = Vec::new();
    within(
        &mut f,
        "frozen-particle modulus",
        r.y_increment.fit.slope(),
        r.y_target,
        0.1,
    );
    within(&mut f, "measure modulus", r.measure.fit.slope(), r.measure_target, 0.12);
    f
}

fn check_emergence(r: &EmergenceReport) -> Vec<String> {
    let mut f = Vec::new();
    for at in &r.per_t {
        if let Some(l1) = at.control_l1 {
            if !(l1 < 0.05) {
                f.push(format!("L1 distance at t={} is {l1:.4}, not below 0.05", at.t));
            }
        }
    }
    if let Some(ratio) = r.stability_ratio {
        if !(ratio < 3.0) {
            f.push(format!("norm ratio across n is {ratio:.3}, not below 3"));
        }
    }
    f
}

fn check_simulation(r: &SimulationReport) -> Vec<String> {
    r.exit
        .iter()
        .filter(|e| e.fraction > e.bound)
        .map(|e| {
            format!(
                "exit fraction {:.4} above bound {:.4} at K={}",
                e.fraction, e.bound, e.half_width
            )
        })
        .collect()
}

fn emit<T: Serialize>(report: &T, failures: Vec<String>, check: bool) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(report).map_err(Error::from)?);
    if check && !failures.is_empty() {
        return Err(Failure::Check(failures));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    let threads = g.threads;
    match cli.command {
        Command::Params { d, beta, r_conj, s } => {
            let p = match (r_conj, s) {
                (Some(r_conj), Some(s)) => ParameterChoice::from_exponents(d, beta, r_conj, s)?,
                _ => solve_parameters(d, beta)?,
            };
            println!("{}", p.to_json()?);
            Ok(())
        }
        Command::Norm { grid, s, r } => {
            let f = GriddedFunction::load(&grid)
                .map_err(|e| Error::Config(format!("cannot load {}: {e}", grid.display())))?;
            let norm = with_threads(threads, || h_norm(&f, s, r))??;
            emit(&NormOutput { s, r, norm }, Vec::new(), false)
        }
        Command::Simulate => {
            let c = scenario(g)?;
            let r = with_threads(threads, || run_simulation(&c))??;
            emit(&r, check_simulation(&r), g.check)
        }
        Command::Rates => {
            let c = scenario(g)?;
            let r = with_threads(threads, || run_rate_experiment(&c))??;
            emit(&r, check_rates(&r), g.check)
        }
        Command::Emergence => {
            let c = scenario(g)?;
            let r = with_threads(threads, || run_emergence_experiment(&c))??;
            emit(&r, check_emergence(&r), g.check)
        }
        Command::Modulus => {
            let c = scenario(g)?;
            let r = with_threads(threads, || run_modulus_experiment(&c))??;
            emit(&r, check_modulus(&r), g.check)
        }
    }
}

fn main() -> ExitCode {
    // clap reports usage errors with exit code 2
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
        Err(Failure::Check(failures)) => {
            for f in failures {
                eprintln!("check failed: {f}");
            }
            ExitCode::from(4)
        }
    }
}
