mod config;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amod_core::bounds::{required_samples, ErrorBudget};
use amod_core::demand::{generate_trace, RateProfile, Regime};
use amod_core::sim::{build_controller, run_scenario, wait_summary, SimStats};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "amod", version, about = "Fleet rebalancing under stochastic demand")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one controller and write stats JSON plus an epoch CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        controller: String,
        /// Stats JSON path; the epoch series goes next to it as `<stem>.timeseries.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several controllers over several seeds and write a summary CSV.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated controller names.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        controllers: Vec<String>,
        /// Comma-separated seeds or `a..b` ranges; defaults to the config seed.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the sampling and model error terms as JSON.
    Bounds {
        #[arg(long)]
        sigma: f64,
        #[arg(long = "K")]
        k: u64,
        #[arg(long)]
        n: u64,
        #[arg(long = "T")]
        t: u64,
        #[arg(long)]
        m: u64,
        #[arg(long)]
        delta: f64,
        /// Target accuracy; adds the required sample count.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Sub-exponential scale parameter reported with the budget.
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        /// File of whitespace or comma separated per-coordinate χ² values.
        #[arg(long)]
        chi: Option<PathBuf>,
        /// Variance of the demand norm, scaling the model error term.
        #[arg(long, default_value_t = 0.0)]
        var_norm: f64,
    },
    /// Write a synthetic Poisson demand trace.
    GenTrace {
        #[arg(long)]
        n: usize,
        /// Seconds covered by the trace.
        #[arg(long)]
        duration: u64,
        /// Requests per second, or the low regime rate with `--profile mixture`.
        #[arg(long)]
        rate: f64,
        #[arg(long, value_enum, default_value_t = Profile::Uniform)]
        profile: Profile,
        /// High regime rate for the mixture profile; defaults to four times `--rate`.
        #[arg(long)]
        high_rate: Option<f64>,
        /// Mixture block length in seconds.
        #[arg(long, default_value_t = 1800)]
        block_s: u64,
        /// JSON rate profile, overriding the other profile flags.
        #[arg(long)]
        profile_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in property checks.
    Selftest {
        #[arg(long, hide = true)]
        inject_integrality_fault: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Uniform,
    /// Each block draws a low or a high rate with equal probability.
    Mixture,
}

enum Failure {
    Usage(String),
    Runtime(String),
    Selftest,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Selftest => 3,
        }
    }
}

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl ToString) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate { config, controller, out } => simulate(&config, &controller, &out),
        Command::Compare {
            config,
            controllers,
            seeds,
            out,
        } => compare(&config, &controllers, seeds.as_deref(), &out),
        Command::Bounds {
            sigma,
            k,
            n,
            t,
            m,
            delta,
            epsilon,
            b,
            chi,
            var_norm,
        } => bounds(sigma, k, n, t, m, delta, epsilon, b, chi.as_deref(), var_norm),
        Command::GenTrace {
            n,
            duration,
            rate,
            profile,
            high_rate,
            block_s,
            profile_file,
            seed,
            out,
        } => gen_trace(n, duration, rate, profile, high_rate, block_s, profile_file.as_deref(), seed, &out),
        Command::Selftest { inject_integrality_fault } => selftest(inject_integrality_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("runtime error: {m}"),
                Failure::Selftest => eprintln!("selftest failed"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run_one(scenario: &config::Scenario, name: &str, seed: u64) -> Result<SimStats, Failure> {
    let mut controller = build_controller(name, &scenario.setup).map_err(usage)?;
    run_scenario(&scenario.sim, &scenario.trace, controller.as_mut(), scenario.config.horizon, seed).map_err(runtime)
}

fn simulate(config: &Path, controller: &str, out: &Path) -> Result<(), Failure> {
    let scenario = config::load(config).map_err(Failure::Usage)?;
    let stats = run_one(&scenario, controller, scenario.config.seed)?;
    stats.write_files(out, out.with_extension("timeseries.csv")).map_err(runtime)?;
    println!(
        "{controller}: mean wait {:.2}s, {} served, {} unserved",
        stats.mean_wait_s, stats.served_count, stats.unserved_count
    );
    Ok(())
}

fn parse_seeds(list: &str) -> Result<Vec<u64>, Failure> {
    let mut seeds = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|_| usage(format!("bad seed range {part:?}")))?;
            let b: u64 = b.parse().map_err(|_| usage(format!("bad seed range {part:?}")))?;
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| usage(format!("bad seed {part:?}")))?);
        }
    }
    if seeds.is_empty() {
        return Err(usage("no seeds given"));
    }
    Ok(seeds)
}

fn compare(config: &Path, controllers: &[String], seeds: Option<&str>, out: &Path) -> Result<(), Failure> {
    if controllers.is_empty() {
        return Err(usage("at least one controller is required"));
    }
    let scenario = config::load(config).map_err(Failure::Usage)?;
    let seeds = match seeds {
        Some(s) => parse_seeds(s)?,
        None => vec![scenario.config.seed],
    };
    for name in controllers {
        build_controller(name, &scenario.setup).map_err(usage)?;
    }

    // one thread per seed; results are collected in seed order
    let per_seed: Vec<Result<Vec<SimStats>, Failure>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let scenario = &scenario;
                scope.spawn(move || controllers.iter().map(|name| run_one(scenario, name, seed)).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let per_seed = per_seed.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut csv = String::from("controller,mean,median,p99,reb_tasks\n");
    for (c, name) in controllers.iter().enumerate() {
        let waits: Vec<u64> = per_seed.iter().flat_map(|runs| runs[c].waits()).collect();
        let (mean, median, p99) = wait_summary(&waits);
        let reb = per_seed.iter().map(|runs| runs[c].reb_tasks).sum::<u64>() as f64 / seeds.len() as f64;
        csv.push_str(&format!("{name},{mean},{median},{p99},{reb}\n"));
    }
    std::fs::write(out, &csv).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct BoundsReport {
    #[serde(flatten)]
    budget: ErrorBudget,
    total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    required_samples: Option<u64>,
}

#[allow(clippy::too_many_arguments)]
fn bounds(
    sigma: f64,
    k: u64,
    n: u64,
    t: u64,
    m: u64,
    delta: f64,
    epsilon: Option<f64>,
    b: f64,
    chi: Option<&Path>,
    var_norm: f64,
) -> Result<(), Failure> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(usage(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    let chi: Vec<f64> = match chi {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| usage(format!("bad χ² value {s:?}"))))
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let budget = ErrorBudget::compute(sigma * sigma, b, k, n, t, m, delta, &chi, var_norm).map_err(usage)?;
    let required = epsilon.map(|e| required_samples(e, sigma, n, t, m, delta)).transpose().map_err(usage)?;
    let report = BoundsReport {
        total: budget.total(),
        budget,
        epsilon,
        required_samples: required,
    };
    println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gen_trace(
    n: usize,
    duration: u64,
    rate: f64,
    profile: Profile,
    high_rate: Option<f64>,
    block_s: u64,
    profile_file: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    if duration == 0 {
        return Err(usage("duration must be positive"));
    }
    let profile = match (profile_file, profile) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        (None, Profile::Uniform) => RateProfile::Uniform { rate_per_s: rate },
        (None, Profile::Mixture) => {
            let regime = |rate_per_s| Regime {
                weight: 0.5,
                rate_per_s,
                origin_weights: Vec::new(),
                dest_weights: Vec::new(),
            };
            RateProfile::Mixture {
                block_s,
                regimes: vec![regime(rate), regime(high_rate.unwrap_or(4.0 * rate))],
            }
        }
    };
    let trace = generate_trace(n, duration, &profile, seed).map_err(usage)?;
    trace.write_csv(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    println!("{} trips written to {}", trace.len(), out.display());
    Ok(())
}

fn selftest(inject_fault: bool) -> Result<(), Failure> {
    let checks = selftest::run(inject_fault);
    for c in &checks {
        println!("{}", c.line());
    }
    if checks.iter().all(selftest::Check::passed) {
        Ok(())
    } else {
        Err(Failure::Selftest)
    }
}
