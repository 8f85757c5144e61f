//! Command-line front end: wires the library into reproducible experiments.
//!
//! Exit codes: 0 success, 2 invalid input, 3 unstable model where stability
//! is required (or a failed stability certificate), 4 numerical failure.

// `!(a > b)` guards treat NaN as out of domain.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod figures;
mod kv;
mod workload;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kv::KvConfig;
use p2pq::bounds::{self, BoundsError};
use p2pq::model::{parse_notation, ModelError, ModelParams, ModelSpec, Tag, WorkloadDist};
use p2pq::qbd::{self, QbdError};
use p2pq::sim::{simulate_mg, simulate_mm, SimConfig, SimError};
use p2pq::stability::{self, LyapunovConfig, StabilityError};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    /// Exit 2: malformed notation, bad flags, bad config files.
    Invalid(String),
    /// Exit 3: the model is unstable where stability is required.
    Unstable(String),
    /// Exit 4: a numerical routine failed to deliver.
    Numerical(String),
    /// Exit 1: everything else (I/O and friends).
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Unstable(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m)
            | CliError::Unstable(m)
            | CliError::Numerical(m)
            | CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::UnstableDivergence { .. } => CliError::Unstable(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<QbdError> for CliError {
    fn from(e: QbdError) -> Self {
        match e {
            QbdError::UnstableModel { .. } => CliError::Unstable(e.to_string()),
            QbdError::TooManyStates { .. } => CliError::Invalid(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::NotStrictlyStable { .. } => CliError::Unstable(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<BoundsError> for CliError {
    fn from(e: BoundsError) -> Self {
        CliError::Unstable(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "p2pq",
    about = "Queueing systems in which both jobs and servers arrive and depart randomly",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

/// The four rates, optionally read from a flat `key = value` config file;
/// flags win over file values.
#[derive(Debug, Args, Clone)]
struct RateArgs {
    /// Job arrival rate
    #[arg(long)]
    lambda_c: Option<f64>,
    /// Single-server service rate (1 / mean job requirement)
    #[arg(long)]
    mu_c: Option<f64>,
    /// Server arrival rate
    #[arg(long)]
    lambda_s: Option<f64>,
    /// Server death rate (1 / mean server lifetime)
    #[arg(long)]
    mu_s: Option<f64>,
    /// Flat key-value config file mirroring the flags
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RateArgs {
    fn resolve(&self) -> Result<ModelParams, CliError> {
        let file = KvConfig::load(self.config.as_deref())?;
        let get = |flag: Option<f64>, key: &str| -> Result<f64, CliError> {
            if let Some(v) = flag {
                return Ok(v);
            }
            file.f64(key)?
                .ok_or_else(|| CliError::Invalid(format!("missing --{}", key.replace('_', "-"))))
        };
        Ok(ModelParams::new(
            get(self.lambda_c, "lambda_c")?,
            get(self.mu_c, "mu_c")?,
            get(self.lambda_s, "lambda_s")?,
            get(self.mu_s, "mu_s")?,
        )?)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse an extended Kendall notation string A/B/(C/E)
    Parse {
        notation: String,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Solve the stationary distribution by matrix-geometric analysis
    Solve {
        #[command(flatten)]
        rates: RateArgs,
        /// Server-count truncation (default: rho_s + 10 sqrt(rho_s))
        #[arg(long)]
        ms: Option<u32>,
        /// json: moments + tail mass; csv: stationary probabilities
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the job-server process
    Simulate {
        /// Model notation, e.g. M/M/(M/M) or M/G/(M/M)
        #[arg(long)]
        notation: Option<String>,
        #[command(flatten)]
        rates: RateArgs,
        #[arg(long)]
        horizon: Option<f64>,
        /// Number of independent replications
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Warmup discarded from statistics (default 10% of the horizon)
        #[arg(long)]
        warmup: Option<f64>,
        /// Workload override: exponential:<rate> | deterministic:<v> |
        /// hyperexp:<w>:<rate>[,..] | discrete:<p>:<L>[,..]
        #[arg(long)]
        workload: Option<String>,
        /// Cap the server count (matches a phase-truncated solver)
        #[arg(long)]
        max_servers: Option<u32>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form queue-length and sojourn-time bounds
    Bounds {
        #[command(flatten)]
        rates: RateArgs,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Sweep rho_c, solving each point: rho_c, E_nc_solved, lower, upper, E_T
    Sweep {
        #[command(flatten)]
        rates: RateArgs,
        /// Number of log-spaced sweep points
        #[arg(long, default_value_t = 40)]
        points: usize,
        #[arg(long, default_value_t = 0.05)]
        rho_c_min: f64,
        /// Upper sweep end; capped at 0.98 rho_s where solver conditioning
        /// degrades
        #[arg(long)]
        rho_c_max: Option<f64>,
        #[arg(long)]
        ms: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the drift certificate for a (discretized) workload
    VerifyStability {
        #[command(flatten)]
        rates: RateArgs,
        /// Slot length (default 1e-3 min(1/lambda_c, 1/lambda_s, 1/(M_s mu_s)))
        #[arg(long)]
        dt: Option<f64>,
        /// Server cap (default from the boundary bound plus headroom)
        #[arg(long)]
        ms: Option<u32>,
        /// Lyapunov constant k (requires --m; default: explicit certificate)
        #[arg(long)]
        k: Option<f64>,
        /// Lyapunov constant m (requires --k)
        #[arg(long)]
        m: Option<f64>,
        /// Lattice workload: deterministic:<v> | discrete:<p>:<L>[,..]
        /// (default deterministic:1/mu_c)
        #[arg(long)]
        workload: Option<String>,
        /// Evaluation band for X (default max L_i + (M_s+1) dt)
        #[arg(long)]
        x_max: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the three reference figure datasets as CSV
    Figures {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Sweep points per curve
        #[arg(long, default_value_t = 40)]
        points: usize,
        /// Replications for the simulation cross-check
        #[arg(long, default_value_t = 10)]
        reps: u32,
        /// Horizon for the simulation cross-check
        #[arg(long, default_value_t = 50_000.0)]
        horizon: f64,
    },
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, content)?;
        }
        None => {
            stdout.write_all(content.as_bytes())?;
            if !content.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// Runs a parsed command, writing human output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Parse { notation, format } => {
            let parsed = parse_notation(&notation)?;
            let content = match format {
                Format::Json => serde_json::to_string_pretty(&parsed).unwrap(),
                _ => format!(
                    "{}\njob_arrival: {}\nworkload: {}\nserver_arrival: {}\nserver_lifetime: {}",
                    parsed.render(),
                    parsed.job_arrival,
                    parsed.workload,
                    parsed.server_arrival,
                    parsed.server_lifetime
                ),
            };
            emit(None, stdout, &content)
        }

        Command::Solve {
            rates,
            ms,
            format,
            out,
        } => {
            let params = rates.resolve()?;
            let sol = solve(&params, ms)?;
            let content = match format {
                Format::Csv => sol.pi_csv(None),
                _ => sol.to_json(),
            };
            emit(out.as_deref(), stdout, &content)
        }

        Command::Simulate {
            notation,
            rates,
            horizon,
            reps,
            seed,
            warmup,
            workload,
            max_servers,
            format,
            out,
        } => {
            let file = KvConfig::load(rates.config.as_deref())?;
            let params = rates.resolve()?;
            let notation_text = notation
                .or(file.string("notation"))
                .unwrap_or_else(|| "M/M/(M/M)".to_string());
            let spec = ModelSpec::new(parse_notation(&notation_text)?, params);

            let horizon = pick(horizon, file.f64("horizon")?, 100_000.0);
            let reps = pick(reps, file.u64("reps")?.map(|v| v as u32), 10);
            let seed = pick(seed, file.u64("seed")?, 42);
            let workload_text = workload.or(file.string("workload"));

            let mut config = match &workload_text {
                Some(text) => {
                    let dist = workload::parse_spec(text, spec.params.mu_c())?;
                    SimConfig::new_with_workload(spec, dist, horizon, reps, seed)?
                }
                None => SimConfig::new(spec, horizon, reps, seed)?,
            };
            if let Some(w) = warmup.or(file.f64("warmup")?) {
                config = config.with_warmup(w)?;
            }
            if let Some(cap) = max_servers.or(file.u64("max_servers")?.map(|v| v as u32)) {
                config = config.with_max_servers(cap);
            }

            let stats = if config.workload().tag() == Tag::M {
                simulate_mm(&config)?
            } else {
                simulate_mg(&config)?
            };
            let content = match format {
                Format::Csv => {
                    format!(
                        "{}\n{}\n",
                        p2pq::sim::SimStats::csv_header(),
                        stats.csv_row()
                    )
                }
                _ => stats.to_json(),
            };
            emit(out.as_deref(), stdout, &content)
        }

        Command::Bounds { rates, format } => {
            let params = rates.resolve()?;
            let pair = bounds::queue_length_bounds(&params)?;
            let sojourn_lower = bounds::sojourn_from_queue_length(pair.lower, params.lambda_c());
            let sojourn_upper = bounds::sojourn_from_queue_length(pair.upper, params.lambda_c());
            let content = match format {
                Format::Json => serde_json::to_string_pretty(&serde_json::json!({
                    "rho_c": pair.rho_c,
                    "rho_s": pair.rho_s,
                    "queue_length_lower": pair.lower,
                    "queue_length_upper": pair.upper,
                    "ratio": pair.ratio,
                    "sojourn_lower": sojourn_lower,
                    "sojourn_upper": sojourn_upper,
                    "static_baseline": pair.lower,
                }))
                .unwrap(),
                _ => format!(
                    "rho_c = {}, rho_s = {}\n\
                     queue length: {} < E[n_c] < {}  (ratio {})\n\
                     sojourn time: {} < E[T] < {}\n\
                     static baseline (same mean servers): {}",
                    pair.rho_c,
                    pair.rho_s,
                    pair.lower,
                    pair.upper,
                    pair.ratio,
                    sojourn_lower,
                    sojourn_upper,
                    pair.lower
                ),
            };
            emit(None, stdout, &content)
        }

        Command::Sweep {
            rates,
            points,
            rho_c_min,
            rho_c_max,
            ms,
            out,
        } => {
            let params = rates.resolve()?;
            let rho_s = params.rho_s();
            let cap = 0.98 * rho_s;
            let hi = rho_c_max.unwrap_or(cap).min(cap);
            if points < 1 || !(rho_c_min > 0.0) || hi <= rho_c_min {
                return Err(CliError::Invalid(format!(
                    "empty sweep range ({rho_c_min}, {hi}] with {points} points"
                )));
            }
            let mut content = String::from(bounds::SWEEP_CSV_HEADER);
            content.push('\n');
            for rho_c in log_spaced(rho_c_min, hi, points) {
                let point =
                    ModelParams::from_loads(rho_c, params.mu_c(), rho_s, params.mu_s()).unwrap();
                let sol = solve(&point, ms)?;
                content.push_str(&bounds::SweepRow::new(&point, sol.moments.e_nc)?.csv());
                content.push('\n');
            }
            emit(out.as_deref(), stdout, &content)
        }

        Command::VerifyStability {
            rates,
            dt,
            ms,
            k,
            m,
            workload,
            x_max,
            format,
            out,
        } => {
            let params = rates.resolve()?;
            let dist = match &workload {
                Some(text) => workload::parse_spec(text, params.mu_c())?,
                None => WorkloadDist::deterministic(1.0 / params.mu_c())?,
            };
            let config = match (k, m) {
                (Some(k), Some(m)) => {
                    let cap = match ms {
                        Some(cap) => cap,
                        None => stability::default_server_cap(&params)?,
                    };
                    LyapunovConfig::with_constants(&params, &dist, k, m, cap, dt)?
                }
                (None, None) => {
                    let (k, m) = stability::default_constants(&params)?;
                    let cap = match ms {
                        Some(cap) => cap,
                        None => stability::default_server_cap(&params)?,
                    };
                    LyapunovConfig::with_constants(&params, &dist, k, m, cap, dt)?
                }
                _ => {
                    return Err(CliError::Invalid(
                        "--k and --m must be given together".into(),
                    ))
                }
            };
            let report = stability::check_drift(
                &config,
                x_max.unwrap_or_else(|| config.default_x_grid_max()),
            );
            let content = match format {
                Format::Json => report.to_json(),
                _ => {
                    let mut text = report.summary();
                    let fatal: Vec<_> = report.fatal_violations().take(20).collect();
                    if !fatal.is_empty() {
                        text.push_str("\nfirst fatal violations:");
                        for v in fatal {
                            text.push_str(&format!(
                                "\n  (X={}, n_s={}): drift {:.6e} [{}]",
                                v.x, v.n_s, v.drift, v.regime
                            ));
                        }
                    }
                    text
                }
            };
            emit(out.as_deref(), stdout, &content)?;
            if report.certifies() {
                Ok(())
            } else {
                Err(CliError::Unstable("drift certificate does not hold".into()))
            }
        }

        Command::Figures {
            out,
            seed,
            points,
            reps,
            horizon,
        } => figures::run_all(&out, seed, points, reps, horizon, stdout),
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub(crate) fn solve(
    params: &ModelParams,
    ms: Option<u32>,
) -> Result<qbd::EquilibriumSolution, CliError> {
    let cap = ms.unwrap_or_else(|| qbd::default_phase_cap(params));
    let blocks = qbd::build_blocks(params, cap);
    let r = qbd::solve_r(&blocks, qbd::DEFAULT_R_TOL, qbd::DEFAULT_MAX_ITER)?;
    Ok(qbd::solve_equilibrium(&blocks, &r)?)
}

pub(crate) fn log_spaced(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}
