//! Continuous-time discrete-event simulation of the job-server process.
//!
//! [`simulate_mm`] runs the count-state chain for exponential workloads: jobs
//! arrive at `lambda_c`, depart at `n_s * mu_c` whenever any job is present
//! (servers pool), servers arrive at `lambda_s` and die at `n_s * mu_s`.
//! [`simulate_mg`] runs the workload-state process `(X, n_s)` for any
//! finite-mean workload; job departures are realized under FCFS with all
//! servers pooled on the head-of-line job, which leaves the `(X, n_s)`
//! trajectory untouched (it is discipline-independent).
//!
//! Replications use split seeds and may run concurrently; aggregation folds
//! in replication order, so a config reproduces its output bit-exactly.

mod engine;

use crate::model::{ModelError, ModelSpec, SystemState, Tag, WorkloadDist};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Normal 95% critical value used for across-replication half-widths.
pub const Z95: f64 = 1.959963984540054;

/// Replication count is one sample per replication; below two there is no
/// variance estimate and half-widths are reported as infinite.
#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("workload distribution has non-finite mean")]
    InfiniteMeanWorkload,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "state exceeded the divergence guard (jobs <= {guard_jobs}, X <= {guard_workload}) \
         at t={time} in replication {replication}: {state}; \
         the run is statistically meaningless, not a crash"
    )]
    UnstableDivergence {
        guard_jobs: u64,
        guard_workload: f64,
        state: SystemState,
        time: f64,
        replication: u32,
    },
}

/// Simulation configuration. Construct with [`SimConfig::new`] and adjust
/// with the `with_*` methods.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    spec: ModelSpec,
    workload: WorkloadDist,
    horizon: f64,
    warmup: f64,
    replications: u32,
    seed: u64,
    max_servers: Option<u32>,
    guard_jobs: u64,
    guard_workload: f64,
    windows: usize,
    sample_spacing: f64,
}

impl SimConfig {
    /// A config with the default warmup (10% of the horizon), the workload
    /// implied by the notation tag, no server cap, and desk-scale divergence
    /// guards (`n_c <= 1e7`, `X <= 1e7 / mu_c`). A `G` workload tag carries
    /// no default distribution; use [`SimConfig::new_with_workload`].
    pub fn new(
        spec: ModelSpec,
        horizon: f64,
        replications: u32,
        seed: u64,
    ) -> Result<Self, SimError> {
        let workload = spec.default_workload().ok_or_else(|| {
            SimError::InvalidConfig(
                "general workload tag needs an explicit distribution; \
                 use SimConfig::new_with_workload"
                    .into(),
            )
        })?;
        Self::new_with_workload(spec, workload, horizon, replications, seed)
    }

    /// A config with an explicit workload distribution. The distribution must
    /// fall under the notation's workload tag (anything under `G`) and have
    /// mean `1/mu_c` so the configured `rho_c` keeps its meaning.
    pub fn new_with_workload(
        spec: ModelSpec,
        workload: WorkloadDist,
        horizon: f64,
        replications: u32,
        seed: u64,
    ) -> Result<Self, SimError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SimError::InvalidConfig(format!("horizon {horizon}")));
        }
        if replications < 1 {
            return Err(SimError::InvalidConfig(
                "need at least one replication".into(),
            ));
        }
        let config = Self {
            spec,
            workload: workload.clone(),
            horizon,
            warmup: 0.1 * horizon,
            replications,
            seed,
            max_servers: None,
            guard_jobs: 10_000_000,
            guard_workload: 1e7 / spec.params.mu_c(),
            windows: 10,
            sample_spacing: 10.0,
        };
        config.with_workload(workload)
    }

    /// Overrides the workload distribution; see
    /// [`SimConfig::new_with_workload`] for the consistency rules.
    pub fn with_workload(mut self, workload: WorkloadDist) -> Result<Self, SimError> {
        let mean = workload.mean();
        if !mean.is_finite() {
            return Err(SimError::InfiniteMeanWorkload);
        }
        let tag = self.spec.notation.workload;
        if tag != Tag::G && workload.tag() != tag {
            return Err(SimError::InvalidConfig(format!(
                "{workload:?} does not fall under workload tag {tag}"
            )));
        }
        let expected = 1.0 / self.spec.params.mu_c();
        if (mean - expected).abs() > 1e-9 * expected {
            return Err(SimError::InvalidConfig(format!(
                "workload mean {mean} does not match 1/mu_c = {expected}"
            )));
        }
        self.workload = workload;
        Ok(self)
    }

    pub fn with_warmup(mut self, warmup: f64) -> Result<Self, SimError> {
        if !(warmup >= 0.0 && warmup < self.horizon) {
            return Err(SimError::InvalidConfig(format!(
                "warmup {warmup} must lie in [0, horizon)"
            )));
        }
        self.warmup = warmup;
        Ok(self)
    }

    /// Caps the server count at `m_s` (server arrivals are suppressed at the
    /// cap), matching a phase-truncated solver.
    pub fn with_max_servers(mut self, m_s: u32) -> Self {
        self.max_servers = Some(m_s);
        self
    }

    pub fn with_guards(mut self, guard_jobs: u64, guard_workload: f64) -> Self {
        self.guard_jobs = guard_jobs;
        self.guard_workload = guard_workload;
        self
    }

    /// Number of equal post-warmup windows for the windowed means.
    pub fn with_windows(mut self, windows: usize) -> Result<Self, SimError> {
        if windows == 0 {
            return Err(SimError::InvalidConfig("need at least one window".into()));
        }
        self.windows = windows;
        Ok(self)
    }

    /// Spacing of the equally spaced state inspections used for the
    /// `n_s` occupancy sample counts.
    pub fn with_sample_spacing(mut self, spacing: f64) -> Result<Self, SimError> {
        if !(spacing > 0.0) {
            return Err(SimError::InvalidConfig(format!("sample spacing {spacing}")));
        }
        self.sample_spacing = spacing;
        Ok(self)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn workload(&self) -> &WorkloadDist {
        &self.workload
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn warmup(&self) -> f64 {
        self.warmup
    }

    pub fn replications(&self) -> u32 {
        self.replications
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// A point estimate with a 95% across-replication confidence half-width
/// (infinite when fewer than two replications carry the statistic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub half_width: f64,
}

impl Estimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self {
                value: mean,
                half_width: f64::INFINITY,
            };
        }
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n as f64 - 1.0);
        Self {
            value: mean,
            half_width: Z95 * (var / n as f64).sqrt(),
        }
    }

    /// Whether `x` lies within `k` half-widths of the estimate.
    pub fn within(&self, x: f64, k: f64) -> bool {
        (x - self.value).abs() <= k * self.half_width
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            value: self.value * factor,
            half_width: self.half_width * factor,
        }
    }
}

/// Pooled conditional mean: time-weighted across replications, with a
/// half-width over the per-replication means of the replications that
/// visited the conditioning state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CondEstimate {
    pub mean: f64,
    pub half_width: f64,
    /// Total occupancy time behind the estimate.
    pub weight: f64,
    /// Number of sojourn intervals observed.
    pub intervals: u64,
}

/// Replication-aggregated simulation output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    pub mean_nc: Estimate,
    pub mean_ns: Estimate,
    /// Time-averaged workload. Measured directly by [`simulate_mg`]; for
    /// [`simulate_mm`] it is `mean_nc / mu_c` (each in-system job carries
    /// `Exp(mu_c)` remaining work in expectation).
    pub mean_x: Estimate,
    pub cov_nc_ns: Estimate,
    /// Mean per-job sojourn time under the realized FCFS order. Tracked for
    /// exponential workloads only.
    pub mean_sojourn: Option<Estimate>,
    pub cond_mean_nc_given_ns: BTreeMap<u32, CondEstimate>,
    pub cond_mean_ns_given_nc: BTreeMap<u64, CondEstimate>,
    /// Fraction of time with no jobs in the system.
    pub empty_fraction: Estimate,
    /// Post-warmup visits to the empty state, one entry per replication.
    pub regenerations: Vec<u64>,
    /// Per-window post-warmup means, averaged across replications.
    pub window_means_nc: Vec<f64>,
    pub window_means_x: Vec<f64>,
    /// Time fraction spent at each server count.
    pub ns_time_fraction: Vec<f64>,
    /// Counts of the server process at equally spaced inspection epochs.
    pub ns_sample_counts: Vec<u64>,
    pub replications: u32,
}

impl SimStats {
    pub fn total_regenerations(&self) -> u64 {
        self.regenerations.iter().sum()
    }

    pub fn min_regenerations(&self) -> u64 {
        self.regenerations.iter().copied().min().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn csv_header() -> &'static str {
        "mean_nc,mean_nc_hw,mean_ns,mean_ns_hw,mean_x,mean_x_hw,cov_nc_ns,cov_nc_ns_hw,\
         empty_fraction,empty_fraction_hw,mean_sojourn,mean_sojourn_hw,\
         regenerations_total,regenerations_min,replications"
    }

    pub fn csv_row(&self) -> String {
        let sojourn = self
            .mean_sojourn
            .map(|e| format!("{},{}", e.value, e.half_width))
            .unwrap_or_else(|| ",".into());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mean_nc.value,
            self.mean_nc.half_width,
            self.mean_ns.value,
            self.mean_ns.half_width,
            self.mean_x.value,
            self.mean_x.half_width,
            self.cov_nc_ns.value,
            self.cov_nc_ns.half_width,
            self.empty_fraction.value,
            self.empty_fraction.half_width,
            sojourn,
            self.total_regenerations(),
            self.min_regenerations(),
            self.replications,
        )
    }
}

/// Simulates the count-state chain. Requires the workload tag `M`.
pub fn simulate_mm(config: &SimConfig) -> Result<SimStats, SimError> {
    if config.spec.notation.workload != Tag::M {
        return Err(SimError::InvalidConfig(format!(
            "count-state simulation needs an exponential workload, tag is {}",
            config.spec.notation.workload
        )));
    }
    run_replications(config, engine::Kind::CountState)
}

/// Simulates the workload-state process `(X, n_s)` under FCFS with pooled
/// servers. Accepts any finite-mean workload (tags `M`, `D`, `G`).
pub fn simulate_mg(config: &SimConfig) -> Result<SimStats, SimError> {
    if !config.workload.mean().is_finite() {
        return Err(SimError::InfiniteMeanWorkload);
    }
    run_replications(config, engine::Kind::WorkloadState)
}

fn run_replications(config: &SimConfig, kind: engine::Kind) -> Result<SimStats, SimError> {
    let results: Vec<Result<engine::RepAccum, SimError>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| engine::run_replication(config, kind, rep))
        .collect();
    let mut reps = Vec::with_capacity(results.len());
    for result in results {
        reps.push(result?); // fold in replication order: first failure wins
    }
    Ok(aggregate(config, kind, &reps))
}

fn aggregate(config: &SimConfig, kind: engine::Kind, reps: &[engine::RepAccum]) -> SimStats {
    let collect =
        |f: &dyn Fn(&engine::RepAccum) -> f64| -> Vec<f64> { reps.iter().map(f).collect() };
    let mean_nc = Estimate::from_samples(&collect(&|r| r.int_nc / r.time));
    let mean_ns = Estimate::from_samples(&collect(&|r| r.int_ns / r.time));
    let cov = Estimate::from_samples(&collect(&|r| {
        r.int_nc_ns / r.time - (r.int_nc / r.time) * (r.int_ns / r.time)
    }));
    let empty = Estimate::from_samples(&collect(&|r| r.empty_time / r.time));
    let mean_x = match kind {
        engine::Kind::CountState => mean_nc.scaled(1.0 / config.spec.params.mu_c()),
        engine::Kind::WorkloadState => Estimate::from_samples(&collect(&|r| r.int_x / r.time)),
    };

    let sojourn_samples: Vec<f64> = reps
        .iter()
        .filter(|r| r.sojourn_count > 0)
        .map(|r| r.sojourn_sum / r.sojourn_count as f64)
        .collect();
    let mean_sojourn = match kind {
        engine::Kind::CountState if !sojourn_samples.is_empty() => {
            Some(Estimate::from_samples(&sojourn_samples))
        }
        _ => None,
    };

    // Pooled conditional profiles with across-replication half-widths.
    let track_conditionals =
        matches!(kind, engine::Kind::CountState) || config.workload.tag() == Tag::M;
    let mut cond_ns: BTreeMap<u32, CondEstimate> = BTreeMap::new();
    let mut cond_nc: BTreeMap<u64, CondEstimate> = BTreeMap::new();
    if track_conditionals {
        cond_ns = pool_conditionals(reps.iter().map(|r| &r.cond_given_ns));
        cond_nc = pool_conditionals(reps.iter().map(|r| &r.cond_given_nc))
            .into_iter()
            .map(|(k, v)| (k as u64, v))
            .collect();
    }

    let windows = config.windows;
    let mut window_means_nc = vec![0.0; windows];
    let mut window_means_x = vec![0.0; windows];
    for w in 0..windows {
        let mut nc_avg = 0.0;
        let mut x_avg = 0.0;
        for r in reps {
            nc_avg += r.window_int_nc[w] / r.window_time[w];
            x_avg += match kind {
                engine::Kind::CountState => {
                    r.window_int_nc[w] / r.window_time[w] / config.spec.params.mu_c()
                }
                engine::Kind::WorkloadState => r.window_int_x[w] / r.window_time[w],
            };
        }
        window_means_nc[w] = nc_avg / reps.len() as f64;
        window_means_x[w] = x_avg / reps.len() as f64;
    }

    let max_ns = reps.iter().map(|r| r.ns_time.len()).max().unwrap_or(0);
    let mut ns_time_fraction = vec![0.0; max_ns];
    let mut ns_sample_counts = vec![0u64; max_ns];
    let total_time: f64 = reps.iter().map(|r| r.time).sum();
    for r in reps {
        for (i, &t) in r.ns_time.iter().enumerate() {
            ns_time_fraction[i] += t / total_time;
        }
        for (i, &c) in r.ns_samples.iter().enumerate() {
            ns_sample_counts[i] += c;
        }
    }

    SimStats {
        mean_nc,
        mean_ns,
        mean_x,
        cov_nc_ns: cov,
        mean_sojourn,
        cond_mean_nc_given_ns: cond_ns,
        cond_mean_ns_given_nc: cond_nc,
        empty_fraction: empty,
        regenerations: reps.iter().map(|r| r.regenerations).collect(),
        window_means_nc,
        window_means_x,
        ns_time_fraction,
        ns_sample_counts,
        replications: config.replications,
    }
}

/// Pools per-replication `(time, integral, intervals)` conditional records.
fn pool_conditionals<'a>(
    reps: impl Iterator<Item = &'a Vec<(f64, f64, u64)>> + Clone,
) -> BTreeMap<u32, CondEstimate> {
    let max_len = reps.clone().map(|v| v.len()).max().unwrap_or(0);
    let mut out = BTreeMap::new();
    for key in 0..max_len {
        let mut weight = 0.0;
        let mut integral = 0.0;
        let mut intervals = 0u64;
        let mut rep_means = Vec::new();
        for rep in reps.clone() {
            if let Some(&(t, int, n)) = rep.get(key) {
                if t > 0.0 {
                    weight += t;
                    integral += int;
                    intervals += n;
                    rep_means.push(int / t);
                }
            }
        }
        if weight > 0.0 {
            let hw = Estimate::from_samples(&rep_means).half_width;
            out.insert(
                key as u32,
                CondEstimate {
                    mean: integral / weight,
                    half_width: hw,
                    weight,
                    intervals,
                },
            );
        }
    }
    out
}

#[cfg(test)]
mod tests;
