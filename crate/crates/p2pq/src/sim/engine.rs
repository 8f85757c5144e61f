//! Per-replication event loops and time-average accumulation.

use super::{SimConfig, SimError};
use crate::model::SystemState;
use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, Exp};
use rand_pcg::Pcg64;
use std::collections::VecDeque;

/// Conditional means for `E[n_s | n_c]` are tracked up to this job count.
const COND_NC_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Kind {
    CountState,
    WorkloadState,
}

/// Raw post-warmup integrals of one replication.
pub(super) struct RepAccum {
    pub time: f64,
    pub int_nc: f64,
    pub int_ns: f64,
    pub int_x: f64,
    pub int_nc_ns: f64,
    pub empty_time: f64,
    pub regenerations: u64,
    /// Indexed by `n_s`: (occupancy time, integral of n_c, segments).
    pub cond_given_ns: Vec<(f64, f64, u64)>,
    /// Indexed by `n_c` (up to a cap): (occupancy time, integral of n_s, segments).
    pub cond_given_nc: Vec<(f64, f64, u64)>,
    pub window_time: Vec<f64>,
    pub window_int_nc: Vec<f64>,
    pub window_int_x: Vec<f64>,
    pub ns_time: Vec<f64>,
    pub ns_samples: Vec<u64>,
    pub sojourn_sum: f64,
    pub sojourn_count: u64,
    warmup: f64,
    window_len: f64,
    windows: usize,
}

impl RepAccum {
    fn new(config: &SimConfig) -> Self {
        let windows = config.windows;
        Self {
            time: 0.0,
            int_nc: 0.0,
            int_ns: 0.0,
            int_x: 0.0,
            int_nc_ns: 0.0,
            empty_time: 0.0,
            regenerations: 0,
            cond_given_ns: Vec::new(),
            cond_given_nc: Vec::new(),
            window_time: vec![0.0; windows],
            window_int_nc: vec![0.0; windows],
            window_int_x: vec![0.0; windows],
            ns_time: Vec::new(),
            ns_samples: Vec::new(),
            sojourn_sum: 0.0,
            sojourn_count: 0,
            warmup: config.warmup,
            window_len: (config.horizon - config.warmup) / windows as f64,
            windows,
        }
    }

    /// Accumulates a constant-`(n_c, n_s)` span `[a, b)` on which the
    /// workload is linear, `x(t) = x_at_a + slope * (t - a)`, clipped to the
    /// post-warmup window.
    fn add_span(&mut self, a: f64, b: f64, nc: u64, ns: u32, x_at_a: f64, slope: f64) {
        let start = a.max(self.warmup);
        if b <= start {
            return;
        }
        let d = b - start;
        let x_start = x_at_a + slope * (start - a);
        self.time += d;
        self.int_nc += nc as f64 * d;
        self.int_ns += ns as f64 * d;
        self.int_nc_ns += (nc as f64 * ns as f64) * d;
        self.int_x += (x_start + 0.5 * slope * d) * d;
        if nc == 0 {
            self.empty_time += d;
        }

        let ns_idx = ns as usize;
        if self.cond_given_ns.len() <= ns_idx {
            self.cond_given_ns.resize(ns_idx + 1, (0.0, 0.0, 0));
        }
        let slot = &mut self.cond_given_ns[ns_idx];
        slot.0 += d;
        slot.1 += nc as f64 * d;
        slot.2 += 1;
        if (nc as usize) <= COND_NC_CAP {
            let nc_idx = nc as usize;
            if self.cond_given_nc.len() <= nc_idx {
                self.cond_given_nc.resize(nc_idx + 1, (0.0, 0.0, 0));
            }
            let slot = &mut self.cond_given_nc[nc_idx];
            slot.0 += d;
            slot.1 += ns as f64 * d;
            slot.2 += 1;
        }
        if self.ns_time.len() <= ns_idx {
            self.ns_time.resize(ns_idx + 1, 0.0);
        }
        self.ns_time[ns_idx] += d;

        // Split across the fixed post-warmup windows.
        let first = (((start - self.warmup) / self.window_len) as usize).min(self.windows - 1);
        for w in first..self.windows {
            let w_start = self.warmup + w as f64 * self.window_len;
            let w_end = w_start + self.window_len;
            let seg_a = start.max(w_start);
            let seg_b = b.min(w_end);
            if seg_b <= seg_a {
                break;
            }
            let seg_d = seg_b - seg_a;
            let seg_x = x_at_a + slope * (seg_a - a);
            self.window_time[w] += seg_d;
            self.window_int_nc[w] += nc as f64 * seg_d;
            self.window_int_x[w] += (seg_x + 0.5 * slope * seg_d) * seg_d;
        }
    }

    fn record_sample(&mut self, ns: u32) {
        let idx = ns as usize;
        if self.ns_samples.len() <= idx {
            self.ns_samples.resize(idx + 1, 0);
        }
        self.ns_samples[idx] += 1;
    }
}

/// SplitMix64 finalizer, used to derive independent per-replication seeds.
fn split_seed(seed: u64, rep: u32) -> u64 {
    let mut z = seed.wrapping_add((rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn initial_servers(config: &SimConfig) -> u32 {
    // Start the server process at its stationary mean to shorten the warmup.
    let near_mean = config.spec.params.rho_s().round() as u32;
    match config.max_servers {
        Some(cap) => near_mean.min(cap),
        None => near_mean,
    }
}

pub(super) fn run_replication(
    config: &SimConfig,
    kind: Kind,
    rep: u32,
) -> Result<RepAccum, SimError> {
    match kind {
        Kind::CountState => run_count_state(config, rep),
        Kind::WorkloadState => run_workload_state(config, rep),
    }
}

fn run_count_state(config: &SimConfig, rep: u32) -> Result<RepAccum, SimError> {
    let params = &config.spec.params;
    let (lc, mc, ls, ms) = (
        params.lambda_c(),
        params.mu_c(),
        params.lambda_s(),
        params.mu_s(),
    );
    let horizon = config.horizon;
    let mut rng = Pcg64::seed_from_u64(split_seed(config.seed, rep));
    let mut acc = RepAccum::new(config);
    let mut nc: u64 = 0;
    let mut ns: u32 = initial_servers(config);
    let mut arrivals: VecDeque<f64> = VecDeque::new();
    let mut next_sample = config.warmup;
    let mut t = 0.0;

    loop {
        let dep = if nc >= 1 { ns as f64 * mc } else { 0.0 };
        let sarr = if config.max_servers.is_some_and(|m| ns >= m) {
            0.0
        } else {
            ls
        };
        let death = ns as f64 * ms;
        let total = lc + dep + sarr + death;
        let t_event = t + Exp::new(total).unwrap().sample(&mut rng);

        let span_end = t_event.min(horizon);
        while next_sample < span_end {
            acc.record_sample(ns);
            next_sample += config.sample_spacing;
        }
        acc.add_span(t, span_end, nc, ns, 0.0, 0.0);
        if t_event >= horizon {
            break;
        }
        t = t_event;

        let u: f64 = rng.random::<f64>() * total;
        if u < lc {
            nc += 1;
            arrivals.push_back(t);
            if nc > config.guard_jobs {
                return Err(SimError::UnstableDivergence {
                    guard_jobs: config.guard_jobs,
                    guard_workload: config.guard_workload,
                    state: SystemState::Counts { n_c: nc, n_s: ns },
                    time: t,
                    replication: rep,
                });
            }
        } else if u < lc + dep {
            // Table guard: departures only fire with a job and a server.
            assert!(nc >= 1 && ns >= 1, "departure from (n_c={nc}, n_s={ns})");
            nc -= 1;
            if let Some(arrived) = arrivals.pop_front() {
                if arrived >= config.warmup {
                    acc.sojourn_sum += t - arrived;
                    acc.sojourn_count += 1;
                }
            }
            if nc == 0 && t >= config.warmup {
                acc.regenerations += 1;
            }
        } else if u < lc + dep + sarr {
            ns += 1;
        } else {
            assert!(ns >= 1, "server death from n_s=0");
            ns -= 1;
        }
    }
    Ok(acc)
}

fn run_workload_state(config: &SimConfig, rep: u32) -> Result<RepAccum, SimError> {
    let params = &config.spec.params;
    let (lc, ls, ms) = (params.lambda_c(), params.lambda_s(), params.mu_s());
    let horizon = config.horizon;
    let mut rng = Pcg64::seed_from_u64(split_seed(config.seed, rep));
    let mut acc = RepAccum::new(config);
    let mut ns: u32 = initial_servers(config);
    // FCFS realization: all servers pool on the head-of-line job, so only the
    // head's remaining requirement drains. The (X, n_s) path is the same
    // under any work-conserving discipline.
    let mut queue: VecDeque<f64> = VecDeque::new();
    let mut x = 0.0f64;
    let mut next_sample = config.warmup;
    let mut t = 0.0;

    loop {
        let sarr = if config.max_servers.is_some_and(|m| ns >= m) {
            0.0
        } else {
            ls
        };
        let death = ns as f64 * ms;
        let total = lc + sarr + death;
        let t_event = t + Exp::new(total).unwrap().sample(&mut rng);
        let span_end = t_event.min(horizon);

        // n_s is constant until the next Markov event.
        while next_sample < span_end {
            acc.record_sample(ns);
            next_sample += config.sample_spacing;
        }

        // Drain deterministically, realizing departures at head completions.
        let mut now = t;
        while now < span_end {
            if ns == 0 || queue.is_empty() {
                acc.add_span(now, span_end, queue.len() as u64, ns, x, 0.0);
                break;
            }
            let head = *queue.front().unwrap();
            let completion = now + head / ns as f64;
            if completion <= span_end {
                acc.add_span(now, completion, queue.len() as u64, ns, x, -(ns as f64));
                queue.pop_front();
                x = (x - head).max(0.0);
                if queue.is_empty() {
                    x = 0.0;
                    if completion >= config.warmup {
                        acc.regenerations += 1;
                    }
                }
                now = completion;
            } else {
                let drained = ns as f64 * (span_end - now);
                acc.add_span(now, span_end, queue.len() as u64, ns, x, -(ns as f64));
                *queue.front_mut().unwrap() -= drained;
                x = (x - drained).max(0.0);
                now = span_end;
            }
        }

        if t_event >= horizon {
            break;
        }
        t = t_event;

        let u: f64 = rng.random::<f64>() * total;
        if u < lc {
            let work = config.workload.sample(&mut rng);
            queue.push_back(work);
            x += work;
            if x > config.guard_workload || queue.len() as u64 > config.guard_jobs {
                return Err(SimError::UnstableDivergence {
                    guard_jobs: config.guard_jobs,
                    guard_workload: config.guard_workload,
                    state: SystemState::Workload { x, n_s: ns },
                    time: t,
                    replication: rep,
                });
            }
        } else if u < lc + sarr {
            ns += 1;
        } else {
            assert!(ns >= 1, "server death from n_s=0");
            ns -= 1;
        }
    }
    Ok(acc)
}
