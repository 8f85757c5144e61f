//! Foster-Lyapunov drift verification for general workloads.
//!
//! The workload-server process is discretized into a slotted chain on a
//! lattice: in one slot of length `dt` the workload `X` drains by
//! `n_s * dt` (capped at `X`), a job arrival adds a discrete service
//! requirement `L_i` with probability `p_i * lambda_c * dt`, a server arrives
//! with probability `lambda_s * dt` (suppressed at the cap `M_s`) and dies
//! with probability `n_s * mu_s * dt`. Positive recurrence follows from the
//! Foster-Lyapunov criterion once the candidate function
//!
//! ```text
//! V(X, n_s) = k * mu_c * X + (n_s - rho_s)^2 + m * n_s
//! ```
//!
//! has negative expected one-slot drift outside a finite set. [`check_drift`]
//! evaluates the exact kernel expectation of `V` over a finite grid that
//! provably covers the infinite tail: for `X >= n_s * dt` no branch is
//! capped, so the drift is constant in `X` beyond the evaluated band and a
//! pass on the band extends to all `X`.
//!
//! Some states with `X < n_s * dt` may have nonnegative drift; the criterion
//! tolerates finitely many such states, so they are reported as exempt
//! rather than counted as failures.

use crate::model::{ModelParams, SystemState, WorkloadDist};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("constants are undefined unless rho_c < rho_s (got rho_c={rho_c}, rho_s={rho_s})")]
    NotStrictlyStable { rho_c: f64, rho_s: f64 },
    #[error("workload cannot be placed on a lattice: {0}")]
    NotDiscretizable(String),
    #[error("atoms are not commensurate: {0} is not an integer multiple of a common base")]
    AtomsNotCommensurate(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("X={x} does not lie on the dt={dt} lattice")]
    OffLattice { x: f64, dt: f64 },
}

/// The explicit certificate constants: for `rho_c < rho_s`,
///
/// ```text
/// k = (mu_s / mu_c) * (2 rho_s - 2 rho_c + 2 rho_s / (rho_s - rho_c) + 1)
/// m = 2 (rho_s - rho_c) - 2 rho_s / (rho_s - rho_c)
/// ```
///
/// make the interior drift equal `mu_s * (-2 (n_s - rho_c)^2 + rho_c - rho_s)`
/// up to an `O(dt)` correction.
pub fn default_constants(params: &ModelParams) -> Result<(f64, f64), StabilityError> {
    let (rho_c, rho_s) = params.loads();
    if !(rho_c < rho_s) {
        return Err(StabilityError::NotStrictlyStable { rho_c, rho_s });
    }
    let gap = rho_s / (rho_s - rho_c);
    let k = params.mu_s() / params.mu_c() * (2.0 * rho_s - 2.0 * rho_c + 2.0 * gap + 1.0);
    let m = 2.0 * (rho_s - rho_c) - 2.0 * gap;
    Ok((k, m))
}

/// Smallest server cap for which the `n_s = M_s` boundary keeps negative
/// drift under the default constants, plus headroom so the truncation never
/// dominates.
pub fn default_server_cap(params: &ModelParams) -> Result<u32, StabilityError> {
    let (rho_c, rho_s) = params.loads();
    if !(rho_c < rho_s) {
        return Err(StabilityError::NotStrictlyStable { rho_c, rho_s });
    }
    let bound = rho_c + rho_s / (rho_s - rho_c) - 0.5;
    let headroom = 10.0f64.max((3.0 * rho_s.sqrt()).ceil());
    Ok((bound.ceil() + headroom) as u32)
}

/// A drift-check configuration: parameters, a lattice workload, the slot
/// length, the server cap, and the Lyapunov constants.
#[derive(Debug, Clone)]
pub struct LyapunovConfig {
    params: ModelParams,
    /// Atoms as `(units of dt, probability)`; `L_i = units * dt` exactly.
    atoms: Vec<(u64, f64)>,
    dt: f64,
    m_s: u32,
    k: f64,
    m: f64,
}

fn lattice_values(workload: &WorkloadDist) -> Result<Vec<(f64, f64)>, StabilityError> {
    match workload {
        WorkloadDist::Deterministic { value } => Ok(vec![(*value, 1.0)]),
        WorkloadDist::DiscreteFinite { atoms } => Ok(atoms.clone()),
        other => Err(StabilityError::NotDiscretizable(format!(
            "{other:?} has unbounded support; use a deterministic or discrete-finite workload"
        ))),
    }
}

/// Expresses the atoms as integer multiples of a common base `<=` the
/// smallest atom, trying subdivisions of the smallest atom up to 64.
fn commensurate_units(values: &[(f64, f64)]) -> Result<(f64, Vec<(u64, f64)>), StabilityError> {
    let base_atom = values.iter().map(|&(l, _)| l).fold(f64::INFINITY, f64::min);
    'subdiv: for q in 1..=64u64 {
        let base = base_atom / q as f64;
        let mut units = Vec::with_capacity(values.len());
        for &(l, p) in values {
            let ratio = l / base;
            let rounded = ratio.round();
            if (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
                continue 'subdiv;
            }
            units.push((rounded as u64, p));
        }
        return Ok((base, units));
    }
    let worst = values.iter().map(|&(l, _)| l).fold(0.0, f64::max);
    Err(StabilityError::AtomsNotCommensurate(worst))
}

impl LyapunovConfig {
    /// Default configuration for a stable parameter set: explicit constants,
    /// auto server cap, and `dt` small enough that two events per slot are an
    /// `O(dt^2)` rarity, snapped so every atom is an exact lattice multiple.
    pub fn with_defaults(
        params: &ModelParams,
        workload: &WorkloadDist,
    ) -> Result<Self, StabilityError> {
        let (k, m) = default_constants(params)?;
        let m_s = default_server_cap(params)?;
        Self::with_constants(params, workload, k, m, m_s, None)
    }

    /// Fully explicit configuration, for custom constants or unstable
    /// parameter sets. `dt_hint` defaults to
    /// `1e-3 * min(1/lambda_c, 1/lambda_s, 1/(M_s mu_s))`; the actual `dt` is
    /// the largest lattice-compatible value not exceeding the hint.
    pub fn with_constants(
        params: &ModelParams,
        workload: &WorkloadDist,
        k: f64,
        m: f64,
        m_s: u32,
        dt_hint: Option<f64>,
    ) -> Result<Self, StabilityError> {
        if !(k > 0.0) || !k.is_finite() || !m.is_finite() {
            return Err(StabilityError::InvalidConfig(format!(
                "need finite constants with k > 0 so level sets of V are finite, got k={k}, m={m}"
            )));
        }
        if m_s == 0 {
            return Err(StabilityError::InvalidConfig(
                "server cap must be positive".into(),
            ));
        }
        let values = lattice_values(workload)?;
        let (base, base_units) = commensurate_units(&values)?;
        let hint = dt_hint.unwrap_or_else(|| {
            1e-3 * (1.0 / params.lambda_c())
                .min(1.0 / params.lambda_s())
                .min(1.0 / (m_s as f64 * params.mu_s()))
        });
        if !(hint > 0.0) || !hint.is_finite() {
            return Err(StabilityError::InvalidConfig(format!("bad dt hint {hint}")));
        }
        let subdiv = (base / hint).ceil().max(1.0) as u64;
        let dt = base / subdiv as f64;
        let atoms: Vec<(u64, f64)> = base_units.iter().map(|&(u, p)| (u * subdiv, p)).collect();

        let slot_mass = (params.lambda_c() + params.lambda_s() + m_s as f64 * params.mu_s()) * dt;
        if !(slot_mass < 1.0) {
            return Err(StabilityError::InvalidConfig(format!(
                "slot event mass {slot_mass} >= 1; decrease dt"
            )));
        }
        Ok(Self {
            params: *params,
            atoms,
            dt,
            m_s,
            k,
            m,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn server_cap(&self) -> u32 {
        self.m_s
    }

    pub fn constants(&self) -> (f64, f64) {
        (self.k, self.m)
    }

    /// Atom values in time units, `(L_i, p_i)`.
    pub fn atom_values(&self) -> Vec<(f64, f64)> {
        self.atoms
            .iter()
            .map(|&(u, p)| (u as f64 * self.dt, p))
            .collect()
    }

    fn max_atom_units(&self) -> u64 {
        self.atoms.iter().map(|&(u, _)| u).max().unwrap_or(0)
    }

    /// Default evaluation band: `max L_i + (M_s + 1) dt`. Beyond
    /// `max L_i + M_s dt` the kernel has no `X`-dependence left, so this band
    /// is enough for a pass to extend to all `X`.
    pub fn default_x_grid_max(&self) -> f64 {
        (self.max_atom_units() + self.m_s as u64 + 1) as f64 * self.dt
    }

    /// Lyapunov value `V(X, n_s) = k mu_c X + (n_s - rho_s)^2 + m n_s`.
    pub fn lyapunov_value(&self, x: f64, n_s: u32) -> f64 {
        let dev = n_s as f64 - self.params.rho_s();
        self.k * self.params.mu_c() * x + dev * dev + self.m * n_s as f64
    }

    /// The branch distribution of one slot from lattice state
    /// `(j units, n_s)`: `(next_j, next_ns, probability)`.
    fn kernel(&self, j: u64, n_s: u32) -> Vec<(u64, u32, f64)> {
        let dt = self.dt;
        let (lc, ls, ms) = (
            self.params.lambda_c(),
            self.params.lambda_s(),
            self.params.mu_s(),
        );
        let served_full = j.min(n_s as u64);
        let mut branches = Vec::with_capacity(self.atoms.len() + 3);
        let mut event_mass = 0.0;
        for &(units, p) in &self.atoms {
            let prob = p * lc * dt;
            branches.push((j - served_full + units, n_s, prob));
            event_mass += prob;
        }
        if n_s < self.m_s {
            let prob = ls * dt;
            branches.push((j - served_full, n_s + 1, prob));
            event_mass += prob;
        }
        if n_s >= 1 {
            let prob = n_s as f64 * ms * dt;
            // A dying server is counted out for the whole slot.
            let served_dying = j.min(n_s as u64 - 1);
            branches.push((j - served_dying, n_s - 1, prob));
            event_mass += prob;
        }
        branches.push((j - served_full, n_s, 1.0 - event_mass));
        branches
    }

    fn drift_parts_at(&self, j: u64, n_s: u32) -> Result<DriftParts, StabilityError> {
        let mu_c = self.params.mu_c();
        let rho_s = self.params.rho_s();
        let mut x_term = NeumaierSum::default();
        let mut quadratic_term = NeumaierSum::default();
        let mut linear_term = NeumaierSum::default();
        for (next_j, next_ns, prob) in self.kernel(j, n_s) {
            if !(-1e-12..=1.0 + 1e-12).contains(&prob) {
                return Err(StabilityError::InvalidConfig(format!(
                    "branch probability {prob} outside [0, 1] at state (j={j}, n_s={n_s})"
                )));
            }
            let dx_units = next_j as f64 - j as f64;
            x_term.add(prob * self.k * mu_c * self.dt * dx_units);
            let (s0, s1) = (n_s as f64, next_ns as f64);
            // (s1 - rho)^2 - (s0 - rho)^2, factored to avoid cancellation.
            quadratic_term.add(prob * (s1 + s0 - 2.0 * rho_s) * (s1 - s0));
            linear_term.add(prob * self.m * (s1 - s0));
        }
        Ok(DriftParts {
            x_term: x_term.total(),
            quadratic_term: quadratic_term.total(),
            linear_term: linear_term.total(),
        })
    }

    fn lattice_units(&self, x: f64) -> Result<u64, StabilityError> {
        let ratio = x / self.dt;
        let rounded = ratio.round();
        if (ratio - rounded).abs() > 1e-6 * ratio.max(1.0) || rounded < 0.0 {
            return Err(StabilityError::OffLattice { x, dt: self.dt });
        }
        Ok(rounded as u64)
    }

    /// Exact one-slot expected drift `E[V(next) - V(now)]` at a lattice state.
    pub fn expected_drift(&self, x: f64, n_s: u32) -> Result<f64, StabilityError> {
        Ok(self.expected_drift_parts(x, n_s)?.total())
    }

    /// The drift split into the `k mu_c X` term and the quadratic and linear
    /// `n_s` terms.
    pub fn expected_drift_parts(&self, x: f64, n_s: u32) -> Result<DriftParts, StabilityError> {
        if n_s > self.m_s {
            return Err(StabilityError::InvalidConfig(format!(
                "n_s={n_s} exceeds the server cap {}",
                self.m_s
            )));
        }
        let j = self.lattice_units(x)?;
        self.drift_parts_at(j, n_s)
    }
}

/// Contributions of the three `V` terms to the expected drift.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DriftParts {
    pub x_term: f64,
    pub quadratic_term: f64,
    pub linear_term: f64,
}

impl DriftParts {
    pub fn total(&self) -> f64 {
        self.x_term + self.quadratic_term + self.linear_term
    }
}

/// Compensated (Neumaier) accumulator: the drift is a small difference of
/// `O(rho_s^2)`-sized terms.
#[derive(Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Which boundary treatment applies to a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Regime {
    /// `X >= n_s dt`, `0 < n_s < M_s`: the closed-form slot drift applies.
    Interior,
    /// `X < n_s dt`: the served amount is capped at `X`. The criterion
    /// tolerates nonnegative drift on this (finite) set.
    XBelowService,
    /// `n_s = 0`: no drain, no death.
    ServersEmpty,
    /// `n_s = M_s`: server arrivals suppressed.
    ServersAtCap,
}

impl Regime {
    fn classify(j: u64, n_s: u32, m_s: u32) -> Regime {
        if j < n_s as u64 {
            Regime::XBelowService
        } else if n_s == 0 {
            Regime::ServersEmpty
        } else if n_s == m_s {
            Regime::ServersAtCap
        } else {
            Regime::Interior
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Regime::Interior => "interior",
            Regime::XBelowService => "X below one slot of service",
            Regime::ServersEmpty => "no servers",
            Regime::ServersAtCap => "servers at cap",
        };
        f.write_str(name)
    }
}

/// A state with nonnegative expected drift.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Violation {
    pub x: f64,
    pub n_s: u32,
    pub drift: f64,
    pub regime: Regime,
}

/// Per-regime drift summary.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegimeSummary {
    pub states: usize,
    pub violations: usize,
    /// Largest drift seen in the regime; `None` when the regime is empty.
    pub max_drift: Option<f64>,
}

/// Description of the evaluated grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridInfo {
    pub dt: f64,
    pub m_s: u32,
    pub x_max: f64,
    pub x_points: u64,
    pub states: u64,
}

/// Result of [`check_drift`]: the exhaustive drift evaluation over the grid.
#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub grid: GridInfo,
    pub max_drift: f64,
    pub argmax_state: SystemState,
    /// Every state with `drift >= 0`, in grid order.
    pub violations: Vec<Violation>,
    pub interior: RegimeSummary,
    pub x_below_service: RegimeSummary,
    pub servers_empty: RegimeSummary,
    pub servers_at_cap: RegimeSummary,
    /// True when the grid covers the band beyond which the drift has no
    /// `X`-dependence, so the verdict extends to the infinite tail.
    pub extends_to_all_x: bool,
}

impl DriftReport {
    /// Violations outside the tolerated `X < n_s dt` regime.
    pub fn fatal_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.regime != Regime::XBelowService)
    }

    /// Violations confined to the tolerated regime.
    pub fn exempt_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.regime == Regime::XBelowService)
    }

    /// The drift certificate holds: every violation is confined to the finite
    /// `X < n_s dt` set and the verdict covers all `X`.
    pub fn certifies(&self) -> bool {
        self.extends_to_all_x && self.fatal_violations().next().is_none()
    }

    /// Human-readable verdict.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "drift check over n_s in [0, {}], X in [0, {}] step {} ({} states)\n",
            self.grid.m_s, self.grid.x_max, self.grid.dt, self.grid.states
        ));
        if self.extends_to_all_x {
            out.push_str(
                "beyond the evaluated band the kernel has no X-dependence left, \
                 so the verdict extends to all X\n",
            );
        }
        let fatal = self.fatal_violations().count();
        let exempt = self.exempt_violations().count();
        out.push_str(&format!(
            "max drift {:.6e} at {}; {} violation(s), {} exempt (X < n_s dt), {} fatal\n",
            self.max_drift,
            self.argmax_state,
            self.violations.len(),
            exempt,
            fatal
        ));
        for (name, summary) in [
            ("interior", &self.interior),
            ("X < n_s dt", &self.x_below_service),
            ("n_s = 0", &self.servers_empty),
            ("n_s = M_s", &self.servers_at_cap),
        ] {
            if let Some(max) = summary.max_drift {
                out.push_str(&format!(
                    "  {name}: {} states, max drift {max:.6e}, {} violation(s)\n",
                    summary.states, summary.violations
                ));
            }
        }
        out.push_str(if self.certifies() {
            "certificate HOLDS: negative drift outside a finite set"
        } else {
            "certificate FAILS"
        });
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluates the expected drift for every grid state `n_s in [0, M_s]`,
/// `X in {0, dt, ..., x_grid_max}` and classifies the violations.
///
/// Rows parallelize over `n_s`; the fold is in state order, so the report is
/// deterministic.
pub fn check_drift(config: &LyapunovConfig, x_grid_max: f64) -> DriftReport {
    let j_max = (x_grid_max / config.dt).floor() as u64;
    let x_points = j_max + 1;
    let m_s = config.m_s;

    struct Row {
        max_drift: f64,
        argmax: (u64, u32),
        violations: Vec<Violation>,
        by_regime: [(usize, usize, f64); 4],
    }

    let rows: Vec<Row> = (0..=m_s)
        .into_par_iter()
        .map(|n_s| {
            let mut row = Row {
                max_drift: f64::NEG_INFINITY,
                argmax: (0, n_s),
                violations: Vec::new(),
                by_regime: [(0usize, 0usize, f64::NEG_INFINITY); 4],
            };
            for j in 0..=j_max {
                let drift = config
                    .drift_parts_at(j, n_s)
                    .expect("grid states are valid by construction")
                    .total();
                if drift > row.max_drift {
                    row.max_drift = drift;
                    row.argmax = (j, n_s);
                }
                let regime = Regime::classify(j, n_s, m_s);
                let slot = regime as usize;
                row.by_regime[slot].0 += 1;
                if drift > row.by_regime[slot].2 {
                    row.by_regime[slot].2 = drift;
                }
                if drift >= 0.0 {
                    row.by_regime[slot].1 += 1;
                    row.violations.push(Violation {
                        x: j as f64 * config.dt,
                        n_s,
                        drift,
                        regime,
                    });
                }
            }
            row
        })
        .collect();

    let mut max_drift = f64::NEG_INFINITY;
    let mut argmax = (0u64, 0u32);
    let mut violations = Vec::new();
    let mut by_regime = [(0usize, 0usize, f64::NEG_INFINITY); 4];
    for row in rows {
        if row.max_drift > max_drift {
            max_drift = row.max_drift;
            argmax = row.argmax;
        }
        violations.extend(row.violations);
        for (acc, r) in by_regime.iter_mut().zip(row.by_regime) {
            acc.0 += r.0;
            acc.1 += r.1;
            acc.2 = acc.2.max(r.2);
        }
    }

    let summarize = |slot: usize| RegimeSummary {
        states: by_regime[slot].0,
        violations: by_regime[slot].1,
        max_drift: (by_regime[slot].0 > 0).then_some(by_regime[slot].2),
    };

    DriftReport {
        grid: GridInfo {
            dt: config.dt,
            m_s,
            x_max: j_max as f64 * config.dt,
            x_points,
            states: x_points * (m_s as u64 + 1),
        },
        max_drift,
        argmax_state: SystemState::Workload {
            x: argmax.0 as f64 * config.dt,
            n_s: argmax.1,
        },
        violations,
        interior: summarize(Regime::Interior as usize),
        x_below_service: summarize(Regime::XBelowService as usize),
        servers_empty: summarize(Regime::ServersEmpty as usize),
        servers_at_cap: summarize(Regime::ServersAtCap as usize),
        extends_to_all_x: j_max >= config.max_atom_units() + m_s as u64,
    }
}

/// [`check_drift`] over the default band.
pub fn check_drift_default(config: &LyapunovConfig) -> DriftReport {
    check_drift(config, config.default_x_grid_max())
}
