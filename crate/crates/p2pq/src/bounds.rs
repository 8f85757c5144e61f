//! Closed-form queue-length bounds, Little's-law conversion, and the
//! bound/identity evaluation harness.
//!
//! For a stable system the mean queue length is conjectured to satisfy
//!
//! ```text
//! rho_c / (rho_s - rho_c)  <  E[n_c]  <  (mu_c/mu_s + 1) * rho_c / (rho_s - rho_c)
//! ```
//!
//! The lower bound is exactly the mean queue length of a static system with
//! `rho_s` servers, so a system with server churn never beats its static
//! counterpart; the upper bound stays proportional to the lower with the
//! fixed coefficient `mu_c/mu_s + 1`. These are conjectured bounds, so the
//! harness asserts them against solved values instead of trusting them.

use crate::model::ModelParams;
use crate::qbd::Moments;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("bounds are defined only for rho_c < rho_s (got rho_c={rho_c}, rho_s={rho_s})")]
    NotStrictlyStable { rho_c: f64, rho_s: f64 },
}

/// Lower and upper queue-length bounds for a stable parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
    pub rho_c: f64,
    pub rho_s: f64,
    /// `upper / lower`, always exactly `mu_c / mu_s + 1`.
    pub ratio: f64,
}

/// `lower = rho_c / (rho_s - rho_c)`, `upper = (mu_c/mu_s + 1) * lower`.
pub fn queue_length_bounds(params: &ModelParams) -> Result<BoundPair, BoundsError> {
    let (rho_c, rho_s) = params.loads();
    if !(rho_c < rho_s) {
        return Err(BoundsError::NotStrictlyStable { rho_c, rho_s });
    }
    let lower = rho_c / (rho_s - rho_c);
    let ratio = params.mu_c() / params.mu_s() + 1.0;
    Ok(BoundPair {
        lower,
        upper: ratio * lower,
        rho_c,
        rho_s,
        ratio,
    })
}

/// Little's law: `E[T] = E[n_c] / lambda_c`.
pub fn sojourn_from_queue_length(e_nc: f64, lambda_c: f64) -> f64 {
    e_nc / lambda_c
}

/// The mean queue length of the static reference system with `rho_s` servers;
/// coincides with the lower bound exactly.
pub fn static_baseline(params: &ModelParams) -> Result<f64, BoundsError> {
    Ok(queue_length_bounds(params)?.lower)
}

/// Residuals of the exact moment identities and the bound sandwich, evaluated
/// on a solved (or simulated) moment set.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IdentityReport {
    pub rho_c: f64,
    pub rho_s: f64,
    /// `E[n_s] = rho_s`
    pub e_ns_rel: f64,
    /// `E[n_s(n_s-1)] = rho_s E[n_s]`
    pub factorial_rel: f64,
    /// `E[n_s 1{n_c=0}] = rho_s - rho_c`
    pub g0_rel: f64,
    /// `rho_c E[n_c] = E[n_s n_c] - E[n_s] + G0_1`
    pub balance_rel: f64,
    /// `lambda_c E[n_s] + lambda_s E[n_c]
    ///    = mu_c E[n_s(n_s-1)] + mu_s E[n_s n_c] + mu_c E[n_s] - mu_c (G0_1 + G0_2)`
    pub cross_rel: f64,
    /// `E[n_c] = (E[n_s n_c] - rho_c) / rho_c`
    pub simplified_rel: f64,
    /// `E[n_c] = rho_c/(rho_s-rho_c) - Cov[n_c,n_s]/(rho_s-rho_c)`
    pub covariance_rel: f64,
    /// `E[n_s(n_s-1) | n_c=0] / E[n_s | n_c=0]`, conjectured to exceed rho_s.
    pub empty_conditional_ratio: f64,
    pub e_nc: f64,
    pub lower: f64,
    pub upper: f64,
    pub sandwich_ok: bool,
    /// `E[n_c] / lower` and `E[n_c] / upper`: tightness trackers.
    pub ratio_to_lower: f64,
    pub ratio_to_upper: f64,
}

impl IdentityReport {
    /// The largest identity residual.
    pub fn max_identity_rel(&self) -> f64 {
        self.e_ns_rel
            .max(self.factorial_rel)
            .max(self.g0_rel)
            .max(self.balance_rel)
            .max(self.cross_rel)
            .max(self.simplified_rel)
            .max(self.covariance_rel)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Evaluates every identity and the bound sandwich against a moment set.
pub fn evaluate_identities(
    params: &ModelParams,
    moments: &Moments,
) -> Result<IdentityReport, BoundsError> {
    let bounds = queue_length_bounds(params)?;
    let (rho_c, rho_s) = params.loads();
    let m = moments;
    let gap = rho_s - rho_c;

    let lhs = params.lambda_c() * m.e_ns + params.lambda_s() * m.e_nc;
    let rhs = params.mu_c() * m.e_ns_fact2 + params.mu_s() * m.e_nc_ns + params.mu_c() * m.e_ns
        - params.mu_c() * (m.g0_1 + m.g0_2);

    Ok(IdentityReport {
        rho_c,
        rho_s,
        e_ns_rel: rel(m.e_ns, rho_s),
        factorial_rel: rel(m.e_ns_fact2, rho_s * m.e_ns),
        g0_rel: rel(m.g0_1, gap),
        balance_rel: rel(rho_c * m.e_nc, m.e_nc_ns - m.e_ns + m.g0_1),
        cross_rel: rel(lhs, rhs),
        simplified_rel: rel(m.e_nc, (m.e_nc_ns - rho_c) / rho_c),
        covariance_rel: rel(m.e_nc, rho_c / gap - m.cov_nc_ns / gap),
        empty_conditional_ratio: m.g0_2 / m.g0_1,
        e_nc: m.e_nc,
        lower: bounds.lower,
        upper: bounds.upper,
        sandwich_ok: bounds.lower < m.e_nc && m.e_nc < bounds.upper,
        ratio_to_lower: m.e_nc / bounds.lower,
        ratio_to_upper: m.e_nc / bounds.upper,
    })
}

/// Exact header of the sweep CSV consumed by the figure scripts.
pub const SWEEP_CSV_HEADER: &str = "rho_c,E_nc_solved,lower,upper,E_T";

/// One sweep row: solved mean queue length, both bounds, and the sojourn
/// time from Little's law.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepRow {
    pub rho_c: f64,
    pub e_nc_solved: f64,
    pub lower: f64,
    pub upper: f64,
    pub e_t: f64,
}

impl SweepRow {
    pub fn new(params: &ModelParams, e_nc: f64) -> Result<Self, BoundsError> {
        let bounds = queue_length_bounds(params)?;
        Ok(Self {
            rho_c: params.rho_c(),
            e_nc_solved: e_nc,
            lower: bounds.lower,
            upper: bounds.upper,
            e_t: sojourn_from_queue_length(e_nc, params.lambda_c()),
        })
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.rho_c, self.e_nc_solved, self.lower, self.upper, self.e_t
        )
    }
}
