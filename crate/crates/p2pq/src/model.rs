//! Model parameters, state types, workload distributions, and the extended
//! Kendall notation shared by every other module.
//!
//! A P2P queue is written `A/B/(C/E)`: `A/B` describe job arrivals and job
//! service requirements, `(C/E)` describe server arrivals and server
//! lifetimes. The four rate parameters are held by [`ModelParams`]; the two
//! dimensionless loads derived from them, `rho_c = lambda_c / mu_c` (demand)
//! and `rho_s = lambda_s / mu_s` (mean number of live servers), govern
//! stability: the system is stable iff `rho_c < rho_s`.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Probability mass mismatch allowed when validating discrete distributions.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("rate {name} must be strictly positive and finite, got {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("malformed notation at index {position}: expected {expected}")]
    MalformedNotation {
        position: usize,
        expected: &'static str,
    },
    #[error("invalid workload distribution: {0}")]
    InvalidWorkload(String),
    #[error("missing key `{0}` in config")]
    MissingKey(String),
    #[error("could not parse value for key `{key}`: `{value}`")]
    BadValue { key: String, value: String },
}

/// The four rates of the job-server process.
///
/// `lambda_c` jobs arrive per unit time, each carrying a service requirement
/// of mean `1/mu_c` single-server time units; servers arrive at `lambda_s`
/// and each lives `Exp(mu_s)`-distributed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    lambda_c: f64,
    mu_c: f64,
    lambda_s: f64,
    mu_s: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawParams {
    lambda_c: f64,
    mu_c: f64,
    lambda_s: f64,
    mu_s: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = ModelError;
    fn try_from(raw: RawParams) -> Result<Self, ModelError> {
        ModelParams::new(raw.lambda_c, raw.mu_c, raw.lambda_s, raw.mu_s)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            lambda_c: p.lambda_c,
            mu_c: p.mu_c,
            lambda_s: p.lambda_s,
            mu_s: p.mu_s,
        }
    }
}

impl ModelParams {
    pub fn new(lambda_c: f64, mu_c: f64, lambda_s: f64, mu_s: f64) -> Result<Self, ModelError> {
        for (name, value) in [
            ("lambda_c", lambda_c),
            ("mu_c", mu_c),
            ("lambda_s", lambda_s),
            ("mu_s", mu_s),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidRate { name, value });
            }
        }
        Ok(Self {
            lambda_c,
            mu_c,
            lambda_s,
            mu_s,
        })
    }

    /// Convenience constructor from loads: `lambda_c = rho_c * mu_c`,
    /// `lambda_s = rho_s * mu_s`.
    pub fn from_loads(rho_c: f64, mu_c: f64, rho_s: f64, mu_s: f64) -> Result<Self, ModelError> {
        Self::new(rho_c * mu_c, mu_c, rho_s * mu_s, mu_s)
    }

    pub fn lambda_c(&self) -> f64 {
        self.lambda_c
    }

    pub fn mu_c(&self) -> f64 {
        self.mu_c
    }

    pub fn lambda_s(&self) -> f64 {
        self.lambda_s
    }

    pub fn mu_s(&self) -> f64 {
        self.mu_s
    }

    /// Job load demand `rho_c = lambda_c / mu_c`. Computed on demand so it can
    /// never diverge from the rates.
    pub fn rho_c(&self) -> f64 {
        self.lambda_c / self.mu_c
    }

    /// Service capacity `rho_s = lambda_s / mu_s`, the mean number of live
    /// servers.
    pub fn rho_s(&self) -> f64 {
        self.lambda_s / self.mu_s
    }

    /// Both loads at once.
    pub fn loads(&self) -> (f64, f64) {
        (self.rho_c(), self.rho_s())
    }

    /// Stability predicate: the system is stable iff `rho_c < rho_s`
    /// (strict; the boundary is excluded).
    pub fn is_stable(&self) -> bool {
        self.rho_c() < self.rho_s()
    }

    /// Renders the flat `key = value` config format.
    pub fn to_kv_string(&self) -> String {
        format!(
            "lambda_c = {}\nmu_c = {}\nlambda_s = {}\nmu_s = {}\n",
            self.lambda_c, self.mu_c, self.lambda_s, self.mu_s
        )
    }

    /// Parses the flat `key = value` config format. Lines starting with `#`
    /// and blank lines are ignored; later occurrences of a key win.
    pub fn from_kv_str(text: &str) -> Result<Self, ModelError> {
        let mut fields = [None::<f64>; 4];
        const KEYS: [&str; 4] = ["lambda_c", "mu_c", "lambda_s", "mu_s"];
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if let Some(slot) = KEYS.iter().position(|k| *k == key) {
                let parsed = value.parse::<f64>().map_err(|_| ModelError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                })?;
                fields[slot] = Some(parsed);
            }
        }
        let get = |i: usize| fields[i].ok_or_else(|| ModelError::MissingKey(KEYS[i].to_string()));
        Self::new(get(0)?, get(1)?, get(2)?, get(3)?)
    }
}

/// A point of the job-server process.
///
/// `Counts` tracks the number of jobs (used with exponential workloads, where
/// the job count is Markov); `Workload` tracks the aggregate remaining
/// single-server service time `X`, which is Markov for any workload
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SystemState {
    Counts { n_c: u64, n_s: u32 },
    Workload { x: f64, n_s: u32 },
}

impl fmt::Display for SystemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemState::Counts { n_c, n_s } => write!(f, "(n_c={n_c}, n_s={n_s})"),
            SystemState::Workload { x, n_s } => write!(f, "(X={x}, n_s={n_s})"),
        }
    }
}

/// Job service-requirement distribution, in single-server time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WorkloadDist {
    Exponential {
        rate: f64,
    },
    Deterministic {
        value: f64,
    },
    /// Finite support `{(L_i, p_i)}`.
    DiscreteFinite {
        atoms: Vec<(f64, f64)>,
    },
    /// Mixture of exponentials `{(rate_i, weight_i)}`.
    HyperExponential {
        branches: Vec<(f64, f64)>,
    },
}

impl WorkloadDist {
    pub fn exponential(rate: f64) -> Result<Self, ModelError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(ModelError::InvalidWorkload(format!(
                "exponential rate {rate}"
            )));
        }
        Ok(Self::Exponential { rate })
    }

    pub fn deterministic(value: f64) -> Result<Self, ModelError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(ModelError::InvalidWorkload(format!(
                "deterministic value {value}"
            )));
        }
        Ok(Self::Deterministic { value })
    }

    pub fn discrete(atoms: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        if atoms.is_empty() {
            return Err(ModelError::InvalidWorkload("no atoms".into()));
        }
        for &(l, p) in &atoms {
            if !(l.is_finite() && l > 0.0) {
                return Err(ModelError::InvalidWorkload(format!("atom value {l}")));
            }
            if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                return Err(ModelError::InvalidWorkload(format!("atom probability {p}")));
            }
        }
        let total: f64 = atoms.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(ModelError::InvalidWorkload(format!(
                "atom probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self::DiscreteFinite { atoms })
    }

    pub fn hyperexponential(branches: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        if branches.is_empty() {
            return Err(ModelError::InvalidWorkload("no branches".into()));
        }
        for &(r, w) in &branches {
            if !(r.is_finite() && r > 0.0) {
                return Err(ModelError::InvalidWorkload(format!("branch rate {r}")));
            }
            if !(w.is_finite() && w > 0.0 && w <= 1.0) {
                return Err(ModelError::InvalidWorkload(format!("branch weight {w}")));
            }
        }
        let total: f64 = branches.iter().map(|&(_, w)| w).sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(ModelError::InvalidWorkload(format!(
                "branch weights sum to {total}, not 1"
            )));
        }
        Ok(Self::HyperExponential { branches })
    }

    /// Two-branch hyperexponential with given mean and squared coefficient of
    /// variation `scv > 1`, using balanced means (`p_i / rate_i` equal).
    pub fn hyperexponential_fit(mean: f64, scv: f64) -> Result<Self, ModelError> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(ModelError::InvalidWorkload(format!("mean {mean}")));
        }
        if !(scv.is_finite() && scv > 1.0) {
            return Err(ModelError::InvalidWorkload(format!(
                "squared coefficient of variation {scv} must exceed 1"
            )));
        }
        let p1 = 0.5 * (1.0 + ((scv - 1.0) / (scv + 1.0)).sqrt());
        let p2 = 1.0 - p1;
        let r1 = 2.0 * p1 / mean;
        let r2 = 2.0 * p2 / mean;
        Self::hyperexponential(vec![(r1, p1), (r2, p2)])
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Deterministic { value } => *value,
            Self::DiscreteFinite { atoms } => atoms.iter().map(|&(l, p)| l * p).sum(),
            Self::HyperExponential { branches } => branches.iter().map(|&(r, w)| w / r).sum(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 2.0 / (rate * rate),
            Self::Deterministic { value } => value * value,
            Self::DiscreteFinite { atoms } => atoms.iter().map(|&(l, p)| l * l * p).sum(),
            Self::HyperExponential { branches } => {
                branches.iter().map(|&(r, w)| 2.0 * w / (r * r)).sum()
            }
        }
    }

    /// Squared coefficient of variation `Var/mean^2`.
    pub fn scv(&self) -> f64 {
        let m = self.mean();
        self.second_moment() / (m * m) - 1.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential { rate } => Exp::new(*rate).unwrap().sample(rng),
            Self::Deterministic { value } => *value,
            Self::DiscreteFinite { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(l, p) in atoms {
                    acc += p;
                    if u < acc {
                        return l;
                    }
                }
                atoms.last().unwrap().0
            }
            Self::HyperExponential { branches } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(r, w) in branches {
                    acc += w;
                    if u < acc {
                        return Exp::new(r).unwrap().sample(rng);
                    }
                }
                Exp::new(branches.last().unwrap().0).unwrap().sample(rng)
            }
        }
    }

    /// The notation tag this distribution falls under.
    pub fn tag(&self) -> Tag {
        match self {
            Self::Exponential { .. } => Tag::M,
            Self::Deterministic { .. } => Tag::D,
            Self::DiscreteFinite { .. } | Self::HyperExponential { .. } => Tag::G,
        }
    }
}

/// One slot of the `A/B/(C/E)` notation: memoryless, deterministic, or
/// general.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    M,
    D,
    G,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::M, Tag::D, Tag::G];

    fn from_char(c: char) -> Option<Self> {
        match c {
            'M' => Some(Tag::M),
            'D' => Some(Tag::D),
            'G' => Some(Tag::G),
            _ => None,
        }
    }

    pub fn as_char(&self) -> char {
        match self {
            Tag::M => 'M',
            Tag::D => 'D',
            Tag::G => 'G',
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// The four tags of `A/B/(C/E)`: job arrivals, job workload, server arrivals,
/// server lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Notation {
    pub job_arrival: Tag,
    pub workload: Tag,
    pub server_arrival: Tag,
    pub server_lifetime: Tag,
}

impl Notation {
    pub fn new(job_arrival: Tag, workload: Tag, server_arrival: Tag, server_lifetime: Tag) -> Self {
        Self {
            job_arrival,
            workload,
            server_arrival,
            server_lifetime,
        }
    }

    /// Canonical rendering `A/B/(C/E)`.
    pub fn render(&self) -> String {
        format!(
            "{}/{}/({}/{})",
            self.job_arrival, self.workload, self.server_arrival, self.server_lifetime
        )
    }
}

impl fmt::Display for Notation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Parses the extended Kendall notation `A/B/(C/E)`.
///
/// Grammar: each slot is a single letter from `{M, D, G}` (case-sensitive);
/// the server pair must be parenthesized. Surrounding whitespace is allowed.
/// On failure the error carries the byte index of the first offending
/// character within the trimmed text.
pub fn parse_notation(text: &str) -> Result<Notation, ModelError> {
    let trimmed = text.trim();
    let chars: Vec<char> = trimmed.chars().collect();
    let mut pos = 0usize;

    let mut expect = |pred: fn(char) -> bool, expected: &'static str| -> Result<char, ModelError> {
        match chars.get(pos) {
            Some(&c) if pred(c) => {
                pos += 1;
                Ok(c)
            }
            _ => Err(ModelError::MalformedNotation {
                position: pos,
                expected,
            }),
        }
    };

    let is_tag = |c: char| Tag::from_char(c).is_some();
    let job_arrival = Tag::from_char(expect(is_tag, "one of M, D, G")?).unwrap();
    expect(|c| c == '/', "`/`")?;
    let workload = Tag::from_char(expect(is_tag, "one of M, D, G")?).unwrap();
    expect(|c| c == '/', "`/`")?;
    expect(|c| c == '(', "`(`")?;
    let server_arrival = Tag::from_char(expect(is_tag, "one of M, D, G")?).unwrap();
    expect(|c| c == '/', "`/`")?;
    let server_lifetime = Tag::from_char(expect(is_tag, "one of M, D, G")?).unwrap();
    expect(|c| c == ')', "`)`")?;
    if pos != chars.len() {
        return Err(ModelError::MalformedNotation {
            position: pos,
            expected: "end of input",
        });
    }
    Ok(Notation::new(
        job_arrival,
        workload,
        server_arrival,
        server_lifetime,
    ))
}

/// A parsed notation together with its rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub notation: Notation,
    pub params: ModelParams,
}

impl ModelSpec {
    pub fn new(notation: Notation, params: ModelParams) -> Self {
        Self { notation, params }
    }

    /// The default workload distribution implied by the workload tag:
    /// `M -> Exp(mu_c)`, `D -> constant 1/mu_c`. `G` carries no default and
    /// must be supplied explicitly.
    pub fn default_workload(&self) -> Option<WorkloadDist> {
        match self.notation.workload {
            Tag::M => Some(WorkloadDist::Exponential {
                rate: self.params.mu_c(),
            }),
            Tag::D => Some(WorkloadDist::Deterministic {
                value: 1.0 / self.params.mu_c(),
            }),
            Tag::G => None,
        }
    }
}
