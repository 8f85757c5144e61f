//! Workload specification strings.
//!
//! Grammar (all values decimal literals):
//!
//! ```text
//! exponential:<rate>
//! deterministic:<value>
//! hyperexp:<weight>:<rate>[,<weight>:<rate>...]
//! hyperexp:fit:<scv>                  two-branch fit with mean 1/mu_c
//! discrete:<prob>:<value>[,<prob>:<value>...]
//! ```

use crate::CliError;
use p2pq::model::WorkloadDist;

pub fn parse_spec(text: &str, mu_c: f64) -> Result<WorkloadDist, CliError> {
    let bad = |msg: &str| CliError::Invalid(format!("workload spec `{text}`: {msg}"));
    let (kind, rest) = text.split_once(':').ok_or_else(|| bad("missing `:`"))?;
    let value = |s: &str| -> Result<f64, CliError> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(&format!("`{s}` is not a number")))
    };
    let pairs = |s: &str| -> Result<Vec<(f64, f64)>, CliError> {
        s.split(',')
            .map(|pair| {
                let (a, b) = pair
                    .split_once(':')
                    .ok_or_else(|| bad("expected `a:b` pairs"))?;
                Ok((value(a)?, value(b)?))
            })
            .collect()
    };
    let dist = match kind {
        "exponential" | "exp" => WorkloadDist::exponential(value(rest)?)?,
        "deterministic" | "det" => WorkloadDist::deterministic(value(rest)?)?,
        "hyperexp" | "hyper" => {
            if let Some(scv) = rest.strip_prefix("fit:") {
                WorkloadDist::hyperexponential_fit(1.0 / mu_c, value(scv)?)?
            } else {
                // pairs arrive as weight:rate
                let branches = pairs(rest)?
                    .into_iter()
                    .map(|(w, r)| (r, w))
                    .collect::<Vec<_>>();
                WorkloadDist::hyperexponential(branches)?
            }
        }
        "discrete" => {
            let atoms = pairs(rest)?
                .into_iter()
                .map(|(p, l)| (l, p))
                .collect::<Vec<_>>();
            WorkloadDist::discrete(atoms)?
        }
        other => return Err(bad(&format!("unknown kind `{other}`"))),
    };
    Ok(dist)
}
