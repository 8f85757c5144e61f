//! Direct solve of the level-truncated chain, used as an oracle for the
//! matrix-geometric route.
//!
//! The chain on `{0..=n_c_max} x {0..=m_s}` is assembled state by state from
//! the transition rates (independently of the block construction) and the
//! global balance equations are solved by banded Gaussian elimination on the
//! transposed generator, grounded at one state whose unknown is fixed to 1.
//! The transposed grounded generator is column diagonally dominant, so
//! elimination without pivoting is stable, and its inverse is made of
//! expected occupation times before hitting the grounded state — so the
//! ground must be a frequently visited state or the system is exponentially
//! ill-conditioned. We ground at (0, floor(rho_s)), near the stationary mode;
//! with `m_s = 0` there are no departures and the only state reachable from
//! everywhere is the top corner, so the ground moves there.

use super::{EquilibriumSolution, Moments, QbdError};
use crate::model::ModelParams;

const MAX_STATES: usize = 200_000;

/// Dense banded matrix stored by diagonals; band half-width `half`.
struct Banded {
    n: usize,
    half: usize,
    data: Vec<f64>,
}

impl Banded {
    fn zeros(n: usize, half: usize) -> Self {
        Self {
            n,
            half,
            data: vec![0.0; n * (2 * half + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(
            j + self.half >= i && j <= i + self.half,
            "({i},{j}) outside band"
        );
        i * (2 * self.half + 1) + (j + self.half - i)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// In-place LU without pivoting; errors on a vanishing pivot.
    fn lu_in_place(&mut self) -> Result<(), QbdError> {
        for k in 0..self.n {
            let pivot = self.get(k, k);
            if !(pivot.is_finite() && pivot != 0.0) {
                return Err(QbdError::SingularGenerator);
            }
            let i_end = (k + self.half).min(self.n - 1);
            for i in k + 1..=i_end {
                let l = self.get(i, k) / pivot;
                self.set(i, k, l);
                if l != 0.0 {
                    let j_end = (k + self.half).min(self.n - 1);
                    for j in k + 1..=j_end {
                        let delta = l * self.get(k, j);
                        self.add(i, j, -delta);
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` given the in-place LU factors.
    #[allow(clippy::needless_range_loop)]
    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let j_start = i.saturating_sub(self.half);
            let mut acc = b[i];
            for j in j_start..i {
                acc -= self.get(i, j) * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let j_end = (i + self.half).min(n - 1);
            let mut acc = b[i];
            for j in i + 1..=j_end {
                acc -= self.get(i, j) * b[j];
            }
            b[i] = acc / self.get(i, i);
        }
    }
}

/// Enumerates the outgoing transitions of state `(n_c, n_s)` of the truncated
/// chain: arrivals are suppressed at `n_c = n_c_max` (reflecting truncation)
/// and server arrivals at `n_s = m_s`.
fn transitions(
    params: &ModelParams,
    n_c: u32,
    n_s: u32,
    n_c_max: u32,
    m_s: u32,
) -> impl Iterator<Item = ((u32, u32), f64)> {
    let mut out = Vec::with_capacity(4);
    if n_c < n_c_max {
        out.push(((n_c + 1, n_s), params.lambda_c()));
    }
    if n_c >= 1 && n_s >= 1 {
        out.push(((n_c - 1, n_s), n_s as f64 * params.mu_c()));
    }
    if n_s < m_s {
        out.push(((n_c, n_s + 1), params.lambda_s()));
    }
    if n_s >= 1 {
        out.push(((n_c, n_s - 1), n_s as f64 * params.mu_s()));
    }
    out.into_iter()
}

/// Solves the global balance equations of the truncated chain directly.
///
/// Accepts `m_s = 0` (no servers ever: mass piles up at the reflecting level).
/// The result carries the full level list, a zero tail, and `r = None`.
pub fn brute_force_truncated(
    params: &ModelParams,
    m_s: u32,
    n_c_max: u32,
) -> Result<EquilibriumSolution, QbdError> {
    let phases = m_s as usize + 1;
    let levels = n_c_max as usize + 1;
    let n = phases * levels;
    if n > MAX_STATES {
        return Err(QbdError::TooManyStates {
            states: n,
            max: MAX_STATES,
        });
    }
    let index = |n_c: u32, n_s: u32| n_c as usize * phases + n_s as usize;

    let ground = if m_s == 0 {
        index(n_c_max, 0)
    } else {
        index(0, (params.rho_s().floor() as u32).min(m_s))
    };
    // Deleting the ground row and column shifts indices above it down by one;
    // band half-width is preserved (level moves shift the index by `phases`,
    // phase moves by 1).
    let reduced = |s: usize| if s > ground { s - 1 } else { s };
    let half = phases;
    let mut a = Banded::zeros(n - 1, half);
    let mut rhs = vec![0.0; n - 1];
    for n_c in 0..=n_c_max {
        for n_s in 0..=m_s {
            let from = index(n_c, n_s);
            let mut out_rate = 0.0;
            for ((tc, ts), rate) in transitions(params, n_c, n_s, n_c_max, m_s) {
                let to = index(tc, ts);
                out_rate += rate;
                if to == ground {
                    continue; // the dropped balance equation
                }
                if from == ground {
                    // Known unknown x[ground] = 1 moves to the right-hand side.
                    rhs[reduced(to)] -= rate;
                } else {
                    a.add(reduced(to), reduced(from), rate);
                }
            }
            if from != ground {
                let f = reduced(from);
                a.add(f, f, -out_rate);
            }
        }
    }

    a.lu_in_place()?;
    a.solve(&mut rhs);

    let mut pi = rhs;
    pi.insert(ground, 1.0);
    let scale = pi.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    for v in &mut pi {
        // The grounded system is an M-matrix solve, so negatives can only be
        // roundoff at the bottom of the scale.
        assert!(*v >= -1e-9 * scale, "negative stationary mass {v}");
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(QbdError::SingularGenerator);
    }
    for v in &mut pi {
        *v /= total;
    }

    // Moments by direct summation over the full truncated support.
    let mut m = Moments {
        e_nc: 0.0,
        e_ns: 0.0,
        e_ns_fact2: 0.0,
        e_nc_ns: 0.0,
        cov_nc_ns: 0.0,
        p_empty: 0.0,
        g0_1: 0.0,
        g0_2: 0.0,
    };
    let mut phase_marginal = vec![0.0; phases];
    let mut phase_partial_nc = vec![0.0; phases];
    let mut pi_levels = Vec::with_capacity(levels);
    for n_c in 0..=n_c_max {
        let mut level = vec![0.0; phases];
        for n_s in 0..=m_s {
            let p = pi[index(n_c, n_s)];
            let (c, s) = (n_c as f64, n_s as f64);
            level[n_s as usize] = p;
            m.e_nc += c * p;
            m.e_ns += s * p;
            m.e_ns_fact2 += s * (s - 1.0) * p;
            m.e_nc_ns += c * s * p;
            if n_c == 0 {
                m.p_empty += p;
                m.g0_1 += s * p;
                m.g0_2 += s * (s - 1.0) * p;
            }
            phase_marginal[n_s as usize] += p;
            phase_partial_nc[n_s as usize] += c * p;
        }
        pi_levels.push(level);
    }
    m.cov_nc_ns = m.e_nc_ns - m.e_nc * m.e_ns;

    Ok(EquilibriumSolution {
        m_s,
        r: None,
        spectral_radius: None,
        pi_levels,
        tail_mass: 0.0,
        moments: m,
        phase_marginal,
        phase_partial_nc,
    })
}

/// Largest absolute imbalance between flow into and out of any state of the
/// truncated chain, scaled by the total event rate. Zero for the exact
/// stationary distribution.
pub fn global_balance_residual(
    params: &ModelParams,
    m_s: u32,
    n_c_max: u32,
    sol: &EquilibriumSolution,
) -> f64 {
    let phases = m_s as usize + 1;
    let prob = |n_c: u32, n_s: u32| -> f64 {
        sol.pi_levels
            .get(n_c as usize)
            .and_then(|level| level.get(n_s as usize))
            .copied()
            .unwrap_or(0.0)
    };
    let mut inflow = vec![0.0; phases * (n_c_max as usize + 1)];
    let mut outflow = vec![0.0; phases * (n_c_max as usize + 1)];
    for n_c in 0..=n_c_max {
        for n_s in 0..=m_s {
            let p = prob(n_c, n_s);
            for ((tc, ts), rate) in transitions(params, n_c, n_s, n_c_max, m_s) {
                outflow[n_c as usize * phases + n_s as usize] += p * rate;
                inflow[tc as usize * phases + ts as usize] += p * rate;
            }
        }
    }
    let rate_scale =
        params.lambda_c() + params.lambda_s() + m_s as f64 * (params.mu_c() + params.mu_s());
    inflow
        .iter()
        .zip(&outflow)
        .map(|(i, o)| (i - o).abs())
        .fold(0.0, f64::max)
        / rate_scale
}
