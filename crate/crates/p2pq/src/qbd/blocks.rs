//! Generator blocks of the QBD form of the job-server chain.

use crate::model::ModelParams;
use nalgebra::DMatrix;

/// Block-tridiagonal generator blocks, phase = server count in `0..=m_s`.
///
/// * `a0` — level-up rates (job arrival), `lambda_c * I`;
/// * `a1` — within-level rates (server birth/death) plus the diagonal of
///   negative row sums;
/// * `a2` — level-down rates (job departure), `diag(0, mu_c, 2*mu_c, ...)`;
/// * `b1` — within-level block at level 0, where no departures exist.
///
/// `a0 + a1 + a2` has exactly zero row sums; `b1` is `a1` with the departure
/// rates folded back into the diagonal so that `[b1 | a0]` rows sum to zero.
#[derive(Debug, Clone)]
pub struct QbdBlocks {
    pub m_s: u32,
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub b1: DMatrix<f64>,
}

impl QbdBlocks {
    /// Number of phases, `m_s + 1`.
    pub fn phases(&self) -> usize {
        self.m_s as usize + 1
    }

    /// Generator of the autonomous phase (server) process,
    /// `a0 + a1 + a2`.
    pub fn phase_generator(&self) -> DMatrix<f64> {
        &self.a0 + &self.a1 + &self.a2
    }
}

/// Default phase truncation: the server marginal is Poisson(`rho_s`), so ten
/// standard deviations of headroom leave tail mass below 1e-10 at the scales
/// studied here.
pub fn default_phase_cap(params: &ModelParams) -> u32 {
    let rho_s = params.rho_s();
    (rho_s + 10.0 * rho_s.sqrt()).ceil() as u32
}

/// Builds the QBD blocks for the job-server chain with phase cap `m_s >= 1`.
pub fn build_blocks(params: &ModelParams, m_s: u32) -> QbdBlocks {
    assert!(m_s >= 1, "phase cap must be at least 1");
    let n = m_s as usize + 1;
    let (lc, mc, ls, ms) = (
        params.lambda_c(),
        params.mu_c(),
        params.lambda_s(),
        params.mu_s(),
    );

    let a0 = DMatrix::identity(n, n) * lc;
    let a2 = DMatrix::from_fn(n, n, |i, j| if i == j { i as f64 * mc } else { 0.0 });

    let mut a1 = DMatrix::zeros(n, n);
    for i in 0..n {
        if i + 1 < n {
            a1[(i, i + 1)] = ls;
        }
        if i >= 1 {
            a1[(i, i - 1)] = i as f64 * ms;
        }
    }
    for i in 0..n {
        let server_moves = if i + 1 < n { ls } else { 0.0 } + i as f64 * ms;
        a1[(i, i)] = -(lc + i as f64 * mc + server_moves);
    }

    // Level 0 has no departures: fold the a2 diagonal back in.
    let mut b1 = a1.clone();
    for i in 0..n {
        b1[(i, i)] += a2[(i, i)];
    }

    QbdBlocks {
        m_s,
        a0,
        a1,
        a2,
        b1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_sum_max(m: &DMatrix<f64>) -> f64 {
        (0..m.nrows())
            .map(|i| m.row(i).sum().abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn two_phase_blocks_match_the_rates_verbatim() {
        let params = ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let b = build_blocks(&params, 1);
        assert_eq!(b.a0, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(b.a2, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        // Phase 0: arrival lambda_s up; phase 1 (= m_s): death mu_s down only.
        assert_eq!(b.a1, DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -3.0]));
        assert_eq!(b.b1, DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0]));
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let params = ModelParams::new(50.0, 10.0, 10.0, 1.0).unwrap();
        let b = build_blocks(&params, 40);
        let total = &b.a0 + &b.a1 + &b.a2;
        assert!(
            row_sum_max(&total) <= 1e-12,
            "row sums {}",
            row_sum_max(&total)
        );
        // Boundary rows of [b1 | a0] sum to zero as well.
        let boundary = &b.b1 + &b.a0;
        assert!(row_sum_max(&boundary) <= 1e-12);
    }

    #[test]
    fn default_phase_cap_has_poisson_headroom() {
        let params = ModelParams::new(8.0, 1.0, 10.0, 1.0).unwrap();
        assert_eq!(default_phase_cap(&params), 42);
    }
}
