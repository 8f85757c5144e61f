//! Stationary vector of a small generator by Grassmann-Taksar-Heyman
//! elimination.
//!
//! GTH uses only the off-diagonal rates and performs no subtractions, so it
//! delivers componentwise accurate stationary probabilities even when the
//! generator rows fail to sum to zero by a small residual (as happens when a
//! censored generator is assembled from an iteratively computed matrix).

use super::QbdError;
use nalgebra::{DMatrix, DVector};

/// Computes the stationary distribution of an irreducible generator
/// (off-diagonals nonnegative; the diagonal is ignored).
pub fn gth_stationary(generator: &DMatrix<f64>) -> Result<DVector<f64>, QbdError> {
    let n = generator.nrows();
    assert_eq!(n, generator.ncols(), "generator must be square");
    assert!(n >= 1);
    let mut a = generator.clone();
    let mut total_out = vec![0.0; n];

    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| a[(k, j)]).sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(QbdError::SingularBoundary);
        }
        total_out[k] = s;
        for i in 0..k {
            let f = a[(i, k)] / s;
            if f != 0.0 {
                for j in 0..k {
                    if j != i {
                        a[(i, j)] += f * a[(k, j)];
                    }
                }
            }
        }
    }

    let mut u = DVector::zeros(n);
    u[0] = 1.0;
    for k in 1..n {
        let mut acc = 0.0;
        for i in 0..k {
            acc += u[i] * a[(i, k)];
        }
        u[k] = acc / total_out[k];
    }
    let mass = u.sum();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(QbdError::SingularBoundary);
    }
    Ok(u / mass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_chain() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 3.0, -3.0]);
        let pi = gth_stationary(&q).unwrap();
        assert!((pi[0] - 0.75).abs() < 1e-15);
        assert!((pi[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn truncated_server_process_is_truncated_poisson() {
        // Birth-death chain: up lambda, down i*mu. Stationary mass is
        // proportional to rho^i / i!.
        let (lambda, mu, cap) = (10.0, 1.0, 30usize);
        let n = cap + 1;
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            if i + 1 < n {
                q[(i, i + 1)] = lambda;
            }
            if i >= 1 {
                q[(i, i - 1)] = i as f64 * mu;
            }
            q[(i, i)] = -(if i + 1 < n { lambda } else { 0.0 } + i as f64 * mu);
        }
        let pi = gth_stationary(&q).unwrap();

        let rho: f64 = lambda / mu;
        let mut expected = vec![0.0; n];
        let mut term = 1.0;
        for (i, e) in expected.iter_mut().enumerate() {
            if i > 0 {
                term *= rho / i as f64;
            }
            *e = term;
        }
        let total: f64 = expected.iter().sum();
        for i in 0..n {
            let e = expected[i] / total;
            assert!(
                (pi[i] - e).abs() <= 1e-14 * e.max(1e-30),
                "phase {i}: {} vs {e}",
                pi[i]
            );
        }
    }

    #[test]
    fn disconnected_chain_is_rejected() {
        // No rate out of state 1 toward state 0.
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, 0.0]);
        assert_eq!(gth_stationary(&q), Err(QbdError::SingularBoundary));
    }
}
