//! The rate matrix `R`: minimal nonnegative solution of
//! `A0 + R*A1 + R^2*A2 = 0`.
//!
//! The primary algorithm is logarithmic reduction on the uniformized chain
//! (quadratic convergence); a naive fixed-point iteration is kept as an
//! independent oracle. Both solve the same equation, so their agreement
//! certifies either.

use super::{gth_stationary, QbdBlocks, QbdError};
use nalgebra::{DMatrix, DVector};

/// Dimensionless residual `||D0 + R*D1 + R^2*D2 - R||_inf` of the uniformized
/// fixed-point equation, which equals `||A0 + R*A1 + R^2*A2||_inf / c` for
/// the uniformization constant `c`.
pub fn residual(blocks: &QbdBlocks, r: &DMatrix<f64>) -> f64 {
    let c = uniformization_constant(blocks);
    let res = &blocks.a0 + r * &blocks.a1 + r * r * &blocks.a2;
    inf_norm(&res) / c
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn uniformization_constant(blocks: &QbdBlocks) -> f64 {
    (0..blocks.phases())
        .map(|i| blocks.a1[(i, i)].abs())
        .fold(0.0, f64::max)
}

/// Rejects chains whose truncated service capacity cannot keep up with the
/// arrival rate: the mean level drift must point down for `R` to have
/// spectral radius below one.
fn check_stable(blocks: &QbdBlocks) -> Result<(), QbdError> {
    let phi = gth_stationary(&blocks.phase_generator()).map_err(|_| QbdError::SingularGenerator)?;
    let up = phi.dot(&(&blocks.a0 * DVector::repeat(blocks.phases(), 1.0)));
    let down = phi.dot(&(&blocks.a2 * DVector::repeat(blocks.phases(), 1.0)));
    if up >= down {
        return Err(QbdError::UnstableModel {
            mean_drift_up: up,
            service_capacity: down,
        });
    }
    Ok(())
}

/// Solves for `R` by logarithmic reduction.
///
/// The generator blocks are uniformized into probability blocks (which leave
/// the solution unchanged), the reduction computes the first-passage matrix
/// `G`, and `R` is recovered as `D0 * (I - D1 - D0*G)^{-1}`.
pub fn solve_r(blocks: &QbdBlocks, tol: f64, max_iter: usize) -> Result<DMatrix<f64>, QbdError> {
    assert!(tol > 0.0);
    check_stable(blocks)?;
    let n = blocks.phases();
    let c = uniformization_constant(blocks);
    let d0 = &blocks.a0 / c;
    let d1 = DMatrix::identity(n, n) + &blocks.a1 / c;
    let d2 = &blocks.a2 / c;

    let id = DMatrix::identity(n, n);
    let h = (&id - &d1).lu();
    let mut up = h.solve(&d0).ok_or(QbdError::SingularGenerator)?;
    let mut down = h.solve(&d2).ok_or(QbdError::SingularGenerator)?;
    let mut g = down.clone();
    let mut prefix = up.clone();

    let mut iterations = 0;
    loop {
        iterations += 1;
        let cross = &up * &down + &down * &up;
        let lu = (&id - cross).lu();
        let up2 = lu.solve(&(&up * &up)).ok_or(QbdError::SingularGenerator)?;
        let down2 = lu
            .solve(&(&down * &down))
            .ok_or(QbdError::SingularGenerator)?;
        let term = &prefix * &down2;
        g += &term;
        prefix *= &up2;
        up = up2;
        down = down2;
        if inf_norm(&term) <= tol * 1e-3 || inf_norm(&prefix) <= tol * 1e-3 {
            break;
        }
        if iterations >= max_iter {
            let r = recover_r(&d0, &d1, &g)?;
            return Err(QbdError::NoConvergence {
                iterations,
                residual: residual(blocks, &r),
            });
        }
    }

    let r = recover_r(&d0, &d1, &g)?;
    let res = residual(blocks, &r);
    if res > tol {
        return Err(QbdError::NoConvergence {
            iterations,
            residual: res,
        });
    }
    Ok(r)
}

fn recover_r(
    d0: &DMatrix<f64>,
    d1: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<DMatrix<f64>, QbdError> {
    let n = d0.nrows();
    let u = d1 + d0 * g;
    let inv = (DMatrix::identity(n, n) - u)
        .try_inverse()
        .ok_or(QbdError::SingularGenerator)?;
    Ok(d0 * inv)
}

/// Naive fixed-point iteration `R <- -(A0 + R^2*A2) * A1^{-1}` from `R = 0`,
/// monotone nondecreasing toward the minimal solution. Linear convergence;
/// kept as a test oracle for [`solve_r`].
pub fn solve_r_fixed_point(
    blocks: &QbdBlocks,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>, QbdError> {
    assert!(tol > 0.0);
    check_stable(blocks)?;
    let n = blocks.phases();
    let c = uniformization_constant(blocks);
    // Work on the uniformized equation R = D0 + R*D1 + R^2*D2 so the step is
    // a plain fixed-point map with contraction on the stable region.
    let d0 = &blocks.a0 / c;
    let d1 = DMatrix::identity(n, n) + &blocks.a1 / c;
    let d2 = &blocks.a2 / c;

    let mut r = DMatrix::zeros(n, n);
    for iterations in 1..=max_iter {
        let next = &d0 + &r * &d1 + &r * &r * &d2;
        let diff = inf_norm(&(&next - &r));
        r = next;
        if diff <= tol * 1e-2 {
            let res = residual(blocks, &r);
            if res <= tol {
                return Ok(r);
            }
        }
        if iterations == max_iter {
            return Err(QbdError::NoConvergence {
                iterations,
                residual: residual(blocks, &r),
            });
        }
    }
    unreachable!()
}

/// Perron root estimate of a nonnegative matrix by power iteration.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut v = DVector::repeat(n, 1.0);
    let mut estimate = 0.0;
    for _ in 0..2000 {
        let w = m * &v;
        let norm = w.amax();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w / norm;
        if (next - estimate).abs() <= 1e-14 * next.max(1.0) {
            return next;
        }
        estimate = next;
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::qbd::build_blocks;

    fn fig1_params(rho_c: f64) -> ModelParams {
        ModelParams::from_loads(rho_c, 10.0, 10.0, 1.0).unwrap()
    }

    #[test]
    fn residual_is_self_certifying_on_reference_parameters() {
        let blocks = build_blocks(&fig1_params(5.0), 42);
        let r = solve_r(&blocks, 1e-13, 200).unwrap();
        assert!(residual(&blocks, &r) <= 1e-12);
        assert!(r.iter().all(|&v| v >= -1e-15), "R must be nonnegative");
        let sp = spectral_radius(&r);
        assert!(sp < 1.0, "spectral radius {sp}");
    }

    #[test]
    fn vanishing_arrivals_vanishing_r() {
        let params = ModelParams::new(1e-12, 1.0, 1.0, 1.0).unwrap();
        let blocks = build_blocks(&params, 8);
        let r = solve_r(&blocks, 1e-13, 200).unwrap();
        assert!(
            r.amax() <= 1e-9,
            "R should vanish with the arrival rate, got {}",
            r.amax()
        );
    }

    #[test]
    fn two_algorithms_agree_entrywise() {
        let blocks = build_blocks(&fig1_params(5.0), 42);
        let r_lr = solve_r(&blocks, 1e-13, 200).unwrap();
        let r_fp = solve_r_fixed_point(&blocks, 1e-13, 500_000).unwrap();
        let diff = (&r_lr - &r_fp).amax();
        assert!(diff <= 1e-10, "entrywise difference {diff}");
    }

    #[test]
    fn overload_is_detected_before_iteration() {
        let params = ModelParams::from_loads(12.0, 1.0, 10.0, 1.0).unwrap();
        let blocks = build_blocks(&params, 42);
        match solve_r(&blocks, 1e-13, 200) {
            Err(QbdError::UnstableModel {
                mean_drift_up,
                service_capacity,
            }) => {
                assert!(mean_drift_up >= service_capacity);
            }
            other => panic!("expected UnstableModel, got {other:?}"),
        }
    }

    #[test]
    fn undersized_phase_cap_is_unstable_even_below_the_load_boundary() {
        // rho_c = 5 < rho_s = 10, but with at most 3 servers the truncated
        // chain cannot serve the demand.
        let blocks = build_blocks(&fig1_params(5.0), 3);
        assert!(matches!(
            solve_r(&blocks, 1e-13, 200),
            Err(QbdError::UnstableModel { .. })
        ));
    }
}
