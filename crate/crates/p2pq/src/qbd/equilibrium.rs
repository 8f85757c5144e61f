//! Boundary solve, matrix-geometric levels, and closed-form moments.

use super::{gth_stationary, spectral_radius, QbdBlocks, QbdError};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Phases and levels with stationary mass below this are omitted from
/// conditional-expectation profiles.
pub const PROFILE_MASS_FLOOR: f64 = 1e-9;

/// Levels are listed until their mass falls below this floor; everything
/// beyond is summarized by `tail_mass`.
const LEVEL_MASS_FLOOR: f64 = 1e-16;
const LEVEL_CAP: usize = 200_000;

/// Stationary moments of the job-server chain. `g0_1` and `g0_2` are the
/// first and second factorial moments of the server count restricted to the
/// empty-queue event, i.e. `E[n_s 1{n_c=0}]` and `E[n_s(n_s-1) 1{n_c=0}]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Moments {
    pub e_nc: f64,
    pub e_ns: f64,
    pub e_ns_fact2: f64,
    pub e_nc_ns: f64,
    pub cov_nc_ns: f64,
    pub p_empty: f64,
    pub g0_1: f64,
    pub g0_2: f64,
}

/// Stationary distribution of the (phase-truncated) job-server chain.
///
/// For matrix-geometric solutions `r` and `spectral_radius` are present and
/// `pi_levels` lists levels until their mass drops below `1e-16`, with the
/// remainder in `tail_mass` (computed in closed form, not by summation).
/// Solutions from the direct truncated solver carry `r = None` and a zero
/// tail.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub m_s: u32,
    pub r: Option<DMatrix<f64>>,
    pub spectral_radius: Option<f64>,
    pub pi_levels: Vec<Vec<f64>>,
    pub tail_mass: f64,
    pub moments: Moments,
    /// `P(n_s = i)`, exact marginal (closed form, not a truncated sum).
    pub phase_marginal: Vec<f64>,
    /// `E[n_c 1{n_s = i}]`, exact partial moment per phase.
    pub phase_partial_nc: Vec<f64>,
}

#[derive(Serialize)]
struct SolutionExport<'a> {
    m_s: u32,
    spectral_radius: Option<f64>,
    levels_listed: usize,
    tail_mass: f64,
    moments: &'a Moments,
}

impl EquilibriumSolution {
    /// Mass of the listed levels.
    pub fn listed_mass(&self) -> f64 {
        self.pi_levels.iter().map(|l| l.iter().sum::<f64>()).sum()
    }

    /// JSON export: moments plus the truncation certificate.
    pub fn to_json(&self) -> String {
        let export = SolutionExport {
            m_s: self.m_s,
            spectral_radius: self.spectral_radius,
            levels_listed: self.pi_levels.len(),
            tail_mass: self.tail_mass,
            moments: &self.moments,
        };
        serde_json::to_string_pretty(&export).expect("plain floats always serialize")
    }

    /// CSV export of the stationary probabilities over a rectangle of states,
    /// columns `n_s,n_c,probability`, capped at `max_level` levels.
    pub fn pi_csv(&self, max_level: Option<usize>) -> String {
        let levels = self.pi_levels.len().min(max_level.unwrap_or(usize::MAX));
        let mut out = String::from("n_s,n_c,probability\n");
        for n_s in 0..=self.m_s as usize {
            for (n_c, level) in self.pi_levels.iter().take(levels).enumerate() {
                out.push_str(&format!("{},{},{}\n", n_s, n_c, level[n_s]));
            }
        }
        out
    }
}

fn refined_solve(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>, QbdError> {
    let mut x = lu.solve(b).ok_or(QbdError::SingularBoundary)?;
    // One step of iterative refinement keeps the geometric sums accurate when
    // the spectral radius of R approaches one.
    for _ in 0..2 {
        let res = b - a * &x;
        let dx = lu.solve(&res).ok_or(QbdError::SingularBoundary)?;
        x += dx;
    }
    Ok(x)
}

/// Solves the boundary system and extracts moments in closed form.
///
/// The boundary vector solves `pi_0 (B1 + R A2) = 0` normalized to
/// `pi_0 (I-R)^{-1} 1 = 1`; since `B1 + R A2` is the generator of the chain
/// censored on level 0, its stationary vector is computed by GTH elimination.
/// Moments use `(I-R)^{-1}` and `(I-R)^{-2}` identities rather than truncated
/// level sums.
pub fn solve_equilibrium(
    blocks: &QbdBlocks,
    r: &DMatrix<f64>,
) -> Result<EquilibriumSolution, QbdError> {
    let n = blocks.phases();
    assert_eq!(r.nrows(), n, "R must match the phase count");
    let sp = spectral_radius(r);
    assert!(
        sp < 1.0,
        "solve_equilibrium requires spectral radius < 1, got {sp}"
    );

    let censored = &blocks.b1 + r * &blocks.a2;
    let u = gth_stationary(&censored)?;

    let i_minus_r = DMatrix::identity(n, n) - r;
    let i_minus_r_t = i_minus_r.transpose();
    let lu = i_minus_r.clone().lu();
    let lu_t = i_minus_r_t.clone().lu();

    let ones = DVector::repeat(n, 1.0);
    let s1_one = refined_solve(&lu, &i_minus_r, &ones)?;
    let alpha = u.dot(&s1_one);
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(QbdError::SingularBoundary);
    }
    let pi0 = &u / alpha;

    let v = DVector::from_fn(n, |i, _| i as f64);
    let w = DVector::from_fn(n, |i, _| (i * i.saturating_sub(1)) as f64);

    let p_empty = pi0.sum();
    let g0_1 = pi0.dot(&v);
    let g0_2 = pi0.dot(&w);

    // Row-vector identities become transpose solves: x = pi0 (I-R)^{-1} is
    // the phase marginal, z = pi0 R (I-R)^{-2} the per-phase E[n_c] partial.
    let phase_marginal = refined_solve(&lu_t, &i_minus_r_t, &pi0)?;
    let t0 = r.tr_mul(&pi0);
    let t1 = refined_solve(&lu_t, &i_minus_r_t, &t0)?;
    let z = refined_solve(&lu_t, &i_minus_r_t, &t1)?;

    let e_nc = z.sum();
    let e_nc_ns = z.dot(&v);
    let e_ns = phase_marginal.dot(&v);
    let e_ns_fact2 = phase_marginal.dot(&w);
    let moments = Moments {
        e_nc,
        e_ns,
        e_ns_fact2,
        e_nc_ns,
        cov_nc_ns: e_nc_ns - e_nc * e_ns,
        p_empty,
        g0_1,
        g0_2,
    };

    // Level list plus a closed-form bound for what it omits.
    let mut pi_levels: Vec<Vec<f64>> = Vec::new();
    let mut level = pi0.clone();
    let mut listed = 0.0;
    loop {
        let mass = level.sum();
        if (mass < LEVEL_MASS_FLOOR && !pi_levels.is_empty()) || pi_levels.len() >= LEVEL_CAP {
            break;
        }
        listed += mass;
        pi_levels.push(level.iter().copied().collect());
        level = r.tr_mul(&level);
    }
    let tail_mass = level.dot(&s1_one);
    assert!(
        (listed + tail_mass - 1.0).abs() <= 1e-9,
        "mass accounting broke: listed {listed} + tail {tail_mass}"
    );

    Ok(EquilibriumSolution {
        m_s: blocks.m_s,
        r: Some(r.clone()),
        spectral_radius: Some(sp),
        pi_levels,
        tail_mass,
        moments,
        phase_marginal: phase_marginal.iter().copied().collect(),
        phase_partial_nc: z.iter().copied().collect(),
    })
}

/// Conditional-expectation profiles, omitting states whose marginal mass is
/// below [`PROFILE_MASS_FLOOR`].
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalProfiles {
    /// `(n_s, E[n_c | n_s])` per phase.
    pub e_nc_given_ns: Vec<(u32, f64)>,
    /// `(n_c, E[n_s | n_c])` per level.
    pub e_ns_given_nc: Vec<(u64, f64)>,
}

pub fn conditional_profiles(sol: &EquilibriumSolution) -> ConditionalProfiles {
    let e_nc_given_ns = sol
        .phase_marginal
        .iter()
        .zip(&sol.phase_partial_nc)
        .enumerate()
        .filter(|(_, (&mass, _))| mass >= PROFILE_MASS_FLOOR)
        .map(|(i, (&mass, &partial))| (i as u32, partial / mass))
        .collect();

    let e_ns_given_nc = sol
        .pi_levels
        .iter()
        .enumerate()
        .filter_map(|(k, level)| {
            let mass: f64 = level.iter().sum();
            if mass < PROFILE_MASS_FLOOR {
                return None;
            }
            let num: f64 = level.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
            Some((k as u64, num / mass))
        })
        .collect();

    ConditionalProfiles {
        e_nc_given_ns,
        e_ns_given_nc,
    }
}

/// Total-variation distance between two solutions over their listed states,
/// counting truncated tails as disjoint mass (an upper bound on the true TV).
pub fn tv_distance(a: &EquilibriumSolution, b: &EquilibriumSolution) -> f64 {
    let levels = a.pi_levels.len().max(b.pi_levels.len());
    let phases = (a.m_s.max(b.m_s) + 1) as usize;
    let mut sum = 0.0;
    for k in 0..levels {
        for i in 0..phases {
            let pa = a
                .pi_levels
                .get(k)
                .and_then(|l| l.get(i))
                .copied()
                .unwrap_or(0.0);
            let pb = b
                .pi_levels
                .get(k)
                .and_then(|l| l.get(i))
                .copied()
                .unwrap_or(0.0);
            sum += (pa - pb).abs();
        }
    }
    0.5 * (sum + a.tail_mass.abs() + b.tail_mass.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::qbd::{build_blocks, default_phase_cap, solve_r, DEFAULT_MAX_ITER, DEFAULT_R_TOL};
    use proptest::prelude::*;

    fn solve(params: &ModelParams, m_s: u32) -> EquilibriumSolution {
        let blocks = build_blocks(params, m_s);
        let r = solve_r(&blocks, DEFAULT_R_TOL, DEFAULT_MAX_ITER).unwrap();
        solve_equilibrium(&blocks, &r).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    fn fig1_params(rho_c: f64) -> ModelParams {
        ModelParams::from_loads(rho_c, 10.0, 10.0, 1.0).unwrap()
    }

    #[test]
    fn server_moment_identities_hold() {
        let params = fig1_params(5.0);
        let sol = solve(&params, default_phase_cap(&params));
        let rho_s = params.rho_s();
        assert!(rel(sol.moments.e_ns, rho_s) <= 1e-8);
        assert!(rel(sol.moments.e_ns_fact2, rho_s * sol.moments.e_ns) <= 1e-8);
        assert!(rel(sol.moments.g0_1, rho_s - params.rho_c()) <= 1e-8);
    }

    #[test]
    fn balance_identities_hold_at_both_reference_parameter_sets() {
        for params in [
            fig1_params(5.0),
            ModelParams::new(8.0, 1.0, 10.0, 1.0).unwrap(),
        ] {
            let sol = solve(&params, default_phase_cap(&params));
            let m = &sol.moments;
            let (lc, mc, ls, ms) = (
                params.lambda_c(),
                params.mu_c(),
                params.lambda_s(),
                params.mu_s(),
            );
            let rho_c = params.rho_c();

            // rho_c E[n_c] = E[n_s n_c] - E[n_s] + G0_1
            assert!(rel(rho_c * m.e_nc, m.e_nc_ns - m.e_ns + m.g0_1) <= 1e-8);
            // Simplified form: E[n_c] = (E[n_s n_c] - rho_c) / rho_c
            assert!(rel(m.e_nc, (m.e_nc_ns - rho_c) / rho_c) <= 1e-8);
            // lambda_c E[n_s] + lambda_s E[n_c]
            //   = mu_c E[n_s(n_s-1)] + mu_s E[n_s n_c] + mu_c E[n_s] - mu_c (G0_1 + G0_2)
            let lhs = lc * m.e_ns + ls * m.e_nc;
            let rhs = mc * m.e_ns_fact2 + ms * m.e_nc_ns + mc * m.e_ns - mc * (m.g0_1 + m.g0_2);
            assert!(
                rel(lhs, rhs) <= 1e-8,
                "cross identity residual {}",
                rel(lhs, rhs)
            );
        }
    }

    #[test]
    fn phase_marginal_is_truncated_poisson() {
        let params = fig1_params(5.0);
        let m_s = default_phase_cap(&params);
        let sol = solve(&params, m_s);

        let rho_s = params.rho_s();
        let n = m_s as usize + 1;
        let mut expected = vec![0.0; n];
        let mut term = 1.0;
        for (i, e) in expected.iter_mut().enumerate() {
            if i > 0 {
                term *= rho_s / i as f64;
            }
            *e = term;
        }
        let total: f64 = expected.iter().sum();
        let tv: f64 = sol
            .phase_marginal
            .iter()
            .zip(&expected)
            .map(|(&p, &e)| (p - e / total).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 1e-10, "TV to truncated Poisson {tv}");
    }

    #[test]
    fn mass_accounting_and_positivity() {
        let params = fig1_params(9.0);
        let sol = solve(&params, default_phase_cap(&params));
        assert!((sol.listed_mass() + sol.tail_mass - 1.0).abs() <= 1e-9);
        assert!(sol.pi_levels.iter().flatten().all(|&p| p >= 0.0));
        assert!(sol.spectral_radius.unwrap() < 1.0);
    }

    #[test]
    fn negative_correlation_and_monotone_profiles_at_fig3_parameters() {
        let params = ModelParams::new(8.0, 1.0, 10.0, 1.0).unwrap();
        let sol = solve(&params, default_phase_cap(&params));
        assert!(
            sol.moments.cov_nc_ns < 0.0,
            "covariance {}",
            sol.moments.cov_nc_ns
        );

        // Decreasing up to solver precision: profiles flatten toward an
        // asymptote, where successive values differ only in the last ulps.
        let profiles = conditional_profiles(&sol);
        assert!(profiles.e_nc_given_ns.len() >= 10);
        for pair in profiles.e_nc_given_ns.windows(2) {
            assert!(
                pair[1].1 < pair[0].1 * (1.0 + 1e-9),
                "E[n_c|n_s] not decreasing at {:?}",
                pair
            );
        }
        assert!(profiles.e_ns_given_nc.len() >= 10);
        for pair in profiles.e_ns_given_nc.windows(2) {
            assert!(
                pair[1].1 < pair[0].1 * (1.0 + 1e-9),
                "E[n_s|n_c] not decreasing at {:?}",
                pair
            );
        }
    }

    #[test]
    fn faster_server_dynamics_weaken_the_coupling() {
        // Same loads, two server time scales: with fast churn the server
        // process averages itself out and the covariance magnitude shrinks.
        let slow = ModelParams::new(50.0, 10.0, 10.0, 1.0).unwrap();
        let fast = ModelParams::new(50.0, 10.0, 1000.0, 100.0).unwrap();
        let cov_slow = solve(&slow, default_phase_cap(&slow)).moments.cov_nc_ns;
        let cov_fast = solve(&fast, default_phase_cap(&fast)).moments.cov_nc_ns;
        assert!(cov_slow < 0.0 && cov_fast < 0.0);
        assert!(
            cov_fast.abs() < cov_slow.abs(),
            "slow {cov_slow} fast {cov_fast}"
        );
    }

    #[test]
    fn doubling_the_phase_cap_leaves_e_nc_unchanged() {
        let params = fig1_params(5.0);
        let m_s = default_phase_cap(&params);
        let base = solve(&params, m_s).moments.e_nc;
        let doubled = solve(&params, 2 * m_s).moments.e_nc;
        assert!(
            rel(base, doubled) < 1e-6,
            "E[n_c] moved by {}",
            rel(base, doubled)
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        /// Balance identities hold across random stable parameter sets.
        #[test]
        fn identities_hold_for_random_stable_parameters(
            rho_c_frac in 0.05..0.9f64,
            rho_s in 2.0..15.0f64,
            mu_c in 0.2..20.0f64,
            mu_s in 0.2..4.0f64,
        ) {
            let params = ModelParams::from_loads(rho_c_frac * rho_s, mu_c, rho_s, mu_s).unwrap();
            let sol = solve(&params, default_phase_cap(&params));
            let m = &sol.moments;
            let rho_c = params.rho_c();
            prop_assert!(rel(m.e_ns, rho_s) <= 1e-8);
            prop_assert!(rel(rho_c * m.e_nc, m.e_nc_ns - m.e_ns + m.g0_1) <= 1e-8);
            let lhs = params.lambda_c() * m.e_ns + params.lambda_s() * m.e_nc;
            let rhs = mu_c * m.e_ns_fact2 + mu_s * m.e_nc_ns + mu_c * m.e_ns
                - mu_c * (m.g0_1 + m.g0_2);
            prop_assert!(rel(lhs, rhs) <= 1e-8);
        }
    }
}
