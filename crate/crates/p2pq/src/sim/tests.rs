use super::*;
use crate::model::{parse_notation, ModelParams, ModelSpec, WorkloadDist};
use crate::qbd::{build_blocks, default_phase_cap, solve_equilibrium, solve_r};

fn spec(notation: &str, params: ModelParams) -> ModelSpec {
    ModelSpec::new(parse_notation(notation).unwrap(), params)
}

fn fig1_params(rho_c: f64) -> ModelParams {
    ModelParams::from_loads(rho_c, 10.0, 10.0, 1.0).unwrap()
}

fn fig3_params() -> ModelParams {
    ModelParams::new(8.0, 1.0, 10.0, 1.0).unwrap()
}

fn qbd_e_nc(params: &ModelParams) -> f64 {
    let blocks = build_blocks(params, default_phase_cap(params));
    let r = solve_r(&blocks, 1e-13, 200).unwrap();
    solve_equilibrium(&blocks, &r).unwrap().moments.e_nc
}

/// Upper quantile of the chi-square distribution by the Wilson-Hilferty
/// approximation (well under 1% off for the dozens of degrees of freedom
/// used here).
fn chi_square_critical(dof: usize, z: f64) -> f64 {
    let k = dof as f64;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn identical_seed_identical_output() {
    let config = SimConfig::new(spec("M/M/(M/M)", fig1_params(5.0)), 2_000.0, 4, 7).unwrap();
    let a = simulate_mm(&config).unwrap();
    let b = simulate_mm(&config).unwrap();
    assert_eq!(a, b);
    let config = config
        .with_workload(WorkloadDist::exponential(10.0).unwrap())
        .unwrap();
    let a = simulate_mg(&config).unwrap();
    let b = simulate_mg(&config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn no_arrivals_no_jobs() {
    let params = ModelParams::new(1e-6, 1.0, 1.0, 1.0).unwrap();
    let config = SimConfig::new(spec("M/M/(M/M)", params), 20_000.0, 4, 11).unwrap();
    let stats = simulate_mm(&config).unwrap();
    assert!(
        stats.mean_nc.value <= 1e-4,
        "mean_nc {}",
        stats.mean_nc.value
    );
    assert!(stats.empty_fraction.value >= 0.999);
}

#[test]
fn server_marginal_matches_the_independent_mm_infinity_queue() {
    let params = fig3_params();
    let config = SimConfig::new(spec("M/M/(M/M)", params), 100_000.0, 8, 13).unwrap();
    let stats = simulate_mm(&config).unwrap();

    assert!(
        stats.mean_ns.within(params.rho_s(), 3.0),
        "mean_ns {} +- {} vs rho_s {}",
        stats.mean_ns.value,
        stats.mean_ns.half_width,
        params.rho_s()
    );

    // Chi-square goodness of fit of the sampled occupancy against
    // Poisson(rho_s) at 1% significance, over bins with expected count >= 5
    // and the two tails lumped.
    let rho_s = params.rho_s();
    let n: u64 = stats.ns_sample_counts.iter().sum();
    let mut pmf = vec![0.0f64; stats.ns_sample_counts.len() + 30];
    pmf[0] = (-rho_s).exp();
    for i in 1..pmf.len() {
        pmf[i] = pmf[i - 1] * rho_s / i as f64;
    }
    let mut statistic = 0.0;
    let mut bins = 0usize;
    let mut lump_obs = 0.0;
    let mut lump_exp = 0.0;
    for (i, &mass) in pmf.iter().enumerate() {
        let expected = mass * n as f64;
        let observed = stats.ns_sample_counts.get(i).copied().unwrap_or(0) as f64;
        if expected >= 5.0 {
            statistic += (observed - expected) * (observed - expected) / expected;
            bins += 1;
        } else {
            lump_obs += observed;
            lump_exp += expected;
        }
    }
    if lump_exp > 0.0 {
        statistic += (lump_obs - lump_exp) * (lump_obs - lump_exp) / lump_exp;
        bins += 1;
    }
    let critical = chi_square_critical(bins - 1, 2.326347874040841);
    assert!(
        statistic <= critical,
        "chi-square {statistic:.2} over {bins} bins exceeds the 1% critical value {critical:.2}"
    );
}

#[test]
fn count_state_mean_matches_the_equilibrium_solver() {
    let params = fig1_params(5.0);
    let config = SimConfig::new(spec("M/M/(M/M)", params), 20_000.0, 10, 17).unwrap();
    let stats = simulate_mm(&config).unwrap();
    let expected = qbd_e_nc(&params);
    assert!(
        stats.mean_nc.within(expected, 3.0),
        "mean_nc {} +- {} vs solved {expected}",
        stats.mean_nc.value,
        stats.mean_nc.half_width
    );
}

#[test]
fn negative_correlation_at_fig3_parameters() {
    let params = fig3_params();
    let config = SimConfig::new(spec("M/M/(M/M)", params), 200_000.0, 6, 19).unwrap();
    let stats = simulate_mm(&config).unwrap();
    assert!(stats.mean_ns.within(10.0, 3.0));
    assert!(
        stats.cov_nc_ns.value + 3.0 * stats.cov_nc_ns.half_width < 0.0,
        "covariance {} +- {}",
        stats.cov_nc_ns.value,
        stats.cov_nc_ns.half_width
    );
}

#[test]
fn exponential_workload_reduces_to_the_count_state_chain() {
    let params = fig1_params(5.0);
    let config = SimConfig::new(spec("M/M/(M/M)", params), 20_000.0, 10, 23).unwrap();
    let stats = simulate_mg(&config).unwrap();
    let expected = qbd_e_nc(&params) / params.mu_c();
    assert!(
        stats.mean_x.within(expected, 3.0),
        "mean_X {} +- {} vs solved E[n_c]/mu_c = {expected}",
        stats.mean_x.value,
        stats.mean_x.half_width
    );
    // Workload consistency: each job carries Exp(mu_c) remaining work in
    // expectation, so the two measured averages must agree.
    let implied = stats.mean_nc.value / params.mu_c();
    assert!(
        stats.mean_x.within(implied, 3.0),
        "mean_X {} vs mean_nc/mu_c {implied}",
        stats.mean_x.value
    );
}

#[test]
fn deterministic_workload_keeps_regenerating_when_stable() {
    let params = fig1_params(5.0);
    let config = SimConfig::new(spec("M/D/(M/M)", params), 20_000.0, 4, 29).unwrap();
    let stats = simulate_mg(&config).unwrap();
    assert!(
        stats.min_regenerations() > 0,
        "regenerations {:?}",
        stats.regenerations
    );
    assert!(stats.mean_x.value > 0.0);
}

#[test]
fn sojourn_mean_obeys_littles_law() {
    let params = fig1_params(5.0);
    let config = SimConfig::new(spec("M/M/(M/M)", params), 20_000.0, 10, 31).unwrap();
    let stats = simulate_mm(&config).unwrap();
    let sojourn = stats.mean_sojourn.unwrap();
    let littles = stats.mean_nc.value / params.lambda_c();
    assert!(
        sojourn.within(littles, 3.0),
        "sojourn {} +- {} vs E[n_c]/lambda_c = {littles}",
        sojourn.value,
        sojourn.half_width
    );
}

#[test]
fn sojourn_matches_the_solver_through_littles_law() {
    // Independent routes to E[T]: per-job tagging in the simulator against
    // the solved mean queue length divided by the arrival rate.
    let params = fig3_params();
    let config = SimConfig::new(spec("M/M/(M/M)", params), 50_000.0, 8, 53).unwrap();
    let stats = simulate_mm(&config).unwrap();
    let sojourn = stats.mean_sojourn.unwrap();
    let solved = qbd_e_nc(&params) / params.lambda_c();
    assert!(
        sojourn.within(solved, 3.0),
        "tagged sojourn {} +- {} vs solved E[n_c]/lambda_c = {solved}",
        sojourn.value,
        sojourn.half_width
    );
}

#[test]
fn overload_grows_monotonically_across_windows() {
    let params = ModelParams::from_loads(12.0, 1.0, 10.0, 1.0).unwrap();
    let config = SimConfig::new(spec("M/D/(M/M)", params), 20_000.0, 6, 37)
        .unwrap()
        .with_warmup(0.0)
        .unwrap();
    let stats = simulate_mg(&config).unwrap();
    assert_eq!(stats.window_means_x.len(), 10);
    for pair in stats.window_means_x.windows(2) {
        assert!(
            pair[1] > pair[0],
            "windowed mean_X not increasing: {:?}",
            stats.window_means_x
        );
    }
}

#[test]
fn divergence_guard_reports_the_state() {
    let params = ModelParams::from_loads(12.0, 1.0, 10.0, 1.0).unwrap();
    let config = SimConfig::new(spec("M/M/(M/M)", params), 100_000.0, 2, 41)
        .unwrap()
        .with_guards(200, 1e9);
    match simulate_mm(&config) {
        Err(SimError::UnstableDivergence {
            guard_jobs,
            state,
            time,
            ..
        }) => {
            assert_eq!(guard_jobs, 200);
            assert!(time > 0.0);
            assert!(matches!(state, SystemState::Counts { n_c: 201, .. }));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn conditional_profiles_decrease_like_the_solver_says() {
    let params = fig3_params();
    let config = SimConfig::new(spec("M/M/(M/M)", params), 100_000.0, 8, 43).unwrap();
    let stats = simulate_mm(&config).unwrap();
    // Compare phases near the server mode, where the simulation has plenty
    // of occupancy time.
    let e_at = |ns: u32| stats.cond_mean_nc_given_ns.get(&ns).unwrap().mean;
    assert!(e_at(6) > e_at(10));
    assert!(e_at(10) > e_at(14));
}

#[test]
fn hyperexponential_workload_regenerates_when_stable() {
    let params = fig1_params(5.0);
    let hyper = WorkloadDist::hyperexponential_fit(1.0 / params.mu_c(), 4.0).unwrap();
    let config =
        SimConfig::new_with_workload(spec("M/G/(M/M)", params), hyper, 20_000.0, 4, 47).unwrap();
    let stats = simulate_mg(&config).unwrap();
    assert!(stats.min_regenerations() > 0);
}

#[test]
fn config_validation() {
    let params = fig1_params(5.0);
    // A general tag has no default distribution.
    assert!(matches!(
        SimConfig::new(spec("M/G/(M/M)", params), 1000.0, 1, 0),
        Err(SimError::InvalidConfig(_))
    ));
    let config = SimConfig::new(spec("M/M/(M/M)", params), 1000.0, 1, 0).unwrap();
    assert!(config.clone().with_warmup(1000.0).is_err());
    // Wrong mean: 0.5 instead of 1/mu_c = 0.1.
    assert!(matches!(
        SimConfig::new_with_workload(
            spec("M/D/(M/M)", params),
            WorkloadDist::deterministic(0.5).unwrap(),
            1000.0,
            1,
            0
        ),
        Err(SimError::InvalidConfig(_))
    ));
    // Distribution outside the declared tag.
    assert!(config
        .with_workload(WorkloadDist::hyperexponential_fit(0.1, 4.0).unwrap())
        .is_err());
    // Count-state simulation rejects non-exponential tags.
    let det = SimConfig::new(spec("M/D/(M/M)", params), 1000.0, 1, 0).unwrap();
    assert!(matches!(simulate_mm(&det), Err(SimError::InvalidConfig(_))));
}
