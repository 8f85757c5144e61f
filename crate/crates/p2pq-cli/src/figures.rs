//! The three reference figure datasets.
//!
//! 1. `figure1.csv` — solved mean queue length against both bounds over a
//!    log-spaced load sweep (rho_s = 10, mu_s = 1, mu_c = 10).
//! 2. `figure2.csv` — mean queue length for server-dynamics ratios
//!    `mu_c/mu_s` in {1, 3, 10, 30} at equal mean server count.
//! 3. `figure3_nc_given_ns.csv`, `figure3_ns_given_nc.csv` — conditional
//!    expectation profiles from the solver, cross-checked by simulation
//!    (rho_s = 10, mu_s = 1, lambda_c = 8, mu_c = 1).
//!
//! Sweep points solve concurrently; rows are written in sweep order, so a
//! given seed always produces byte-identical files.

use crate::{log_spaced, solve, CliError};
use p2pq::model::{parse_notation, ModelParams, ModelSpec};
use p2pq::qbd::conditional_profiles;
use p2pq::sim::{simulate_mm, SimConfig};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

const RHO_S: f64 = 10.0;
const FIG2_RATIOS: [f64; 4] = [1.0, 3.0, 10.0, 30.0];

pub fn run_all(
    out_dir: &Path,
    seed: u64,
    points: usize,
    reps: u32,
    horizon: f64,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let grid = log_spaced(0.05, 0.98 * RHO_S, points);

    let fig1 = figure1(&grid)?;
    let path = out_dir.join("figure1.csv");
    std::fs::write(&path, fig1)?;
    writeln!(stdout, "wrote {}", path.display())?;

    let fig2 = figure2(&grid)?;
    let path = out_dir.join("figure2.csv");
    std::fs::write(&path, fig2)?;
    writeln!(stdout, "wrote {}", path.display())?;

    let (by_ns, by_nc) = figure3(seed, reps, horizon)?;
    let path = out_dir.join("figure3_nc_given_ns.csv");
    std::fs::write(&path, by_ns)?;
    writeln!(stdout, "wrote {}", path.display())?;
    let path = out_dir.join("figure3_ns_given_nc.csv");
    std::fs::write(&path, by_nc)?;
    writeln!(stdout, "wrote {}", path.display())?;
    Ok(())
}

pub fn figure1(grid: &[f64]) -> Result<String, CliError> {
    let rows: Vec<Result<String, CliError>> = grid
        .par_iter()
        .map(|&rho_c| {
            let params = ModelParams::from_loads(rho_c, 10.0, RHO_S, 1.0).unwrap();
            let sol = solve(&params, None)?;
            let bounds = p2pq::bounds::queue_length_bounds(&params)?;
            Ok(format!(
                "{},{},{},{}",
                rho_c, sol.moments.e_nc, bounds.lower, bounds.upper
            ))
        })
        .collect();
    let mut content = String::from("rho_c,E_nc,lower,upper\n");
    for row in rows {
        content.push_str(&row?);
        content.push('\n');
    }
    Ok(content)
}

pub fn figure2(grid: &[f64]) -> Result<String, CliError> {
    let rows: Vec<Result<String, CliError>> = grid
        .par_iter()
        .map(|&rho_c| {
            let mut row = format!("{rho_c}");
            for ratio in FIG2_RATIOS {
                // Same mean server count, different churn: mu_s = 1, mu_c = ratio.
                let params = ModelParams::from_loads(rho_c, ratio, RHO_S, 1.0).unwrap();
                let sol = solve(&params, None)?;
                row.push_str(&format!(",{}", sol.moments.e_nc));
            }
            Ok(row)
        })
        .collect();
    let mut content = String::from("rho_c,");
    content.push_str(
        &FIG2_RATIOS
            .iter()
            .map(|r| format!("E_nc_ratio_{r}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    content.push('\n');
    for row in rows {
        content.push_str(&row?);
        content.push('\n');
    }
    Ok(content)
}

pub fn figure3(seed: u64, reps: u32, horizon: f64) -> Result<(String, String), CliError> {
    let params = ModelParams::new(8.0, 1.0, 10.0, 1.0).unwrap();
    let sol = solve(&params, None)?;
    let profiles = conditional_profiles(&sol);

    let spec = ModelSpec::new(parse_notation("M/M/(M/M)").unwrap(), params);
    let config = SimConfig::new(spec, horizon, reps, seed)?;
    let stats = simulate_mm(&config)?;

    let mut by_ns = String::from("n_s,qbd_mean,sim_mean,sim_half_width\n");
    for &(n_s, qbd_mean) in &profiles.e_nc_given_ns {
        match stats.cond_mean_nc_given_ns.get(&n_s) {
            Some(sim) => by_ns.push_str(&format!(
                "{},{},{},{}\n",
                n_s, qbd_mean, sim.mean, sim.half_width
            )),
            None => by_ns.push_str(&format!("{},{},,\n", n_s, qbd_mean)),
        }
    }

    let mut by_nc = String::from("n_c,qbd_mean,sim_mean,sim_half_width\n");
    for &(n_c, qbd_mean) in &profiles.e_ns_given_nc {
        match stats.cond_mean_ns_given_nc.get(&n_c) {
            Some(sim) => by_nc.push_str(&format!(
                "{},{},{},{}\n",
                n_c, qbd_mean, sim.mean, sim.half_width
            )),
            None => by_nc.push_str(&format!("{},{},,\n", n_c, qbd_mean)),
        }
    }
    Ok((by_ns, by_nc))
}
