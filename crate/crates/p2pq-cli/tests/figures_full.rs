//! The full default figure pipeline: budget, cross-method agreement, and the
//! qualitative shape of each dataset.

use clap::Parser;
use p2pq_cli::{run, Cli};
use std::time::Instant;

#[test]
fn default_pipeline_fits_the_budget_and_reproduces_the_claims() {
    let dir = std::env::temp_dir().join(format!("p2pq-figures-full-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out_flag = dir.to_str().unwrap().to_string();

    let started = Instant::now();
    let cli = Cli::try_parse_from(["p2pq", "figures", "--out", &out_flag]).unwrap();
    run(cli, &mut Vec::new()).unwrap();
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 600,
        "figures took {elapsed:?}, over the ten-minute budget"
    );

    // Figure 1: the mean hugs the lower bound under light load and the upper
    // bound under heavy load.
    let fig1 = std::fs::read_to_string(dir.join("figure1.csv")).unwrap();
    let rows: Vec<Vec<f64>> = fig1
        .lines()
        .skip(1)
        .map(|row| row.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 40);
    for row in &rows {
        assert!(
            row[2] < row[1] && row[1] < row[3],
            "sandwich broken at {row:?}"
        );
    }
    let first = &rows[0];
    assert!(
        first[1] / first[2] <= 1.2,
        "light-load tightness {}",
        first[1] / first[2]
    );
    let last = rows.last().unwrap();
    assert!(
        last[1] / last[3] >= 0.8,
        "heavy-load tightness {}",
        last[1] / last[3]
    );

    // Figure 2: light load performs alike across dynamics (spread <= 1.25 at
    // the point nearest rho_c = 0.5); heavy load is near-proportional to
    // mu_c/mu_s + 1 (log-log correlation >= 0.95).
    let fig2 = std::fs::read_to_string(dir.join("figure2.csv")).unwrap();
    let rows: Vec<Vec<f64>> = fig2
        .lines()
        .skip(1)
        .map(|row| row.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let light = rows
        .iter()
        .min_by(|a, b| (a[0] - 0.5).abs().partial_cmp(&(b[0] - 0.5).abs()).unwrap())
        .unwrap();
    let spread = light[1..].iter().cloned().fold(f64::MIN, f64::max)
        / light[1..].iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        spread <= 1.25,
        "light-load spread {spread} at rho_c = {}",
        light[0]
    );

    let heavy = rows.last().unwrap();
    let xs: Vec<f64> = [1.0f64, 3.0, 10.0, 30.0]
        .iter()
        .map(|r| (r + 1.0).ln())
        .collect();
    let ys: Vec<f64> = heavy[1..].iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let correlation = sxy / (sxx * syy).sqrt();
    assert!(
        correlation >= 0.95,
        "heavy-load log-log correlation {correlation}"
    );

    // Figure 3: the simulated conditional profiles agree with the solved ones
    // pointwise, within three across-replication half-widths, on states the
    // simulation visited long enough to carry a meaningful interval.
    for name in ["figure3_nc_given_ns.csv", "figure3_ns_given_nc.csv"] {
        let text = std::fs::read_to_string(dir.join(name)).unwrap();
        let mut compared = 0;
        for row in text.lines().skip(1) {
            let fields: Vec<&str> = row.split(',').collect();
            if fields[2].is_empty() {
                continue;
            }
            let qbd: f64 = fields[1].parse().unwrap();
            let sim: f64 = fields[2].parse().unwrap();
            let hw: f64 = fields[3].parse().unwrap();
            // Entries this tight are backed by real occupancy.
            if hw.is_finite() && hw > 0.0 && hw < 0.2 * qbd.abs().max(1.0) {
                assert!(
                    (qbd - sim).abs() <= 3.0 * hw,
                    "{name}: solver {qbd} vs sim {sim} +- {hw} at state {}",
                    fields[0]
                );
                compared += 1;
            }
        }
        assert!(
            compared >= 10,
            "{name}: only {compared} states carried tight intervals"
        );
    }

    std::fs::remove_dir_all(&dir).ok();
}
