//! First-contact search over a fan of needles, driven by the analytic
//! energy reference so that it runs in seconds.
//!
//! Usage: `cargo run --release --example needle_scan`

use heatprobe::reconstruct::{delta_from_ground_truth, needle_scan, EnergyEvaluator, FConfig, SearchOptions};
use heatprobe::scenario::{t_star_true, Domain, InclusionTrajectory, Needle, PiecewiseLinear, Scenario, Vec3};

fn main() -> heatprobe::Result<()> {
    let scenario = Scenario::new(
        Domain::unit_cube(),
        1.0,
        InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.15, 2.0),
    );
    let needles = [0.5, 0.6, 0.9]
        .iter()
        .map(|&z| {
            PiecewiseLinear::new(vec![0.0, 1.0], vec![Vec3::new(-0.1, 0.5, 0.5), Vec3::new(0.8, 0.5, z)]).map(Needle::new)
        })
        .collect::<heatprobe::Result<Vec<_>>>()?;
    let config = FConfig {
        tau_ladder: vec![8.0, 12.0, 16.0, 20.0],
        mu_ladder: vec![2.0],
        theta_step: 0.01,
        theta_window: Some(0.03),
    };
    let opts = SearchOptions {
        min_horizon: 0.1,
        ..SearchOptions::default()
    };
    let delta = needles
        .iter()
        .map(|n| delta_from_ground_truth(&scenario, n, 1.0, 2.0))
        .collect::<heatprobe::Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let scans = needle_scan(&needles, |n| EnergyEvaluator::new(scenario.clone(), n.clone(), 0.02), &config, delta, 1.0, &opts)?;
    for (scan, needle) in scans.iter().zip(&needles) {
        let truth = t_star_true(&scenario, needle);
        println!(
            "needle {}: t_star_hat = {}  true {:?}  iterates {:?}",
            scan.index,
            scan.search.t_star_hat,
            truth,
            scan.search.t_sequence.iter().map(|t| (t * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }
    Ok(())
}
