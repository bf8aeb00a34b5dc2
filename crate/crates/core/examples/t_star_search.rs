//! Search for the first contact time of a needle approaching a ball, and
//! of one that never reaches it.
//!
//! Usage: `cargo run --release --example t_star_search -- [n] [steps]`

use std::time::Instant;

use heatprobe::reconstruct::{delta_from_ground_truth, search_with, FConfig, GridSpec, Pipeline, SearchOptions};
use heatprobe::scenario::{t_star_true, Domain, InclusionTrajectory, Needle, PiecewiseLinear, Scenario, Vec3};

fn main() -> heatprobe::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(32);
    let steps = args.get(1).copied().unwrap_or(4 * n);
    let spec = GridSpec {
        n,
        dt: 1.0 / steps as f64,
    };
    let scenario = Scenario::new(
        Domain::unit_cube(),
        1.0,
        InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.15, 2.0),
    );
    let config = FConfig {
        tau_ladder: vec![8.0, 12.0, 16.0, 20.0],
        mu_ladder: vec![2.0],
        theta_step: 0.02,
        theta_window: Some(0.06),
    };
    let opts = SearchOptions {
        min_horizon: 0.1,
        ..SearchOptions::default()
    };

    let line = |end: f64| {
        PiecewiseLinear::new(vec![0.0, 1.0], vec![Vec3::new(-0.1, 0.5, 0.5), Vec3::new(end, 0.5, 0.5)]).map(Needle::new)
    };
    for (name, needle) in [("approach", line(0.8)?), ("no contact", line(0.1)?)] {
        let clock = Instant::now();
        let truth = t_star_true(&scenario, &needle);
        let delta = delta_from_ground_truth(&scenario, &needle, 1.0, 2.0)?;
        let pipeline = Pipeline::new(scenario.clone(), needle, spec)?;
        let (result, trace) = search_with(&pipeline, &config, delta, 1.0, &opts)?;
        println!("{name}: true contact {truth:?}, delta {delta:.3}, solved horizon {:.4}", heatprobe::reconstruct::Evaluator::horizon(&pipeline));
        for (t, f) in result.t_sequence.iter().zip(&trace) {
            println!("  t = {t:.4}  F = {:+.4}", f.value);
        }
        println!("  t_star_hat = {}  ({:?}, {:.0}s)", result.t_star_hat, result.termination, clock.elapsed().as_secs_f64());
    }
    Ok(())
}
