//! Distance recovery from the decay of the indicator in `τ`, for a static
//! and a drifting ball, with the energy sandwich alongside.
//!
//! Usage: `cargo run --release --example distance_recovery -- [n] [steps]`

use std::time::Instant;

use heatprobe::indicator::energy_reference;
use heatprobe::probe::{EtaMode, ProbeParams};
use heatprobe::reconstruct::{estimate_distance_from, GridSpec, Pipeline};
use heatprobe::scenario::{dist_point_to_inclusion, Domain, InclusionTrajectory, Needle, PiecewiseLinear, Scenario, Vec3};

fn main() -> heatprobe::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(32);
    let steps = args.get(1).copied().unwrap_or(4 * n);
    let spec = GridSpec {
        n,
        dt: 1.0 / steps as f64,
    };

    let needle = Needle::new(PiecewiseLinear::new(
        vec![0.0, 0.25],
        vec![Vec3::new(-0.15, 0.5, 0.5), Vec3::new(0.1, 0.5, 0.5)],
    )?);
    let fixed = InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.15, 2.0);
    let drifting = InclusionTrajectory {
        center_path: PiecewiseLinear::new(vec![0.0, 1.0], vec![Vec3::new(0.5, 0.5, 0.4), Vec3::new(0.5, 0.5, 0.6)])?,
        ..fixed.clone()
    };

    let taus = [8.0, 12.0, 16.0, 20.0];
    let theta = 0.5;
    for (name, inclusion) in [("static", fixed), ("drifting", drifting)] {
        let scenario = Scenario::new(Domain::unit_cube(), 1.0, inclusion);
        let truth = dist_point_to_inclusion(&scenario, theta, &needle.at(theta))?;
        let pipeline = Pipeline::new(scenario.clone(), needle.clone(), spec)?;
        let clock = Instant::now();
        let mut points = Vec::new();
        let mut ratios = Vec::new();
        println!("{name} ball, d(y(θ), D(θ)) = {truth:.4}");
        for &tau in &taus {
            let params = ProbeParams::new(tau, 2.0, theta, 1.0, EtaMode::MuSign)?;
            let i = pipeline.boundary(&params)?;
            let e = energy_reference(&scenario, &params, &needle)?;
            let ratio = (i.ln_abs - e.ln_abs).exp();
            println!("  τ = {tau:>4}  I = {:+.4e}  energy = {:.4e}  |I|/energy = {ratio:.4}", i.to_f64(), e.to_f64());
            points.push((tau, i));
            ratios.push(ratio);
        }
        let d = estimate_distance_from(theta, &points)?;
        let spread = ratios.iter().copied().fold(0.0, f64::max) / ratios.iter().copied().fold(f64::INFINITY, f64::min);
        println!("  d_hat = {:.4}  residual = {:.2e}  sandwich spread = {spread:.3}  ({:.0}s)", d.d_hat, d.fit_residual, clock.elapsed().as_secs_f64());
    }
    Ok(())
}
