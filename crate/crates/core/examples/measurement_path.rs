//! Reflected flux from the limit solve and from emulated boundary
//! measurements, for a pole kept outside the body.
//!
//! Usage: `cargo run --release --example measurement_path -- [n] [steps] [pole_x]`

use heatprobe::indicator::{indicator_boundary, indicator_volume};
use heatprobe::probe::{EtaMode, ProbeParams};
use heatprobe::scenario::{Domain, InclusionTrajectory, Needle, Scenario, Vec3};
use heatprobe::solver::{dtn_flux, solve_measured, solve_reflected, Grid};

fn main() -> heatprobe::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().map(|&v| v as usize).unwrap_or(24);
    let steps = args.get(1).map(|&v| v as usize).unwrap_or(4 * n);
    let pole_x = args.get(2).copied().unwrap_or(-0.05);

    let scenario = Scenario::new(
        Domain::unit_cube(),
        1.0,
        InclusionTrajectory::static_ball(Vec3::new(0.3, 0.5, 0.5), 0.15, 2.0),
    );
    let needle = Needle::fixed(Vec3::new(pole_x, 0.5, 0.5));
    let params = ProbeParams::new(12.0, 3.0, 0.5, 1.0, EtaMode::Zero)?;
    let grid = Grid::new(scenario.domain, n, steps, 1.0)?;

    let limit = solve_reflected(&scenario, &grid, &params, &needle)?;
    let measured = solve_measured(&scenario, &grid, &params, &needle)?;
    let a = indicator_boundary(&dtn_flux(&limit, &grid)?, None, &params, &needle, &grid)?.value;
    let b = indicator_boundary(&dtn_flux(&measured, &grid)?, None, &params, &needle, &grid)?.value;
    let va = indicator_volume(&limit, &scenario, &params, &needle, &grid)?.value;
    let vb = indicator_volume(&measured, &scenario, &params, &needle, &grid)?.value;
    println!("limit path     boundary {:+.6e}  volume {:+.6e}", a.to_f64(), va.to_f64());
    println!("measured path  boundary {:+.6e}  volume {:+.6e}", b.to_f64(), vb.to_f64());
    println!("relative gap   {:.4}", b.relative_difference(a));
    Ok(())
}
