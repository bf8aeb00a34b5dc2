//! Boundary and volume forms of the indicator on the static-ball scenario.
//!
//! Usage: `cargo run --release --example indicator_identity -- [n] [steps]`

use std::time::Instant;

use heatprobe::indicator::{energy_reference, indicator_boundary, indicator_volume};
use heatprobe::probe::{EtaMode, ProbeParams};
use heatprobe::scenario::{Domain, InclusionTrajectory, Needle, PiecewiseLinear, Scenario, Vec3};
use heatprobe::solver::{dtn_flux, solve_reflected, Grid};

fn main() -> heatprobe::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(32);
    let steps = args.get(1).copied().unwrap_or(4 * n);

    let scenario = Scenario::new(
        Domain::unit_cube(),
        1.0,
        InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.15, 2.0),
    );
    let needle = Needle::new(PiecewiseLinear::new(
        vec![0.0, 0.25],
        vec![Vec3::new(-0.15, 0.5, 0.5), Vec3::new(0.1, 0.5, 0.5)],
    )?);
    let params = ProbeParams::new(12.0, 3.0, 0.5, 1.0, EtaMode::Zero)?;
    let grid = Grid::new(scenario.domain, n, steps, 1.0)?;

    let clock = Instant::now();
    let w = solve_reflected(&scenario, &grid, &params, &needle)?;
    println!("solve      {:>8.1}s", clock.elapsed().as_secs_f64());
    let flux = dtn_flux(&w, &grid)?;
    let clock = Instant::now();
    let b = indicator_boundary(&flux, Some(&w), &params, &needle, &grid)?;
    println!("boundary   {:>8.1}s", clock.elapsed().as_secs_f64());
    let clock = Instant::now();
    let v = indicator_volume(&w, &scenario, &params, &needle, &grid)?;
    println!("volume     {:>8.1}s", clock.elapsed().as_secs_f64());
    let e = energy_reference(&scenario, &params, &needle)?;

    println!("I_boundary {:+.6e}  (flux {:+.6e}, pole {:+.6e})", b.value.to_f64(), b.flux_term.to_f64(), b.pole_term.to_f64());
    println!("I_volume   {:+.6e}  (bulk {:+.6e}, ends {:+.3e} / {:+.3e})",
        v.value.to_f64(), v.bulk.to_f64(), v.endpoint_final.to_f64(), v.endpoint_initial.to_f64());
    println!("energy     {:.6e}", e.to_f64());
    println!("gap        {:.4}", b.value.relative_difference(v.value));
    Ok(())
}
