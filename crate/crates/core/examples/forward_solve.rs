//! Heat solver on a homogeneous cube against the separable solution
//! `e^{−3π²t} sin πx sin πy sin πz`, then a snapshot round trip. With one
//! time step per cell the error is dominated by the first-order time step.
//!
//! Usage: `cargo run --release --example forward_solve`

use std::f64::consts::PI;

use heatprobe::scenario::{Domain, InclusionTrajectory, Scenario, Vec3};
use heatprobe::solver::{read_snapshot, sample_nodes, solve_dirichlet, write_snapshot, BoundaryTrace, Grid};

fn mode(x: &Vec3) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
}

fn main() -> heatprobe::Result<()> {
    let scenario = Scenario::new(
        Domain::unit_cube(),
        0.05,
        InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.15, 1.0),
    );
    let mut last = None;
    for n in [8, 16, 32] {
        let grid = Grid::new(scenario.domain, n, n, 0.05)?;
        let v0 = sample_nodes(&grid, |x| Ok(mode(x)))?;
        let field = solve_dirichlet(&scenario, &grid, &BoundaryTrace::zeros(grid), &v0)?;
        let decay = (-3.0 * PI * PI * grid.t_end).exp();
        let centre = Vec3::repeat(0.5);
        let err = (field.interpolate(grid.steps, &centre) - decay).abs();
        println!("n = {n:>2}  u(T, centre) = {:.6}  exact {decay:.6}  error {err:.2e}", field.interpolate(grid.steps, &centre));
        last = Some(field);
    }

    let field = last.expect("at least one grid");
    let dir = std::env::temp_dir().join("heatprobe-forward-solve");
    std::fs::create_dir_all(&dir)?;
    let (bin, _) = write_snapshot(&field, &dir.join("mode"), "example", None)?;
    let (back, meta) = read_snapshot(&dir.join("mode"))?;
    println!("snapshot {} ({} levels), bit-exact: {}", bin.display(), meta.levels, back == field);
    Ok(())
}
