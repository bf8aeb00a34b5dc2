//! Ground truth of a scenario file: clearance of each needle over time,
//! first contact, and the conductivity along the needle's path.
//!
//! Usage: `cargo run --release --example scenario_geometry -- [scenario.toml]`

use std::path::PathBuf;

use heatprobe::config::load_scenario;
use heatprobe::scenario::{clearance, dist_needle_to_inclusion, t_star_true};

fn main() -> heatprobe::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/linear-approach.toml"));
    let (scenario, needles) = load_scenario(&path)?;
    println!("{}: horizon {}, k0 {}", path.display(), scenario.horizon, scenario.inclusion.k0);
    for (i, needle) in needles.iter().enumerate() {
        match t_star_true(&scenario, needle) {
            Some(t) => println!("needle {i}: first contact at t = {t:.4}"),
            None => println!("needle {i}: never touches the inclusion (T+0)"),
        }
        for k in 0..=10 {
            let t = scenario.horizon * k as f64 / 10.0;
            let y = needle.at(t);
            let gamma = match scenario.gamma_at(t, &y) {
                Ok(g) => format!("{g}"),
                Err(_) => "outside".to_string(),
            };
            println!(
                "  t = {t:.1}  y = ({:+.3}, {:.3}, {:.3})  d(y(t), D(t)) = {:+.4}  d(Σ_t, D_t) = {:.4}  γ(t, y) = {}",
                y[0],
                y[1],
                y[2],
                clearance(&scenario, needle, t),
                dist_needle_to_inclusion(&scenario, needle, t.max(1e-9))?,
                gamma
            );
        }
    }
    Ok(())
}
