//! Quadrature checks of the decay estimates for the Yukawa kernel over a
//! ball: `∫|p|²`, `∫|∇p|²`, their slopes in `τ`, and the blow-up when the
//! pole sits inside.
//!
//! Usage: `cargo run --release --example bounds_oracle`

use heatprobe::bounds::{check_gradp_bounds, check_gradp_decay, check_p_squared_bound, gradp_divergence, Region};
use heatprobe::scenario::Vec3;

fn main() -> heatprobe::Result<()> {
    let region = Region::Ball {
        center: Vec3::repeat(0.5),
        radius: 0.15,
    };
    let y = Vec3::new(0.1, 0.5, 0.5);
    let d0 = region.distance(&y);
    let taus = [5.0, 10.0, 20.0, 40.0];

    let p2 = check_p_squared_bound(&region, &y, &taus)?;
    let g = check_gradp_bounds(&region, &y, d0 + 0.3, &taus)?;
    let decay = check_gradp_decay(&region, &y, d0 + 0.3, &taus, 0.05)?;
    for c in [&p2, &g.upper, &g.lower, &g.lower_explicit] {
        println!("{:<24} {:?}  passed {}  holds from τ = {:?}", c.name, c.kind, c.passed, c.holds_from);
        for (tau, (lhs, rhs)) in c.tau_ladder.iter().zip(c.lhs.iter().zip(&c.rhs_bound)) {
            println!("    τ = {tau:>4}  integral {lhs:.4e}  bound {rhs:.4e}");
        }
    }
    println!(
        "slope of ln∫|∇p|²: {:.4} in [{:.4}, {:.4}]  passed {}",
        decay.slope, decay.lower, decay.upper, decay.passed
    );

    let inside = gradp_divergence(&region, 10.0, &Vec3::new(0.5, 0.5, 0.6))?;
    for (e, v) in inside.excision.iter().zip(&inside.values) {
        println!("pole inside, excision {e:.0e}: {v:.4e}");
    }
    println!("diverges: {}", inside.diverges);
    Ok(())
}
