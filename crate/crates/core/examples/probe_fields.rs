//! Forward and adjoint probe fields along a moving needle: values, the
//! correction factor `φ`, and finite-difference heat residuals.
//!
//! Usage: `cargo run --release --example probe_fields`

use heatprobe::probe::{EtaMode, ProbeField, ProbeParams};
use heatprobe::scenario::{Needle, PiecewiseLinear, Vec3};

/// `(∂_t ∓ Δ)` of the full field at `(t, x)`, relative to the size of its terms.
fn residual(field: &ProbeField, t: f64, x: &Vec3, adjoint: bool, eta: f64) -> heatprobe::Result<f64> {
    let h = 1e-5;
    let mid = field.evaluate(t, x)?;
    let up = field.evaluate(t + h, x)?;
    let down = field.evaluate(t - h, x)?;
    let dt = ((up.ln_time_factor - mid.ln_time_factor).exp() * up.value
        - (down.ln_time_factor - mid.ln_time_factor).exp() * down.value)
        / (2.0 * h);
    let (a, b, c) = if adjoint {
        (-dt, -mid.laplacian, eta * mid.value)
    } else {
        (dt, -mid.laplacian, 0.0)
    };
    Ok((a + b + c).abs() / (a.abs() + b.abs() + c.abs()))
}

fn main() -> heatprobe::Result<()> {
    let needle = Needle::new(PiecewiseLinear::new(
        vec![0.0, 0.4, 1.0],
        vec![Vec3::new(-0.2, 0.5, 0.5), Vec3::new(0.2, 0.45, 0.5), Vec3::new(0.3, 0.6, 0.55)],
    )?);
    let points = [Vec3::new(0.6, 0.5, 0.5), Vec3::new(0.3, 0.2, 0.7), Vec3::new(0.9, 0.9, 0.1)];
    for tau in [10.0, 20.0] {
        for mu in [2.0, 5.0] {
            let params = ProbeParams::new(tau, mu, 0.5, 1.0, EtaMode::MuSign)?;
            let forward = ProbeField::forward(params.with_mode(EtaMode::Zero), &needle)?;
            let adjoint = ProbeField::adjoint(params, &needle)?;
            println!("τ = {tau}, μ = {mu}");
            for t in [0.3, 0.7] {
                for x in &points {
                    let u = forward.evaluate(t, x)?;
                    let ustar = adjoint.phi(t, x)?;
                    let r_fwd = residual(&forward, t, x, false, 0.0)?;
                    let r_adj = residual(&adjoint, t, x, true, tau * params.eta(t))?;
                    println!(
                        "  t = {t}  x = ({:.1}, {:.1}, {:.1})  U = {:+.3e}·e^{:.1}  φ = {:.4}  φ* = {:.4}  residuals {r_fwd:.1e} / {r_adj:.1e}",
                        x[0], x[1], x[2], u.value, u.ln_time_factor, u.phi.phi, ustar.phi
                    );
                }
            }
        }
    }
    Ok(())
}
