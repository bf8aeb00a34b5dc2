use std::sync::Arc;

use heatprobe::bounds::{gradp_squared_integral, p_squared_integral, Region};
use heatprobe::probe::{p_yukawa, EtaMode, LagQuadrature, ProbeField, ProbeKind, ProbeParams};
use heatprobe::reconstruct::{estimate_distance_from, estimate_f, EnergyEvaluator, FConfig, GridSpec, Pipeline};
use heatprobe::scenario::{dist_point_to_inclusion, Domain, InclusionTrajectory, Needle, PiecewiseLinear, Scenario, Vec3};
use heatprobe::solver::{sample_nodes, solve_dirichlet, BoundaryTrace, Grid};
use proptest::prelude::*;

fn static_ball() -> Scenario {
    Scenario::new(
        Domain::unit_cube(),
        1.0,
        InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.15, 2.0),
    )
}

fn line(from: Vec3, to: Vec3) -> Needle {
    Needle::new(PiecewiseLinear::new(vec![0.0, 1.0], vec![from, to]).unwrap())
}

fn parked() -> Needle {
    Needle::new(
        PiecewiseLinear::new(vec![0.0, 0.25], vec![Vec3::new(-0.15, 0.5, 0.5), Vec3::new(0.1, 0.5, 0.5)]).unwrap(),
    )
}

fn bent() -> Needle {
    Needle::new(
        PiecewiseLinear::new(
            vec![0.0, 0.4, 1.0],
            vec![Vec3::new(-0.2, 0.5, 0.5), Vec3::new(0.2, 0.45, 0.5), Vec3::new(0.3, 0.6, 0.55)],
        )
        .unwrap(),
    )
}

fn point() -> impl Strategy<Value = Vec3> {
    (0.4f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn doubling_lag_nodes_leaves_phi_unchanged(
        tau in 5f64..40.0, mu_frac in 0f64..0.25, t in 0.05f64..0.95, x in point(), adjoint in any::<bool>()
    ) {
        let mode = if adjoint { EtaMode::MuSign } else { EtaMode::Zero };
        let kind = if adjoint { ProbeKind::Adjoint } else { ProbeKind::Forward };
        let params = ProbeParams::new(tau, mu_frac * tau, 0.5, 1.0, mode).unwrap();
        let q = LagQuadrature::shared();
        let a = ProbeField::with_quadrature(params, &bent(), kind, q.clone()).phi(t, &x).unwrap().phi;
        let b = ProbeField::with_quadrature(params, &bent(), kind, Arc::new(q.doubled())).phi(t, &x).unwrap().phi;
        prop_assert!((a - b).abs() < 1e-8 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn static_needle_reduces_to_the_yukawa_kernel(
        tau in 1f64..60.0, t in 0.0f64..1.0, x in point(), y in (-0.3f64..-0.01, 0.0f64..1.0, 0.0f64..1.0)
    ) {
        let pole = Vec3::new(y.0, y.1, y.2);
        let needle = Needle::new(PiecewiseLinear::new(vec![0.0], vec![pole]).unwrap());
        let params = ProbeParams::new(tau, 0.0, 0.5, 1.0, EtaMode::Zero).unwrap();
        let u = ProbeField::forward(params, &needle).unwrap().evaluate(t, &x).unwrap();
        let (p, _) = p_yukawa(tau, &pole, &x).unwrap();
        prop_assert!((u.value - p).abs() <= 1e-12 * p.abs());
        prop_assert!((u.ln_time_factor - tau * tau * t).abs() <= 1e-12 * (1.0 + tau * tau * t));
    }

    #[test]
    fn halving_the_tolerance_stays_within_it(
        radius in 0.05f64..0.3, gap in 0.02f64..0.6, dir in (-1f64..1.0, -1f64..1.0, -1f64..1.0), tau in 0f64..40.0
    ) {
        let dir = Vec3::new(dir.0, dir.1, dir.2);
        prop_assume!(dir.norm() > 0.1);
        let center = Vec3::repeat(0.5);
        let y = center + dir.normalize() * (radius + gap);
        let region = Region::Ball { center, radius };
        let tol = 1e-6;
        for f in [p_squared_integral, gradp_squared_integral] {
            let a = f(&region, tau, &y, tol).unwrap();
            let b = f(&region, tau, &y, tol / 2.0).unwrap();
            prop_assert!((a - b).abs() <= tol * b.abs(), "{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn heat_steps_obey_the_maximum_principle(
        k0 in 0.2f64..5.0, seed in any::<u64>(), lo in -2f64..0.0, span in 0.1f64..3.0
    ) {
        let scenario = Scenario::new(
            Domain::unit_cube(),
            0.1,
            InclusionTrajectory::static_ball(Vec3::new(0.45, 0.55, 0.5), 0.2, k0),
        );
        let grid = Grid::new(scenario.domain, 8, 5, 0.1).unwrap();
        let hash = |x: &Vec3, s: u64| {
            let v = ((x[0] * 12.9898 + x[1] * 78.233 + x[2] * 37.719 + s as f64 * 1e-9).sin() * 43758.5453).fract().abs();
            lo + span * v
        };
        let f = BoundaryTrace::from_fn(grid, |t, x| hash(x, seed.wrapping_add((t * 1e3) as u64)));
        let v0 = sample_nodes(&grid, |x| Ok(hash(x, seed ^ 0x5bd1))).unwrap();
        let field = solve_dirichlet(&scenario, &grid, &f, &v0).unwrap();
        for level in &field.levels {
            for &v in level {
                prop_assert!(v >= lo - 1e-9 && v <= lo + span + 1e-9, "{v} outside [{lo}, {}]", lo + span);
            }
        }
    }

    #[test]
    fn free_decay_never_gains_energy(k0 in 0.2f64..5.0, seed in 0u64..1000) {
        let scenario = Scenario::new(
            Domain::unit_cube(),
            0.1,
            InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.2, k0),
        );
        let grid = Grid::new(scenario.domain, 8, 8, 0.1).unwrap();
        let v0 = sample_nodes(&grid, |x| Ok(((x[0] * 7.1 + x[1] * 3.3 + x[2] * 5.7) * (1.0 + seed as f64)).sin())).unwrap();
        let field = solve_dirichlet(&scenario, &grid, &BoundaryTrace::zeros(grid), &v0).unwrap();
        for k in 1..field.levels.len() {
            prop_assert!(field.l2_norm(k) <= field.l2_norm(k - 1) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn longer_windows_never_push_f_away_from_zero(a in 0.12f64..0.44, b in 0.12f64..0.44, lateral in 0f64..0.1) {
        let (t1, t2) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(t2 - t1 > 0.02);
        let needle = line(Vec3::new(-0.1, 0.5, 0.5), Vec3::new(0.8, 0.5 + lateral, 0.5));
        let ev = EnergyEvaluator::new(static_ball(), needle, 0.02).unwrap();
        let config = FConfig { tau_ladder: vec![8.0, 12.0, 16.0, 20.0], mu_ladder: vec![2.0], theta_step: 0.02, theta_window: None };
        let f1 = estimate_f(t1, &config.thetas(t1), &config.mu_ladder, &config.tau_ladder, &ev).unwrap();
        let f2 = estimate_f(t2, &config.thetas(t2), &config.mu_ladder, &config.tau_ladder, &ev).unwrap();
        prop_assert!(f2.value.abs() <= f1.value.abs() + 0.1, "F̂({t1}) = {}, F̂({t2}) = {}", f1.value, f2.value);
    }
}

/// Sign and ln|I| at one ladder point with `μ = 2`.
fn indicator_ln(pipeline: &Pipeline, tau: f64, theta: f64, t_prime: f64) -> (i8, f64) {
    let params = ProbeParams::new(tau, 2.0, theta, t_prime, EtaMode::MuSign).unwrap();
    let v = pipeline.boundary(&params).unwrap();
    (v.sign, v.ln_abs)
}

/// Holds once `τ` dominates the `θ`-dependent prefactor; at `τ = 8` it does not yet.
#[test]
fn window_centred_nearer_contact_weighs_more() {
    let needle = line(Vec3::new(-0.1, 0.5, 0.5), Vec3::new(0.8, 0.5, 0.5));
    let spec = GridSpec { n: 16, dt: 1.0 / 64.0 };
    let pipeline = Pipeline::new(static_ball(), needle, spec).unwrap();
    let ln: Vec<f64> = [0.15, 0.2, 0.25, 0.3]
        .iter()
        .map(|&theta| {
            let (sign, v) = indicator_ln(&pipeline, 20.0, theta, 0.34);
            assert_eq!(sign, 1);
            v
        })
        .collect();
    assert!(ln.windows(2).all(|w| w[1] > w[0]), "ln|I| along θ: {ln:?}");
    let (_, far) = indicator_ln(&pipeline, 16.0, 0.15, 0.34);
    let (_, near) = indicator_ln(&pipeline, 16.0, 0.3, 0.34);
    assert!(near > far);
}

#[test]
fn halving_h_moves_d_hat_less_than_the_fit_residual() {
    let scenario = static_ball();
    let theta = 0.5;
    let truth = dist_point_to_inclusion(&scenario, theta, &parked().at(theta)).unwrap();
    let mut fits = Vec::new();
    for n in [16, 32] {
        let pipeline = Pipeline::new(scenario.clone(), parked(), GridSpec { n, dt: 1.0 / (4 * n) as f64 }).unwrap();
        let points: Vec<_> = [8.0, 12.0, 16.0, 20.0]
            .iter()
            .map(|&tau| {
                let params = ProbeParams::new(tau, 2.0, theta, 1.0, EtaMode::MuSign).unwrap();
                (tau, pipeline.boundary(&params).unwrap())
            })
            .collect();
        fits.push(estimate_distance_from(theta, &points).unwrap());
    }
    let change = (fits[1].d_hat - fits[0].d_hat).abs();
    println!("d_hat {:.4} -> {:.4} (true {truth}), residual {:.3e}", fits[0].d_hat, fits[1].d_hat, fits[1].fit_residual);
    assert!(change < fits[1].fit_residual, "d_hat moved by {change}, residual {}", fits[1].fit_residual);
}
