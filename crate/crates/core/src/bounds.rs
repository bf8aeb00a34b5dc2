//! Quadrature checks of the decay estimates for the Yukawa kernel on a set
//! away from the pole, and of the weighted space-time energy.
//!
//! Every integrand here is radial about the pole, so integrals are taken in
//! spherical coordinates centred at the pole: a ray integral in `r` inside an
//! adaptive integral over the polar angle, the azimuth being trivial for
//! balls and shells.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::ProbeParams;
use crate::quadrature::{adaptive, adaptive_split};
use crate::regression::fit_line;
use crate::scenario::{Needle, Scenario, Shape, Vec3};

/// Bounded open set `O` the kernel is integrated over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Ball { center: Vec3, radius: f64 },
    Shell { center: Vec3, inner: f64, outer: f64 },
}

impl Region {
    fn center(&self) -> Vec3 {
        match *self {
            Region::Ball { center, .. } | Region::Shell { center, .. } => center,
        }
    }

    fn radii(&self) -> (f64, f64) {
        match *self {
            Region::Ball { radius, .. } => (0.0, radius),
            Region::Shell { inner, outer, .. } => (inner, outer),
        }
    }

    /// `d(y, O)`.
    pub fn distance(&self, y: &Vec3) -> f64 {
        let l = (y - self.center()).norm();
        let (a, b) = self.radii();
        if l > b {
            l - b
        } else if l < a {
            a - l
        } else {
            0.0
        }
    }

    /// Whether `y ∈ Ō`.
    pub fn contains_closed(&self, y: &Vec3) -> bool {
        self.distance(y) == 0.0
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.radii();
        if !(a >= 0.0 && b > a && b.is_finite()) {
            return Err(Error::Parameter(format!("invalid region radii ({a}, {b})")));
        }
        Ok(())
    }
}

/// Chord `[s1, s2]` of the sphere `|x − c| = rad` along the ray from the pole
/// with direction cosine `cp` to the centre, clipped at the pole.
fn chord(l: f64, rad: f64, cp: f64) -> Option<(f64, f64)> {
    let disc = rad * rad - l * l * (1.0 - cp * cp);
    if disc <= 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let (s1, s2) = (l * cp - root, l * cp + root);
    (s2 > 0.0).then_some((s1.max(0.0), s2))
}

/// `∫_O g(|x − y|) dx` for `g` radial about `y`, with `r < excise` removed.
fn radial_integral(region: &Region, y: &Vec3, excise: f64, rel_tol: f64, g: &dyn Fn(f64) -> f64) -> f64 {
    let l = (y - region.center()).norm();
    let (a, b) = region.radii();
    let ray = |cp: f64| -> f64 {
        let Some((o1, o2)) = chord(l, b, cp) else { return 0.0 };
        let mut pieces = vec![(o1, o2)];
        if a > 0.0 {
            if let Some((i1, i2)) = chord(l, a, cp) {
                pieces = vec![(o1, i1.max(o1)), (i2.min(o2), o2)];
            }
        }
        pieces
            .into_iter()
            .map(|(s1, s2)| (s1.max(excise), s2))
            .filter(|(s1, s2)| s2 > s1)
            .map(|(s1, s2)| adaptive(|r| g(r) * r * r, s1, s2, 0.0, rel_tol, 200).value)
            .sum()
    };
    let mut breaks = vec![-1.0, 1.0];
    for rad in [a, b] {
        if rad > 0.0 && l > rad {
            breaks.push((1.0 - (rad / l).powi(2)).sqrt());
        }
    }
    if l > b {
        let lo = (1.0 - (b / l).powi(2)).sqrt();
        breaks.retain(|&c| c >= lo);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    2.0 * PI * adaptive_split(ray, &breaks, 0.0, rel_tol, 200).value
}

/// `∫_O |p_{τ,y}|² dx`; `τ = 0` is allowed.
pub fn p_squared_integral(region: &Region, tau: f64, y: &Vec3, rel_tol: f64) -> Result<f64> {
    region.validate()?;
    if region.contains_closed(y) {
        return Err(Error::Domain(format!("pole {y:?} lies in the closed region")));
    }
    let g = |r: f64| (-2.0 * tau * r).exp() / (16.0 * PI * PI * r * r);
    Ok(radial_integral(region, y, 0.0, rel_tol, &g))
}

fn gradp_density(tau: f64, r: f64) -> f64 {
    (tau * r + 1.0).powi(2) * (-2.0 * tau * r).exp() / (16.0 * PI * PI * r.powi(4))
}

/// `∫_O |∇p_{τ,y}|² dx`.
pub fn gradp_squared_integral(region: &Region, tau: f64, y: &Vec3, rel_tol: f64) -> Result<f64> {
    region.validate()?;
    if region.contains_closed(y) {
        return Err(Error::Domain(format!("pole {y:?} lies in the closed region")));
    }
    Ok(radial_integral(region, y, 0.0, rel_tol, &|r| gradp_density(tau, r)))
}

/// Whether a bound is from above or below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Upper,
    Lower,
}

/// A bound evaluated along a `τ` ladder with its constant fixed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub kind: BoundKind,
    pub tau_ladder: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs_bound: Vec<f64>,
    /// `lhs / rhs_bound`: at most 1 for upper bounds, at least 1 for lower.
    pub margin: Vec<f64>,
    pub constant: f64,
    /// Smallest ladder `τ` from which the bound holds at every larger one.
    pub holds_from: Option<f64>,
    pub passed: bool,
}

const MARGIN_SLACK: f64 = 1e-9;

impl BoundCheck {
    /// Builds the check from `lhs` values and the bound shape `rhs(τ)/C`.
    /// With `constant = None` the constant is fitted at the first ladder point.
    fn build(
        name: &str,
        kind: BoundKind,
        taus: &[f64],
        lhs: Vec<f64>,
        shape: impl Fn(f64) -> f64,
        constant: Option<f64>,
    ) -> Self {
        let shapes: Vec<f64> = taus.iter().map(|&t| shape(t)).collect();
        let constant = constant.unwrap_or(lhs[0] / shapes[0]);
        let rhs_bound: Vec<f64> = shapes.iter().map(|s| constant * s).collect();
        let margin: Vec<f64> = lhs.iter().zip(&rhs_bound).map(|(l, r)| l / r).collect();
        let ok = |m: f64| match kind {
            BoundKind::Upper => m <= 1.0 + MARGIN_SLACK,
            BoundKind::Lower => m >= 1.0 - MARGIN_SLACK,
        };
        let first_bad = margin.iter().rposition(|&m| !ok(m));
        let holds_from = match first_bad {
            None => taus.first().copied(),
            Some(i) => taus.get(i + 1).copied(),
        };
        Self {
            name: name.to_string(),
            kind,
            tau_ladder: taus.to_vec(),
            lhs,
            rhs_bound,
            margin,
            constant,
            holds_from,
            passed: first_bad.is_none(),
        }
    }
}

/// Measured `τ`-slope of a log-integral against an admissible interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub name: String,
    pub tau_ladder: Vec<f64>,
    pub slope: f64,
    pub lower: f64,
    pub upper: f64,
    pub passed: bool,
}

fn ladder(taus: &[f64]) -> Result<()> {
    if taus.len() < 2 {
        return Err(Error::Arity {
            needed: 2,
            got: taus.len(),
        });
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) || taus[0] <= 0.0 {
        return Err(Error::Parameter(format!("tau ladder must be positive and increasing: {taus:?}")));
    }
    Ok(())
}

const TOL: f64 = 1e-10;

/// `∫_O p² ≤ C/(τ d) e^{−2τd}`, `d = d(y, O)`, with `C` fitted at the
/// smallest `τ`.
pub fn check_p_squared_bound(region: &Region, y: &Vec3, taus: &[f64]) -> Result<BoundCheck> {
    ladder(taus)?;
    let d = region.distance(y);
    let lhs = taus
        .iter()
        .map(|&t| p_squared_integral(region, t, y, TOL))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCheck::build(
        "p_squared_upper",
        BoundKind::Upper,
        taus,
        lhs,
        |t| (-2.0 * t * d).exp() / (t * d),
        None,
    ))
}

/// Bounds on `∫_O |∇p|²` along a ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradpChecks {
    /// `≤ C τ (1 + 1/(τ d(y,O))) e^{−2τ d(y,O)}`, `C` fitted.
    pub upper: BoundCheck,
    /// `≥ C τ² e^{−2τd}`, `C` fitted.
    pub lower: BoundCheck,
    /// The lower bound with `C = ∫_{O ∩ B(y,d)} (4πr)^{−2} dx`.
    pub lower_explicit: BoundCheck,
}

/// Upper and lower bounds on `∫_O |∇p_{τ,y}|²` for a comparison distance
/// `d > d(y, O)`.
pub fn check_gradp_bounds(region: &Region, y: &Vec3, d: f64, taus: &[f64]) -> Result<GradpChecks> {
    ladder(taus)?;
    let d0 = region.distance(y);
    if !(d > d0) {
        return Err(Error::Parameter(format!("comparison distance {d} must exceed d(y, O) = {d0}")));
    }
    let lhs = taus
        .iter()
        .map(|&t| gradp_squared_integral(region, t, y, TOL))
        .collect::<Result<Vec<_>>>()?;
    let upper_shape = |t: f64| t * (1.0 + 1.0 / (t * d0)) * (-2.0 * t * d0).exp();
    let lower_shape = |t: f64| t * t * (-2.0 * t * d).exp();
    let near = radial_integral(region, y, 0.0, TOL, &|r| {
        if r < d {
            1.0 / (16.0 * PI * PI * r * r)
        } else {
            0.0
        }
    });
    Ok(GradpChecks {
        upper: BoundCheck::build("gradp_upper", BoundKind::Upper, taus, lhs.clone(), upper_shape, None),
        lower: BoundCheck::build("gradp_lower", BoundKind::Lower, taus, lhs.clone(), lower_shape, None),
        lower_explicit: BoundCheck::build("gradp_lower_explicit", BoundKind::Lower, taus, lhs, lower_shape, Some(near)),
    })
}

/// Least-squares `τ`-slope of `ln ∫_O |∇p|²`, checked against
/// `[−2d − slack, −2d(y,O) + slack]`.
pub fn check_gradp_decay(region: &Region, y: &Vec3, d: f64, taus: &[f64], slack: f64) -> Result<DecayCheck> {
    ladder(taus)?;
    let logs = taus
        .iter()
        .map(|&t| gradp_squared_integral(region, t, y, TOL).map(f64::ln))
        .collect::<Result<Vec<_>>>()?;
    let slope = fit_line(taus, &logs)?.slope;
    let lower = -2.0 * d - slack;
    let upper = -2.0 * region.distance(y) + slack;
    Ok(DecayCheck {
        name: "gradp_decay".into(),
        tau_ladder: taus.to_vec(),
        slope,
        lower,
        upper,
        passed: slope >= lower && slope <= upper,
    })
}

/// `∫_{O, r>ε} |∇p|²` along shrinking excision radii around a pole inside
/// the region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub excision: Vec<f64>,
    pub values: Vec<f64>,
    /// Set when every refinement grows the integral by at least half the
    /// refinement factor, the `1/ε` blow-up.
    pub diverges: bool,
}

pub fn gradp_divergence(region: &Region, tau: f64, y: &Vec3) -> Result<DivergenceReport> {
    region.validate()?;
    let excision = vec![1e-2, 1e-3, 1e-4, 1e-5];
    let values: Vec<f64> = excision
        .iter()
        .map(|&e| radial_integral(region, y, e, 1e-8, &|r| gradp_density(tau, r)))
        .collect();
    let diverges = region.contains_closed(y) && values.windows(2).all(|w| w[1] > 5.0 * w[0]);
    Ok(DivergenceReport {
        excision,
        values,
        diverges,
    })
}

fn ball_at(scenario: &Scenario, t: f64) -> Result<Region> {
    let inc = &scenario.inclusion;
    if !matches!(inc.shape, Shape::Ball) || inc.profile.is_some() {
        return Err(Error::Parameter("space-time bounds need a ball with constant contrast".into()));
    }
    Ok(Region::Ball {
        center: inc.center(t),
        radius: inc.radius(t),
    })
}

/// `∫₀^{T′} κ(t) ∫_{D(t)} |γ−1| |∇p_{τ,y(t)}|² dx dt` with its own quadrature.
pub fn spacetime_integral(scenario: &Scenario, needle: &Needle, params: &ProbeParams, rel_tol: f64) -> Result<f64> {
    scenario.check_time(params.t_prime)?;
    let km1 = (scenario.inclusion.k0 - 1.0).abs();
    if km1 == 0.0 {
        return Ok(0.0);
    }
    let tp = params.t_prime;
    let mut breaks = vec![0.0, params.theta, tp];
    let width = 1.0 / (params.tau * params.mu).max(1.0);
    for m in [1.0, 4.0, 16.0] {
        breaks.push(params.theta - m * width);
        breaks.push(params.theta + m * width);
    }
    breaks.extend(needle.kink_times().iter().copied());
    breaks.extend(scenario.inclusion.kink_times());
    breaks.retain(|&t| (0.0..=tp).contains(&t));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut failure = None;
    let slice = |t: f64| -> f64 {
        let run = || -> Result<f64> {
            let region = ball_at(scenario, t)?;
            gradp_squared_integral(&region, params.tau, &needle.at(t), rel_tol)
        };
        match run() {
            Ok(v) => params.kappa(t) * v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let value = adaptive_split(slice, &breaks, 0.0, rel_tol, 400).value;
    match failure {
        Some(e) => Err(e),
        None => Ok(km1 * value),
    }
}

/// Upper and lower space-time bounds, constants fitted at the smallest `τ`:
/// `≤ (C/μ)(1 + 1/(τ d_θ)) e^{−2τ d_θ}` with `d_θ = d(y(θ), D(θ))`, and
/// `≥ C (τ/μ) e^{−2τd}` for `d > d_θ`.
pub fn check_spacetime_bounds(
    scenario: &Scenario,
    needle: &Needle,
    base: &ProbeParams,
    d: f64,
    taus: &[f64],
) -> Result<(BoundCheck, BoundCheck)> {
    ladder(taus)?;
    let d_theta = scenario.inclusion.distance(base.theta, &needle.at(base.theta));
    if !(d > d_theta) {
        return Err(Error::Parameter(format!(
            "comparison distance {d} must exceed d(y(θ), D(θ)) = {d_theta}"
        )));
    }
    let mu = base.mu;
    let lhs = taus
        .iter()
        .map(|&t| spacetime_integral(scenario, needle, &base.with_tau(t), 1e-9))
        .collect::<Result<Vec<_>>>()?;
    let upper = |t: f64| (1.0 + 1.0 / (t * d_theta)) * (-2.0 * t * d_theta).exp() / mu;
    let lower = |t: f64| t / mu * (-2.0 * t * d).exp();
    Ok((
        BoundCheck::build("spacetime_upper", BoundKind::Upper, taus, lhs.clone(), upper, None),
        BoundCheck::build("spacetime_lower", BoundKind::Lower, taus, lhs, lower, None),
    ))
}

/// All bound checks of a run, written as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
    pub decay: Vec<DecayCheck>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.decay.iter().all(|c| c.passed)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
