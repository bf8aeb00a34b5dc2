//! Body, moving inclusion, conductivity and needle, plus ground-truth geometry.

use std::fmt;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance used when deciding whether a time or point lies in a closed set.
const EDGE_TOL: f64 = 1e-12;

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Domain {
    pub fn new(lo: Vec3, hi: Vec3) -> Result<Self> {
        if (0..3).any(|i| !(hi[i] > lo[i])) {
            return Err(Error::Parameter(format!(
                "box corners must satisfy lo < hi componentwise, got {lo:?} and {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit_cube() -> Self {
        Self {
            lo: Vec3::zeros(),
            hi: Vec3::repeat(1.0),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.hi - self.lo
    }

    pub fn contains_closed(&self, x: &Vec3) -> bool {
        (0..3).all(|i| x[i] >= self.lo[i] - EDGE_TOL && x[i] <= self.hi[i] + EDGE_TOL)
    }

    /// Euclidean distance from `x` to the closed box (0 inside).
    pub fn distance_outside(&self, x: &Vec3) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            let d = (self.lo[i] - x[i]).max(x[i] - self.hi[i]).max(0.0);
            s += d * d;
        }
        s.sqrt()
    }

    /// Distance from an interior point to the boundary.
    pub fn depth(&self, x: &Vec3) -> f64 {
        (0..3)
            .map(|i| (x[i] - self.lo[i]).min(self.hi[i] - x[i]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Values that a piecewise-linear path can carry.
pub trait Knot: Copy + fmt::Debug {
    fn lerp(a: Self, b: Self, s: f64) -> Self;
    fn dist(a: Self, b: Self) -> f64;
}

impl Knot for f64 {
    fn lerp(a: f64, b: f64, s: f64) -> f64 {
        a + (b - a) * s
    }
    fn dist(a: f64, b: f64) -> f64 {
        (a - b).abs()
    }
}

impl Knot for Vec3 {
    fn lerp(a: Vec3, b: Vec3, s: f64) -> Vec3 {
        a + (b - a) * s
    }
    fn dist(a: Vec3, b: Vec3) -> f64 {
        (a - b).norm()
    }
}

/// Piecewise-linear interpolant through `(times[i], values[i])`, held constant
/// outside the first and last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear<T> {
    times: Vec<f64>,
    values: Vec<T>,
}

impl<T: Knot> PiecewiseLinear<T> {
    pub fn new(times: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Parameter(format!(
                "path needs matching nonempty knot lists ({} times, {} values)",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("path knot times must be strictly increasing".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Parameter("path knot times must be finite".into()));
        }
        Ok(Self { times, values })
    }

    pub fn constant(value: T) -> Self {
        Self {
            times: vec![0.0],
            values: vec![value],
        }
    }

    pub fn eval(&self, t: f64) -> T {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let s = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        T::lerp(self.values[i], self.values[i + 1], s)
    }

    /// Largest slope over all segments.
    pub fn lipschitz(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| T::dist(v[1], v[0]) / (t[1] - t[0]))
            .fold(0.0, f64::max)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Interior knot times strictly inside `(a, b)`, where the path may kink.
    pub fn kinks_in(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.times.iter().copied().filter(move |&t| t > a && t < b)
    }
}

/// Parametric inclusion shape. Ellipsoid semi-axes are `radius(t)·axes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ball,
    Ellipsoid { axes: Vec3 },
}

/// Optional spatially varying contrast `k(t, x)` inside the inclusion.
#[derive(Clone)]
pub struct ContrastProfile(pub Arc<dyn Fn(f64, &Vec3) -> f64 + Send + Sync>);

impl fmt::Debug for ContrastProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ContrastProfile(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InclusionTrajectory {
    pub shape: Shape,
    pub center_path: PiecewiseLinear<Vec3>,
    pub radius_path: PiecewiseLinear<f64>,
    pub k0: f64,
    #[serde(skip)]
    pub profile: Option<ContrastProfile>,
}

impl InclusionTrajectory {
    pub fn static_ball(center: Vec3, radius: f64, k0: f64) -> Self {
        Self {
            shape: Shape::Ball,
            center_path: PiecewiseLinear::constant(center),
            radius_path: PiecewiseLinear::constant(radius),
            k0,
            profile: None,
        }
    }

    pub fn center(&self, t: f64) -> Vec3 {
        self.center_path.eval(t)
    }

    pub fn radius(&self, t: f64) -> f64 {
        self.radius_path.eval(t)
    }

    /// Semi-axes of `D(t)`.
    pub fn semi_axes(&self, t: f64) -> Vec3 {
        let r = self.radius(t);
        match self.shape {
            Shape::Ball => Vec3::repeat(r),
            Shape::Ellipsoid { axes } => axes * r,
        }
    }

    /// Open-set membership `x ∈ D(t)`.
    pub fn contains(&self, t: f64, x: &Vec3) -> bool {
        self.level(t, x) < 1.0
    }

    /// `Σ ((x−c)_i / a_i)²`; below 1 inside, 1 on the surface.
    pub fn level(&self, t: f64, x: &Vec3) -> f64 {
        let c = self.center(t);
        let a = self.semi_axes(t);
        (0..3).map(|i| ((x[i] - c[i]) / a[i]).powi(2)).sum()
    }

    pub fn contrast(&self, t: f64, x: &Vec3) -> f64 {
        match &self.profile {
            Some(p) => (p.0)(t, x),
            None => self.k0,
        }
    }

    /// Bound on the speed of any surface point: `|ċ|∞ + |ṙ|∞·max axis`.
    pub fn surface_speed_bound(&self) -> f64 {
        let amax = match self.shape {
            Shape::Ball => 1.0,
            Shape::Ellipsoid { axes } => axes.max(),
        };
        self.center_path.lipschitz() + self.radius_path.lipschitz() * amax
    }

    /// Exact distance from `y` to the closed set `D̄(t)`.
    pub fn distance(&self, t: f64, y: &Vec3) -> f64 {
        let c = self.center(t);
        let a = self.semi_axes(t);
        let q = y - c;
        match self.shape {
            Shape::Ball => (q.norm() - a[0]).max(0.0),
            Shape::Ellipsoid { .. } => distance_to_ellipsoid(&a, &q),
        }
    }

    /// Closest point of `D̄(t)` to `y`.
    pub fn closest_point(&self, t: f64, y: &Vec3) -> Vec3 {
        let c = self.center(t);
        let a = self.semi_axes(t);
        let q = y - c;
        if self.level(t, y) <= 1.0 {
            return *y;
        }
        let lam = ellipsoid_multiplier(&a, &q);
        c + Vec3::from_fn(|i, _| a[i] * a[i] * q[i] / (a[i] * a[i] + lam))
    }

    /// Knot times where the trajectory velocity may jump.
    pub fn kink_times(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self
            .center_path
            .times()
            .iter()
            .chain(self.radius_path.times())
            .copied()
            .collect();
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }
}

/// Lagrange multiplier `λ > 0` of the projection of an exterior point `q`
/// onto the ellipsoid with semi-axes `a` centred at the origin.
fn ellipsoid_multiplier(a: &Vec3, q: &Vec3) -> f64 {
    let f = |lam: f64| -> f64 {
        (0..3)
            .map(|i| (a[i] * q[i] / (a[i] * a[i] + lam)).powi(2))
            .sum::<f64>()
            - 1.0
    };
    let mut lo = 0.0;
    let mut hi = a.max() * q.norm();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn distance_to_ellipsoid(a: &Vec3, q: &Vec3) -> f64 {
    let level: f64 = (0..3).map(|i| (q[i] / a[i]).powi(2)).sum();
    if level <= 1.0 {
        return 0.0;
    }
    let lam = ellipsoid_multiplier(a, q);
    let x = Vec3::from_fn(|i, _| a[i] * a[i] * q[i] / (a[i] * a[i] + lam));
    (q - x).norm()
}

/// Initial temperature descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialData {
    Zero,
    Constant { value: f64 },
    /// `amplitude · exp(−|x−center|²/width²)`.
    Bump {
        amplitude: f64,
        center: Vec3,
        width: f64,
    },
    /// `v0 = U_τ(0, ·)` for the probe in use; resolved by the solver.
    ProbeSeeded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub domain: Domain,
    pub horizon: f64,
    pub inclusion: InclusionTrajectory,
    pub initial: InitialData,
    /// Growth constant `l0 ≥ 0` in the bound on the initial data.
    pub l0: f64,
    /// Bound `C > 1` with `1/C ≤ k ≤ C` on the inclusion.
    pub contrast_bound: f64,
}

impl Scenario {
    pub fn new(domain: Domain, horizon: f64, inclusion: InclusionTrajectory) -> Self {
        let k0 = inclusion.k0;
        let contrast_bound = k0.max(1.0 / k0).max(1.0);
        Self {
            domain,
            horizon,
            inclusion,
            initial: InitialData::Zero,
            l0: 0.0,
            contrast_bound,
        }
    }

    pub fn with_initial(mut self, initial: InitialData) -> Self {
        self.initial = initial;
        self
    }

    /// `+1` or `−1` for the sign of `k − 1`; `0` for a background-only body.
    pub fn contrast_sign(&self) -> i8 {
        let d = self.inclusion.k0 - 1.0;
        if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            0
        }
    }

    /// Conductivity `γ(t, x)`: `k0` inside the body, 1 outside.
    pub fn gamma_at(&self, t: f64, x: &Vec3) -> Result<f64> {
        self.check_time(t)?;
        if !self.domain.contains_closed(x) {
            return Err(Error::Domain(format!("point {x:?} outside the domain")));
        }
        Ok(self.gamma_unchecked(t, x))
    }

    /// Conductivity without argument checks; used inside solver loops.
    #[inline]
    pub fn gamma_unchecked(&self, t: f64, x: &Vec3) -> f64 {
        if self.inclusion.contains(t, x) {
            self.inclusion.contrast(t, x)
        } else {
            1.0
        }
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= -EDGE_TOL && t <= self.horizon + EDGE_TOL) {
            return Err(Error::Domain(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Initial value at `x` for the non-probe descriptors.
    pub fn initial_value(&self, x: &Vec3) -> f64 {
        match self.initial {
            InitialData::Zero | InitialData::ProbeSeeded => 0.0,
            InitialData::Constant { value } => value,
            InitialData::Bump {
                amplitude,
                center,
                width,
            } => amplitude * (-(x - center).norm_squared() / (width * width)).exp(),
        }
    }

    /// Checks the structural conditions on body, inclusion and contrast by
    /// sampling `t`; returns the list of violations (empty if valid).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            out.push(format!("horizon must be positive, got {}", self.horizon));
            return out;
        }
        if self.l0 < 0.0 {
            out.push(format!("l0 must be nonnegative, got {}", self.l0));
        }
        let k0 = self.inclusion.k0;
        if !(k0 > 0.0 && k0.is_finite()) {
            out.push(format!("contrast k0 must be positive, got {k0}"));
            return out;
        }
        let samples = 201;
        let mut sign = 0i8;
        for j in 0..samples {
            let t = self.horizon * j as f64 / (samples - 1) as f64;
            let a = self.inclusion.semi_axes(t);
            if a.min() <= 0.0 {
                out.push(format!("inclusion has empty interior at t = {t}"));
                break;
            }
            let c = self.inclusion.center(t);
            let reach = a.max();
            let lo_gap = (0..3).map(|i| c[i] - a[i] - self.domain.lo[i]);
            let hi_gap = (0..3).map(|i| self.domain.hi[i] - c[i] - a[i]);
            if lo_gap.chain(hi_gap).any(|g| g <= 0.0) {
                out.push(format!(
                    "inclusion not strictly inside the box at t = {t} (centre {:?}, reach {reach})",
                    c.as_slice()
                ));
                break;
            }
            // contrast checks on a shrunken copy of D(t)
            for p in shrunken_samples(c, a, 0.5) {
                let k = self.inclusion.contrast(t, &p);
                let cb = self.contrast_bound;
                if !(k >= 1.0 / cb - EDGE_TOL && k <= cb + EDGE_TOL) {
                    out.push(format!("contrast {k} at t = {t} outside [1/{cb}, {cb}]"));
                    return out;
                }
                let s = if k > 1.0 {
                    1
                } else if k < 1.0 {
                    -1
                } else {
                    0
                };
                if self.contrast_sign() != 0 {
                    if s == 0 {
                        out.push(format!("k − 1 vanishes inside D({t})"));
                        return out;
                    }
                    if sign != 0 && s != sign {
                        out.push("k − 1 changes sign on the inclusion".into());
                        return out;
                    }
                    sign = s;
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

fn shrunken_samples(c: Vec3, a: Vec3, factor: f64) -> impl Iterator<Item = Vec3> {
    let dirs = [
        Vec3::zeros(),
        Vec3::x(),
        -Vec3::x(),
        Vec3::y(),
        -Vec3::y(),
        Vec3::z(),
        -Vec3::z(),
    ];
    dirs.into_iter()
        .map(move |d| c + Vec3::from_fn(|i, _| factor * a[i] * d[i]))
}

/// Piecewise-linear probe trajectory `y(t)`, defined on `[−1, T+1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Needle {
    pub path: PiecewiseLinear<Vec3>,
    pub lipschitz_bound: f64,
}

/// How a needle path given on a shorter interval is continued to `[−1, T+1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    /// Hold the end positions.
    #[default]
    Clamp,
    /// Continue the first and last segments linearly.
    Linear,
}

impl Needle {
    pub fn new(path: PiecewiseLinear<Vec3>) -> Self {
        let lipschitz_bound = path.lipschitz();
        Self {
            path,
            lipschitz_bound,
        }
    }

    pub fn fixed(point: Vec3) -> Self {
        Self::new(PiecewiseLinear::constant(point))
    }

    /// Builds a needle from control points and extends it to `[−1, horizon+1]`.
    pub fn from_points(
        mut times: Vec<f64>,
        mut points: Vec<Vec3>,
        horizon: f64,
        extension: Extension,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != points.len() {
            return Err(Error::Parameter("needle needs matching nonempty knot lists".into()));
        }
        if extension == Extension::Linear && times.len() >= 2 {
            let (t0, t1) = (times[0], times[1]);
            if t0 > -1.0 {
                let v = (points[1] - points[0]) / (t1 - t0);
                points.insert(0, points[0] + v * (-1.0 - t0));
                times.insert(0, -1.0);
            }
            let n = times.len();
            let (ta, tb) = (times[n - 2], times[n - 1]);
            if tb < horizon + 1.0 {
                let v = (points[n - 1] - points[n - 2]) / (tb - ta);
                points.push(points[n - 1] + v * (horizon + 1.0 - tb));
                times.push(horizon + 1.0);
            }
        }
        Ok(Self::new(PiecewiseLinear::new(times, points)?))
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.path.eval(t)
    }

    pub fn kink_times(&self) -> &[f64] {
        self.path.times()
    }

    /// Violations of the entry condition `y(t) ∉ Ω̄` for `t ≤ 0`.
    pub fn violations(&self, domain: &Domain) -> Vec<String> {
        let mut ts: Vec<f64> = (0..=200).map(|j| -1.0 + j as f64 / 200.0).collect();
        ts.extend(self.path.kinks_in(-1.0, 0.0));
        for t in ts {
            let y = self.at(t);
            if domain.distance_outside(&y) <= 0.0 {
                return vec![format!(
                    "needle is inside the closed body at t = {t} (y = {:?}); it must stay outside for t <= 0",
                    y.as_slice()
                )];
            }
        }
        Vec::new()
    }
}

/// Exact Euclidean distance from `y` to `D̄(θ)`.
pub fn dist_point_to_inclusion(scenario: &Scenario, theta: f64, y: &Vec3) -> Result<f64> {
    scenario.check_time(theta)?;
    Ok(scenario.inclusion.distance(theta, y))
}

/// Spatial clearance `d(y(t), D(t))` at a single time.
pub fn clearance(scenario: &Scenario, needle: &Needle, t: f64) -> f64 {
    scenario.inclusion.distance(t, &needle.at(t))
}

/// `inf_{θ∈[0,T′]} d(y(θ), D(θ))`: dense sampling plus golden-section refinement.
pub fn dist_needle_to_inclusion(scenario: &Scenario, needle: &Needle, t_prime: f64) -> Result<f64> {
    if !(t_prime > 0.0 && t_prime <= scenario.horizon + EDGE_TOL) {
        return Err(Error::Domain(format!(
            "T' = {t_prime} outside (0, {}]",
            scenario.horizon
        )));
    }
    let f = |t: f64| clearance(scenario, needle, t);
    let mut ts = time_samples(scenario, needle, 0.0, t_prime, 2000);
    ts.dedup();
    let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    let (imin, &vmin) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty samples");
    if vmin == 0.0 {
        return Ok(0.0);
    }
    let a = ts[imin.saturating_sub(1)];
    let b = ts[(imin + 1).min(ts.len() - 1)];
    Ok(golden_min(f, a, b).min(vmin))
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if b - a < 1e-13 {
            break;
        }
    }
    fc.min(fd).min(f(a)).min(f(b))
}

/// Sorted sample times on `[a, b]` including every knot of the needle and inclusion.
fn time_samples(scenario: &Scenario, needle: &Needle, a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..=n).map(|j| a + (b - a) * j as f64 / n as f64).collect();
    ts.extend(needle.path.kinks_in(a, b));
    ts.extend(scenario.inclusion.kink_times().into_iter().filter(|&t| t > a && t < b));
    ts.sort_by(f64::total_cmp);
    ts
}

/// First time at which the needle meets the closed inclusion, if any.
pub fn t_star_true(scenario: &Scenario, needle: &Needle) -> Option<f64> {
    let f = |t: f64| clearance(scenario, needle, t);
    let ts = time_samples(scenario, needle, 0.0, scenario.horizon, 8000);
    if f(ts[0]) <= 0.0 {
        return Some(0.0);
    }
    for w in ts.windows(2) {
        if f(w[1]) <= 0.0 {
            let (mut lo, mut hi) = (w[0], w[1]);
            while hi - lo > 1e-14 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(hi);
        }
    }
    None
}
