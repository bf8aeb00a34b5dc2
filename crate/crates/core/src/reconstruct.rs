//! Distance estimates, the function `F(T′)`, the search for the first contact
//! time, and needle scans, all driven by an indicator evaluator.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::indicator::{energy_reference, indicator_boundary, indicator_volume, BoundaryProfile, IndicatorSample};
use crate::logspace::SignedLog;
use crate::probe::{EtaMode, ProbeParams};
use crate::regression::fit_line;
use crate::scenario::{dist_needle_to_inclusion, t_star_true, Needle, Scenario, Vec3};
use crate::solver::{dtn_flux, solve_reflected, BoundaryTrace, Grid, SpaceTimeField};

/// Slope fit of `ln|I|` against `τ` at fixed `(μ, θ, T′)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub theta: f64,
    pub d_hat: f64,
    pub slope: f64,
    pub fit_residual: f64,
    pub tau_ladder: Vec<f64>,
    /// Set when the fitted slope was positive and `d_hat` was clamped to 0.
    pub clamped: bool,
    /// Ladder values dropped because the indicator vanished.
    pub excluded: Vec<f64>,
}

/// Distance estimate from indicator samples that share `(μ, θ, T′)`.
pub fn estimate_distance(samples: &[IndicatorSample]) -> Result<DistanceEstimate> {
    let theta = samples.first().map(|s| s.params.theta).unwrap_or(f64::NAN);
    if samples.iter().any(|s| {
        s.params.theta != theta || s.params.mu != samples[0].params.mu || s.params.t_prime != samples[0].params.t_prime
    }) {
        return Err(Error::Parameter("samples must share mu, theta and T'".into()));
    }
    let points: Vec<(f64, SignedLog)> = samples.iter().map(|s| (s.params.tau, s.i_boundary)).collect();
    estimate_distance_from(theta, &points)
}

/// Distance estimate from `(τ, I)` pairs.
pub fn estimate_distance_from(theta: f64, points: &[(f64, SignedLog)]) -> Result<DistanceEstimate> {
    let mut taus = Vec::new();
    let mut logs = Vec::new();
    let mut excluded = Vec::new();
    for &(tau, v) in points {
        if v.is_zero() || !v.ln_abs.is_finite() {
            excluded.push(tau);
        } else {
            taus.push(tau);
            logs.push(v.ln_abs);
        }
    }
    if taus.len() < 3 {
        return Err(Error::Arity {
            needed: 3,
            got: taus.len(),
        });
    }
    let fit = fit_line(&taus, &logs)?;
    let clamped = fit.slope > 0.0;
    Ok(DistanceEstimate {
        theta,
        d_hat: if clamped { 0.0 } else { -fit.slope / 2.0 },
        slope: fit.slope,
        fit_residual: fit.rms_residual,
        tau_ladder: taus,
        clamped,
        excluded,
    })
}

/// Source of indicator values for the reconstruction.
pub trait Evaluator: Sync {
    /// `I(τ, μ, θ, T′)` with its sign.
    fn indicator(&self, params: &ProbeParams) -> Result<SignedLog>;
    /// Latest `T′` the evaluator accepts.
    fn horizon(&self) -> f64;
}

/// Grid resolution used by [`Pipeline`]: `n` interior nodes per axis and
/// time step `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub dt: f64,
}

struct Solved {
    grid: Grid,
    w: SpaceTimeField,
    flux: BoundaryTrace,
}

type ProfileKey = (u64, u64, u64);

/// Full pipeline for one scenario and needle: reflected solve per `τ` up to
/// the clearance horizon, boundary form of the indicator, cached profiles.
pub struct Pipeline {
    scenario: Scenario,
    needle: Needle,
    spec: GridSpec,
    steps: usize,
    noise: Option<(f64, u64)>,
    solved: Mutex<BTreeMap<u64, Arc<Mutex<Option<Arc<Solved>>>>>>,
    profiles: Mutex<BTreeMap<ProfileKey, Arc<Mutex<BoundaryProfile>>>>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("spec", &self.spec)
            .field("steps", &self.steps)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    /// Sets up the pipeline; the solved horizon is the last time level up to
    /// which the needle keeps a clearance of two cells from the inclusion.
    pub fn new(scenario: Scenario, needle: Needle, spec: GridSpec) -> Result<Self> {
        scenario.validate()?;
        if spec.dt <= 0.0 || spec.n < 2 {
            return Err(Error::Parameter(format!("invalid grid spec {spec:?}")));
        }
        let total = (scenario.horizon / spec.dt).round() as usize;
        let probe = Grid::new(scenario.domain, spec.n, total.max(1), scenario.horizon)?;
        let required = 2.0 * probe.h_max();
        let ok = |l: usize| -> Result<bool> {
            Ok(l == 0 || dist_needle_to_inclusion(&scenario, &needle, probe.time(l))? >= required)
        };
        let steps = if ok(total)? {
            total
        } else {
            let (mut lo, mut hi) = (0usize, total);
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if ok(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        if steps < 2 {
            return Err(Error::Clearance {
                t: probe.time(1),
                clearance: dist_needle_to_inclusion(&scenario, &needle, probe.time(1))?,
                required,
            });
        }
        Ok(Self {
            scenario,
            needle,
            spec,
            steps,
            noise: None,
            solved: Mutex::new(BTreeMap::new()),
            profiles: Mutex::new(BTreeMap::new()),
        })
    }

    /// Multiplies the measured flux by `1 + level·ξ`, `ξ` uniform on
    /// `[−1, 1]`, seeded per `τ` from `seed`.
    pub fn with_noise(mut self, level: f64, seed: u64) -> Self {
        self.noise = (level > 0.0).then_some((level, seed));
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn needle(&self) -> &Needle {
        &self.needle
    }

    /// Grid covering the solved horizon.
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.scenario.domain, self.spec.n, self.steps, self.steps as f64 * self.spec.dt)
    }

    /// Nearest time level to `t`.
    pub fn snap(&self, t: f64) -> f64 {
        (t / self.spec.dt).round() * self.spec.dt
    }

    fn solve(&self, tau: f64) -> Result<Arc<Solved>> {
        let slot = self
            .solved
            .lock()
            .expect("solve cache")
            .entry(tau.to_bits())
            .or_default()
            .clone();
        let mut slot = slot.lock().expect("solve slot");
        if let Some(s) = slot.as_ref() {
            return Ok(s.clone());
        }
        let grid = self.grid()?;
        let params = ProbeParams::new(tau, 0.0, 0.5 * grid.t_end, grid.t_end, EtaMode::Zero)?;
        let w = solve_reflected(&self.scenario, &grid, &params, &self.needle)?;
        let mut flux = dtn_flux(&w, &grid)?;
        if let Some((level, seed)) = self.noise {
            flux = flux.with_multiplicative_noise(level, seed ^ tau.to_bits());
        }
        let solved = Arc::new(Solved { grid, w, flux });
        *slot = Some(solved.clone());
        Ok(solved)
    }

    fn refuse(&self, t_prime: f64) -> Result<()> {
        if t_prime > self.horizon() * (1.0 + 1e-12) {
            let required = 2.0 * self.grid()?.h_max();
            return Err(Error::Clearance {
                t: t_prime,
                clearance: dist_needle_to_inclusion(&self.scenario, &self.needle, t_prime.min(self.scenario.horizon))?,
                required,
            });
        }
        Ok(())
    }

    /// Boundary-form integrand for `(τ, μ, θ)` covering at least `[0, t_end]`.
    /// `θ` is snapped to the nearest level.
    pub fn profile(&self, tau: f64, mu: f64, theta: f64, t_end: f64) -> Result<BoundaryProfile> {
        self.refuse(t_end)?;
        let theta = self.snap(theta);
        let solved = self.solve(tau)?;
        let key = (tau.to_bits(), mu.to_bits(), theta.to_bits());
        let cell = {
            let mut map = self.profiles.lock().expect("profile cache");
            match map.get(&key) {
                Some(c) => c.clone(),
                None => {
                    let params = ProbeParams::new(tau, mu, theta, solved.grid.t_end, EtaMode::MuSign)?;
                    let c = Arc::new(Mutex::new(BoundaryProfile {
                        params,
                        times: Vec::new(),
                        integrand: Vec::new(),
                    }));
                    map.insert(key, c.clone());
                    c
                }
            }
        };
        let mut profile = cell.lock().expect("profile");
        let upto = (t_end + self.spec.dt).min(solved.grid.t_end);
        if profile.horizon() < upto - 1e-12 || profile.times.len() < 2 {
            profile.extend(&solved.flux, Some(&solved.w), &self.needle, &solved.grid, upto)?;
        }
        Ok(profile.clone())
    }

    /// Sample at the exact `θ` and `T′`: boundary form, energy reference and,
    /// if asked, the volume form.
    pub fn sample(&self, params: &ProbeParams, with_volume: bool) -> Result<IndicatorSample> {
        self.refuse(params.t_prime)?;
        let solved = self.solve(params.tau)?;
        let params = params.with_mode(EtaMode::MuSign);
        let b = indicator_boundary(&solved.flux, Some(&solved.w), &params, &self.needle, &solved.grid)?;
        let v = if with_volume {
            Some(indicator_volume(&solved.w, &self.scenario, &params, &self.needle, &solved.grid)?)
        } else {
            None
        };
        let e = energy_reference(&self.scenario, &params, &self.needle)?;
        Ok(IndicatorSample::new(params, b.value, v.as_ref(), e))
    }

    /// Reflected field of the solve for `τ`.
    pub fn reflected_field(&self, tau: f64) -> Result<SpaceTimeField> {
        Ok(self.solve(tau)?.w.clone())
    }

    /// Boundary form only, at the exact `θ` and `T′`.
    pub fn boundary(&self, params: &ProbeParams) -> Result<SignedLog> {
        self.refuse(params.t_prime)?;
        let solved = self.solve(params.tau)?;
        let params = params.with_mode(EtaMode::MuSign);
        Ok(indicator_boundary(&solved.flux, Some(&solved.w), &params, &self.needle, &solved.grid)?.value)
    }
}

impl Evaluator for Pipeline {
    /// Profile-based value: `θ` is snapped to the nearest level.
    fn indicator(&self, params: &ProbeParams) -> Result<SignedLog> {
        self.profile(params.tau, params.mu, params.theta, params.t_prime)?
            .integrate_to(params.t_prime)
    }

    fn horizon(&self) -> f64 {
        self.steps as f64 * self.spec.dt
    }
}

/// Evaluator returning the energy reference with the contrast sign: the
/// analytic quantity that sandwiches the indicator.
#[derive(Debug, Clone)]
pub struct EnergyEvaluator {
    pub scenario: Scenario,
    pub needle: Needle,
    /// Final times with a smaller needle-inclusion distance are refused.
    pub min_clearance: f64,
    horizon: f64,
}

impl EnergyEvaluator {
    pub fn new(scenario: Scenario, needle: Needle, min_clearance: f64) -> Result<Self> {
        let horizon = clearance_horizon(&scenario, &needle, min_clearance)?;
        Ok(Self {
            scenario,
            needle,
            min_clearance,
            horizon,
        })
    }
}

impl Evaluator for EnergyEvaluator {
    fn indicator(&self, params: &ProbeParams) -> Result<SignedLog> {
        if params.t_prime > self.horizon * (1.0 + 1e-12) {
            return Err(Error::Clearance {
                t: params.t_prime,
                clearance: dist_needle_to_inclusion(&self.scenario, &self.needle, params.t_prime)?,
                required: self.min_clearance,
            });
        }
        let e = energy_reference(&self.scenario, params, &self.needle)?;
        Ok(if self.scenario.contrast_sign() < 0 { e.neg() } else { e })
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Latest time up to which the needle keeps at least `required` distance
/// from the inclusion; the scenario horizon when it always does.
pub fn clearance_horizon(scenario: &Scenario, needle: &Needle, required: f64) -> Result<f64> {
    let end = scenario.horizon;
    let m = 1000;
    let ok = |t: f64| -> Result<bool> { Ok(dist_needle_to_inclusion(scenario, needle, t)? >= required) };
    let start = 1e-9 * end;
    if !ok(start)? {
        return Ok(0.0);
    }
    for k in 1..=m {
        let t = end * k as f64 / m as f64;
        if !ok(t)? {
            let (mut lo, mut hi) = ((end * (k - 1) as f64 / m as f64).max(start), t);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if ok(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(lo);
        }
    }
    Ok(end)
}

/// Ladders and `θ` grid for `F̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FConfig {
    pub tau_ladder: Vec<f64>,
    pub mu_ladder: Vec<f64>,
    /// Spacing of the `θ` grid, counted back from `T′`.
    pub theta_step: f64,
    /// Only `θ ∈ [T′ − window, T′)` is used when set.
    pub theta_window: Option<f64>,
}

impl FConfig {
    /// `θ` grid below `t_prime`; falls back to `T′/2` when the grid has no
    /// point there.
    pub fn thetas(&self, t_prime: f64) -> Vec<f64> {
        let lo = self.theta_window.map(|w| t_prime - w).unwrap_or(0.0).max(0.0);
        let mut out: Vec<f64> = (1..)
            .map(|k| t_prime - k as f64 * self.theta_step)
            .take_while(|&th| th > 0.0 && th >= lo - 1e-12)
            .collect();
        out.reverse();
        if out.is_empty() {
            out.push(0.5 * t_prime);
        }
        out
    }
}

/// `F̂(T′)` with the per-`θ` slopes behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FEstimate {
    pub t_prime: f64,
    pub value: f64,
    pub mu: f64,
    /// `(θ, slope)` for every `θ` with a usable fit.
    pub per_theta: Vec<(f64, f64)>,
}

/// `F̂(T′) = max_θ slope_τ ln|I(τ, μ_max, θ, T′)|`, clamped to be `≤ 0`.
pub fn estimate_f(
    t_prime: f64,
    theta_grid: &[f64],
    mu_ladder: &[f64],
    tau_ladder: &[f64],
    evaluator: &dyn Evaluator,
) -> Result<FEstimate> {
    if theta_grid.is_empty() || mu_ladder.is_empty() || tau_ladder.is_empty() {
        return Err(Error::Arity {
            needed: 1,
            got: 0,
        });
    }
    let mu = mu_ladder.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut per_theta = Vec::new();
    for &theta in theta_grid.iter().filter(|&&th| th > 0.0 && th < t_prime) {
        let mut points = Vec::with_capacity(tau_ladder.len());
        for &tau in tau_ladder {
            let params = ProbeParams::new(tau, mu, theta, t_prime, EtaMode::MuSign)?;
            points.push((tau, evaluator.indicator(&params)?));
        }
        if let Ok(d) = estimate_distance_from(theta, &points) {
            per_theta.push((theta, d.slope));
        }
    }
    if per_theta.is_empty() {
        return Err(Error::Arity {
            needed: 1,
            got: 0,
        });
    }
    let best = per_theta.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(FEstimate {
        t_prime,
        value: best.min(0.0),
        mu,
        per_theta,
    })
}

/// Estimated first contact time, or `T+0` when none occurs in `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TStar {
    At(f64),
    BeyondHorizon,
}

impl Serialize for TStar {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TStar::At(t) => s.serialize_f64(*t),
            TStar::BeyondHorizon => s.serialize_str("T+0"),
        }
    }
}

impl<'de> Deserialize<'de> for TStar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) => Ok(TStar::At(t)),
            Raw::Text(s) if s == "T+0" => Ok(TStar::BeyondHorizon),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("unknown contact time {s:?}"))),
        }
    }
}

impl fmt::Display for TStar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TStar::At(t) => write!(f, "{t}"),
            TStar::BeyondHorizon => f.write_str("T+0"),
        }
    }
}

/// Why the search stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The next iterate left `[0, T]`.
    Horizon,
    /// The step fell below the floor.
    StepFloor,
    /// The evaluator refused the next final time (clearance lost).
    Clearance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TStarResult {
    pub t_sequence: Vec<f64>,
    pub f_values: Vec<f64>,
    pub delta: f64,
    pub t_star_hat: TStar,
    pub termination: Termination,
}

/// Knobs of [`search_t_star`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// `F̂` is evaluated at `max(t_n, min_horizon)`.
    pub min_horizon: f64,
    /// Stopping floor on the step, as a fraction of the horizon.
    pub step_floor: f64,
    pub max_iter: usize,
    /// Latest final time the indicator can be evaluated at.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admissible: Option<f64>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            min_horizon: 0.0,
            step_floor: 1e-3,
            max_iter: 1000,
            admissible: None,
        }
    }
}

/// Iterates `t_{n+1} = t_n + |F̂(t_n)|/δ` from `t₀ = 0`.
///
/// `f` returns `F̂` at a final time. Iterates past `opts.admissible` are
/// pulled back to it; the search ends there once no admissible step is left,
/// or at the last iterate when `f` refuses with a clearance error.
pub fn search_t_star(
    delta: f64,
    horizon: f64,
    opts: &SearchOptions,
    mut f: impl FnMut(f64) -> Result<f64>,
) -> Result<TStarResult> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
    }
    let floor = opts.step_floor * horizon;
    let mut t: f64 = 0.0;
    let mut ts = Vec::new();
    let mut fs = Vec::new();
    let finish = |ts: Vec<f64>, fs: Vec<f64>, hat: TStar, why: Termination| TStarResult {
        t_sequence: ts,
        f_values: fs,
        delta,
        t_star_hat: hat,
        termination: why,
    };
    for _ in 0..opts.max_iter {
        let value = match f(t.max(opts.min_horizon)) {
            Ok(v) => v,
            Err(Error::Clearance { .. }) => {
                ts.push(t);
                return Ok(finish(ts, fs, TStar::At(t), Termination::Clearance));
            }
            Err(e) => return Err(e),
        };
        ts.push(t);
        fs.push(value);
        let step = value.abs() / delta;
        let mut next = t + step;
        if let Some(limit) = opts.admissible.filter(|&l| l < horizon && next > l) {
            if t >= limit * (1.0 - 1e-12) {
                return Ok(finish(ts, fs, TStar::At(t), Termination::Clearance));
            }
            next = limit;
        } else if next > horizon {
            return Ok(finish(ts, fs, TStar::BeyondHorizon, Termination::Horizon));
        }
        if next - t < floor {
            return Ok(finish(ts, fs, TStar::At(next), Termination::StepFloor));
        }
        t = next;
    }
    Ok(finish(ts, fs, TStar::At(t), Termination::MaxIterations))
}

/// `F̂`-driven search on one evaluator.
pub fn search_with(
    evaluator: &dyn Evaluator,
    config: &FConfig,
    delta: f64,
    horizon: f64,
    opts: &SearchOptions,
) -> Result<(TStarResult, Vec<FEstimate>)> {
    let mut trace = Vec::new();
    let opts = SearchOptions {
        admissible: Some(evaluator.horizon()),
        ..*opts
    };
    let result = search_t_star(delta, horizon, &opts, |tp| {
        let est = estimate_f(tp, &config.thetas(tp), &config.mu_ladder, &config.tau_ladder, evaluator)?;
        let v = est.value;
        trace.push(est);
        Ok(v)
    })?;
    Ok((result, trace))
}

/// A priori rate for the search: `safety ×` the largest slope of
/// `T′ ↦ 2 d(Σ_{T′}, D_{T′})` over `(0, horizon)`, read from the ground truth.
/// Falls back to `2(|ẏ| + surface speed)` when the distance never changes.
pub fn delta_from_ground_truth(scenario: &Scenario, needle: &Needle, horizon: f64, safety: f64) -> Result<f64> {
    let end = t_star_true(scenario, needle).unwrap_or(horizon).min(horizon);
    let m = 400;
    let mut prev = 2.0 * dist_needle_to_inclusion(scenario, needle, 1e-9 * end)?;
    let mut rate: f64 = 0.0;
    for k in 1..=m {
        let t = end * k as f64 / m as f64;
        let cur = 2.0 * dist_needle_to_inclusion(scenario, needle, t)?.max(0.0);
        rate = rate.max((prev - cur) / (end / m as f64));
        prev = cur;
    }
    if rate <= 0.0 {
        rate = 2.0 * (needle.lipschitz_bound + scenario.inclusion.surface_speed_bound());
    }
    if rate <= 0.0 {
        rate = 1.0 / horizon;
    }
    Ok(safety * rate)
}

/// One needle of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleScan {
    pub index: usize,
    pub search: TStarResult,
    pub f_profile: Vec<FEstimate>,
    /// Needle points before the estimated contact time: reachable complement.
    pub cleared: Vec<(f64, Vec3)>,
}

/// Search for one needle and the cleared needle points before `T̂*`.
pub fn scan_one(
    index: usize,
    needle: &Needle,
    evaluator: &dyn Evaluator,
    config: &FConfig,
    delta: f64,
    horizon: f64,
    opts: &SearchOptions,
) -> Result<NeedleScan> {
    let (search, f_profile) = search_with(evaluator, config, delta, horizon, opts)?;
    let end = match search.t_star_hat {
        TStar::At(t) => t,
        TStar::BeyondHorizon => horizon,
    };
    let cleared = (0..=32)
        .map(|k| {
            let t = end * k as f64 / 32.0;
            (t, needle.at(t))
        })
        .collect();
    Ok(NeedleScan {
        index,
        search,
        f_profile,
        cleared,
    })
}

/// Runs the search for every needle with the evaluator built by `make`.
pub fn needle_scan<E: Evaluator>(
    needles: &[Needle],
    make: impl Fn(&Needle) -> Result<E>,
    config: &FConfig,
    delta: f64,
    horizon: f64,
    opts: &SearchOptions,
) -> Result<Vec<NeedleScan>> {
    needles
        .iter()
        .enumerate()
        .map(|(i, needle)| scan_one(i, needle, &make(needle)?, config, delta, horizon, opts))
        .collect()
}

/// Reconstruction report written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub distances: Vec<DistanceEstimate>,
    pub f_profile: Vec<FEstimate>,
    pub searches: Vec<NeedleScan>,
}
