//! Indicator functionals: boundary form, volume form, the energy reference
//! that sandwiches them, and per-sample reporting.
//!
//! All quantities are in factored form. With `W = e^{τ²t}w` and
//! `U* = e^{−τ²t}u*`, the time factors cancel in every product that appears.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{LogSum, SignedLog};
use crate::probe::{p_yukawa, EtaMode, ProbeField, ProbeParams};
use crate::quadrature::{adaptive, adaptive_split, GaussLegendre};
use crate::scenario::{Domain, Needle, Scenario, Vec3};
use crate::solver::{bracket, interpolate_level, BoundaryTrace, Face, Grid, SpaceTimeField};

/// A time node of the trapezoidal rule, with its level bracket.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TimeNode {
    pub t: f64,
    pub weight: f64,
    pub k0: usize,
    pub k1: usize,
    pub s: f64,
}

/// Trapezoidal nodes on `[0, T′]`: every grid level below `T′`, plus `θ` and `T′`.
pub(crate) fn time_nodes(grid: &Grid, params: &ProbeParams) -> Result<Vec<TimeNode>> {
    let tp = params.t_prime;
    if tp > grid.t_end * (1.0 + 1e-12) {
        return Err(Error::Shape(format!(
            "T' = {tp} lies beyond the solved horizon {}",
            grid.t_end
        )));
    }
    let mut ts: Vec<f64> = (0..=grid.steps).map(|l| grid.time(l)).filter(|&t| t < tp).collect();
    ts.push(params.theta);
    ts.push(tp);
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * grid.t_end);
    let m = ts.len();
    Ok(ts
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let left = if i > 0 { t - ts[i - 1] } else { 0.0 };
            let right = if i + 1 < m { ts[i + 1] - t } else { 0.0 };
            let (k0, k1, s) = bracket(grid, t);
            TimeNode {
                t,
                weight: 0.5 * (left + right),
                k0,
                k1,
                s,
            }
        })
        .collect())
}

fn lerp_levels(levels: &[Vec<f64>], node: &TimeNode, idx: usize) -> f64 {
    let a = levels[node.k0][idx];
    if node.s == 0.0 {
        a
    } else {
        (1.0 - node.s) * a + node.s * levels[node.k1][idx]
    }
}

fn field_at(w: &SpaceTimeField, node: &TimeNode, x: &Vec3) -> f64 {
    let a = interpolate_level(&w.grid, &w.levels[node.k0], x);
    if node.s == 0.0 {
        a
    } else {
        (1.0 - node.s) * a + node.s * interpolate_level(&w.grid, &w.levels[node.k1], x)
    }
}

/// Reconstruction of a grid field inside `D(t)` from interior nodes only.
///
/// The reflected field has a kink across `∂D`, so trilinear interpolation in
/// cut cells mixes both sides. Here every cell gets a least-squares quadratic
/// through the nearby nodes that lie inside `D(t)`.
struct InteriorFit<'a> {
    w: &'a SpaceTimeField,
    node: TimeNode,
    center: Vec3,
    axes: Vec3,
    cache: HashMap<[usize; 3], Option<SVector<f64, 10>>>,
}

impl<'a> InteriorFit<'a> {
    fn new(w: &'a SpaceTimeField, scenario: &Scenario, node: TimeNode) -> Self {
        Self {
            w,
            node,
            center: scenario.inclusion.center(node.t),
            axes: scenario.inclusion.semi_axes(node.t),
            cache: HashMap::new(),
        }
    }

    fn nodal(&self, id: usize) -> f64 {
        let a = self.w.levels[self.node.k0][id];
        if self.node.s == 0.0 {
            a
        } else {
            (1.0 - self.node.s) * a + self.node.s * self.w.levels[self.node.k1][id]
        }
    }

    fn inside(&self, x: &Vec3) -> bool {
        (0..3).map(|i| ((x[i] - self.center[i]) / self.axes[i]).powi(2)).sum::<f64>() < 1.0
    }

    fn basis(q: &Vec3) -> SVector<f64, 10> {
        SVector::<f64, 10>::from_column_slice(&[
            1.0,
            q[0],
            q[1],
            q[2],
            q[0] * q[0],
            q[1] * q[1],
            q[2] * q[2],
            q[0] * q[1],
            q[0] * q[2],
            q[1] * q[2],
        ])
    }

    fn fit(&self, base: [usize; 3]) -> Option<SVector<f64, 10>> {
        let g = &self.w.grid;
        let origin = g.point(base[0], base[1], base[2]);
        let top = g.n + 1;
        for reach in [1usize, 2] {
            let lo = base.map(|b| b.saturating_sub(reach));
            let hi = base.map(|b| (b + reach + 1).min(top));
            let mut ata = SMatrix::<f64, 10, 10>::zeros();
            let mut atb = SVector::<f64, 10>::zeros();
            let mut count = 0;
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let x = g.point(i, j, k);
                        if !self.inside(&x) {
                            continue;
                        }
                        let q = Vec3::from_fn(|a, _| (x[a] - origin[a]) / g.h[a]);
                        let phi = Self::basis(&q);
                        ata += phi * phi.transpose();
                        atb += phi * self.nodal(g.idx(i, j, k));
                        count += 1;
                    }
                }
            }
            if count >= 16 {
                if let Some(ch) = ata.cholesky() {
                    return Some(ch.solve(&atb));
                }
            }
        }
        None
    }

    fn value(&mut self, x: &Vec3) -> f64 {
        let g = self.w.grid;
        let base: [usize; 3] =
            std::array::from_fn(|a| (((x[a] - g.domain.lo[a]) / g.h[a]).floor().max(0.0) as usize).min(g.n));
        if !self.cache.contains_key(&base) {
            let c = self.fit(base);
            self.cache.insert(base, c);
        }
        match self.cache[&base] {
            Some(c) => {
                let origin = g.point(base[0], base[1], base[2]);
                let q = Vec3::from_fn(|a, _| (x[a] - origin[a]) / g.h[a]);
                c.dot(&Self::basis(&q))
            }
            None => field_at(self.w, &self.node, x),
        }
    }
}

fn strictly_inside(domain: &Domain, x: &Vec3) -> bool {
    (0..3).all(|i| x[i] > domain.lo[i] && x[i] < domain.hi[i])
}

/// Boundary form of the indicator and its two parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryIndicator {
    pub value: SignedLog,
    /// `∫∫_Γ ∂_ν w · u* κ`.
    pub flux_term: SignedLog,
    /// `∫ κ(t) w(t, y(t)) dt` over times with the pole inside the body.
    pub pole_term: SignedLog,
}

fn adjoint_probe(params: &ProbeParams, needle: &Needle) -> Result<ProbeField> {
    ProbeField::adjoint(params.with_mode(EtaMode::MuSign), needle)
}

/// `∫₀^{T′} κ ∫_Γ ∂_ν w · u* dσ dt − ∫₀^{T′} κ w(t, y(t)) 1{y(t) ∈ Ω} dt`.
///
/// The second term removes the contribution of the adjoint field's own
/// source at the pole, which the regular approximations of the adjoint do not
/// carry. It needs the reflected field itself; pass `None` when the pole
/// never enters the body.
pub fn indicator_boundary(
    flux_w: &BoundaryTrace,
    pole_field: Option<&SpaceTimeField>,
    params: &ProbeParams,
    needle: &Needle,
    grid: &Grid,
) -> Result<BoundaryIndicator> {
    if flux_w.grid != *grid || flux_w.levels.len() != grid.steps + 1 {
        return Err(Error::Shape("flux trace does not match the grid".into()));
    }
    if let Some(w) = pole_field {
        if w.grid != *grid {
            return Err(Error::Shape("reflected field does not match the grid".into()));
        }
    }
    let probe = adjoint_probe(params, needle)?;
    let nodes = time_nodes(grid, params)?;
    let per_time: Vec<(f64, f64)> = nodes
        .iter()
        .map(|node| boundary_terms_at(flux_w, pole_field, &probe, needle, grid, node))
        .collect::<Result<_>>()?;
    let mut flux_sum = LogSum::new();
    let mut pole_sum = LogSum::new();
    for (node, (acc, pole)) in nodes.iter().zip(per_time) {
        let lk = -params.ln_kappa_neg(node.t);
        flux_sum.push_scaled(node.weight * acc, lk);
        pole_sum.push_scaled(node.weight * pole, lk);
    }
    let flux_term = flux_sum.value();
    let pole_term = pole_sum.value();
    Ok(BoundaryIndicator {
        value: flux_term.sub(pole_term),
        flux_term,
        pole_term,
    })
}

/// Flux integral over the boundary and pole trace at one time node.
fn boundary_terms_at(
    flux_w: &BoundaryTrace,
    pole_field: Option<&SpaceTimeField>,
    probe: &ProbeField,
    needle: &Needle,
    grid: &Grid,
    node: &TimeNode,
) -> Result<(f64, f64)> {
    let side = grid.side();
    let mut acc = 0.0;
    for face in Face::ALL {
        for b in 0..side {
            for a in 0..side {
                let slot = BoundaryTrace::slot(grid, face, a, b);
                let q = lerp_levels(&flux_w.levels, node, slot);
                if q == 0.0 {
                    continue;
                }
                let (i, j, k) = BoundaryTrace::node(grid, face, a, b);
                let u = probe.value(node.t, &grid.point(i, j, k))?;
                acc += BoundaryTrace::area_weight(grid, face, a, b) * q * u;
            }
        }
    }
    let y = needle.at(node.t);
    let pole = if strictly_inside(&grid.domain, &y) {
        match pole_field {
            Some(w) => field_at(w, node, &y),
            None => {
                return Err(Error::Parameter(format!(
                    "pole enters the body at t = {}; the reflected field is needed",
                    node.t
                )))
            }
        }
    } else {
        0.0
    };
    Ok((acc, pole))
}

/// Boundary-form integrand `κ(t)(∫_Γ ∂_ν w u* − w(t, y(t))1{y∈Ω})` at every
/// grid level up to `params.t_prime`. The indicator for any earlier final
/// time is a partial trapezoidal sum; `θ` should lie on a level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryProfile {
    pub params: ProbeParams,
    pub times: Vec<f64>,
    pub integrand: Vec<SignedLog>,
}

impl BoundaryProfile {
    pub fn compute(
        flux_w: &BoundaryTrace,
        pole_field: Option<&SpaceTimeField>,
        params: &ProbeParams,
        needle: &Needle,
        grid: &Grid,
    ) -> Result<Self> {
        let mut out = Self {
            params: *params,
            times: Vec::new(),
            integrand: Vec::new(),
        };
        out.extend(flux_w, pole_field, needle, grid, params.t_prime)?;
        Ok(out)
    }

    /// Adds the levels up to `t_end` that are not yet covered.
    pub fn extend(
        &mut self,
        flux_w: &BoundaryTrace,
        pole_field: Option<&SpaceTimeField>,
        needle: &Needle,
        grid: &Grid,
        t_end: f64,
    ) -> Result<()> {
        if flux_w.grid != *grid {
            return Err(Error::Shape("flux trace does not match the grid".into()));
        }
        let last = ((t_end / grid.dt) * (1.0 + 1e-12)).floor() as usize;
        if last > grid.steps {
            return Err(Error::Shape(format!(
                "T' = {t_end} lies beyond the solved horizon {}",
                grid.t_end
            )));
        }
        let probe = adjoint_probe(&self.params, needle)?;
        for l in self.times.len()..=last {
            let t = grid.time(l);
            let node = TimeNode {
                t,
                weight: 0.0,
                k0: l,
                k1: l,
                s: 0.0,
            };
            let (acc, pole) = boundary_terms_at(flux_w, pole_field, &probe, needle, grid, &node)?;
            self.times.push(t);
            self.integrand
                .push(SignedLog::from_f64(acc - pole).scale(-self.params.ln_kappa_neg(t)));
        }
        Ok(())
    }

    /// Latest final time the profile covers.
    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Trapezoidal integral over `[0, t_prime]`, linear in the last partial interval.
    pub fn integrate_to(&self, t_prime: f64) -> Result<SignedLog> {
        let end = self.horizon();
        if t_prime > end * (1.0 + 1e-12) || self.times.len() < 2 {
            return Err(Error::Shape(format!("T' = {t_prime} lies beyond the profile horizon {end}")));
        }
        let mut sum = LogSum::new();
        for (i, w) in self.times.windows(2).enumerate() {
            let (t0, t1) = (w[0], w[1]);
            if t0 >= t_prime {
                break;
            }
            let (a, b) = (self.integrand[i], self.integrand[i + 1]);
            if t1 <= t_prime * (1.0 + 1e-12) {
                let h = 0.5 * (t1 - t0);
                sum.push(a.scale(h.ln()));
                sum.push(b.scale(h.ln()));
            } else {
                let frac = (t_prime - t0) / (t1 - t0);
                let mid = a.scale((1.0 - frac).ln()).add(b.scale(frac.ln()));
                let h = 0.5 * (t_prime - t0);
                sum.push(a.scale(h.ln()));
                sum.push(mid.scale(h.ln()));
            }
        }
        Ok(sum.value())
    }
}

/// Product rule on the unit ball: radial Gauss panels clustered toward the
/// surface, Gauss-Legendre in `cos ψ`, trapezoid in azimuth.
#[derive(Debug, Clone)]
pub struct ConformingRule {
    pub radial_edges: Vec<f64>,
    pub radial: GaussLegendre,
    pub polar: GaussLegendre,
    pub azimuth: usize,
}

impl Default for ConformingRule {
    fn default() -> Self {
        Self {
            radial_edges: vec![0.0, 0.5, 0.8, 0.93, 1.0],
            radial: GaussLegendre::new(5),
            polar: GaussLegendre::new(16),
            azimuth: 24,
        }
    }
}

impl ConformingRule {
    pub fn refined(&self) -> Self {
        Self {
            radial_edges: self.radial_edges.clone(),
            radial: GaussLegendre::new(self.radial.len() * 2),
            polar: GaussLegendre::new(self.polar.len() * 2),
            azimuth: self.azimuth * 2,
        }
    }

    /// Volume points with weights, and surface points with outward vector
    /// area elements, for `D(t)` with the polar axis aimed at `pole`.
    pub fn points(&self, scenario: &Scenario, t: f64, pole: &Vec3) -> (Vec<(Vec3, f64)>, Vec<(Vec3, Vec3)>) {
        let inc = &scenario.inclusion;
        let c = inc.center(t);
        let a = inc.semi_axes(t);
        let det = a[0] * a[1] * a[2];
        let dir = Vec3::from_fn(|i, _| (pole[i] - c[i]) / a[i]);
        let e3 = if dir.norm() > 0.0 { dir.normalize() } else { Vec3::z() };
        let helper = if e3[0].abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = (helper - e3 * helper.dot(&e3)).normalize();
        let e2 = e3.cross(&e1);
        let dphi = 2.0 * PI / self.azimuth as f64;
        let mut dirs = Vec::with_capacity(self.polar.len() * self.azimuth);
        for (cpsi, wc) in self.polar.mapped(-1.0, 1.0) {
            let spsi = (1.0 - cpsi * cpsi).max(0.0).sqrt();
            for m in 0..self.azimuth {
                let ph = (m as f64 + 0.5) * dphi;
                let om = e1 * (spsi * ph.cos()) + e2 * (spsi * ph.sin()) + e3 * cpsi;
                dirs.push((om, wc * dphi));
            }
        }
        let mut vol = Vec::with_capacity(dirs.len() * self.radial.len() * (self.radial_edges.len() - 1));
        for w in self.radial_edges.windows(2) {
            for (rho, wr) in self.radial.mapped(w[0], w[1]) {
                for (om, wd) in &dirs {
                    let x = c + Vec3::from_fn(|i, _| a[i] * rho * om[i]);
                    vol.push((x, det * rho * rho * wr * wd));
                }
            }
        }
        let surf = dirs
            .iter()
            .map(|(om, wd)| {
                let x = c + Vec3::from_fn(|i, _| a[i] * om[i]);
                let n = Vec3::from_fn(|i, _| om[i] / a[i]) * (det * wd);
                (x, n)
            })
            .collect();
        (vol, surf)
    }
}

/// Volume form of the indicator, split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeIndicator {
    pub value: SignedLog,
    /// `∫∫ κ (γ−1) ∇v·∇u*` with `v = u + w`.
    pub bulk: SignedLog,
    /// `κ(T′) ∫ w u*` at the final time.
    pub endpoint_final: SignedLog,
    /// `κ(0) ∫ w u*` at the initial time (enters with a minus sign).
    pub endpoint_initial: SignedLog,
}

/// Options for the volume form.
#[derive(Debug, Clone, Default)]
pub struct VolumeOptions {
    pub rule: ConformingRule,
}

/// `∫₀^{T′}κ ∫_{D(t)}(k−1)(∇u+∇w)·∇u* dx dt + [κ ∫_Ω w u* dx]₀^{T′}`.
///
/// The `∇w` part is evaluated by Green's identity on `D(t)`,
/// `∫_D ∇w·∇u* = ∮_{∂D} w ∂_n u* − ∫_D w Δu*`, so only values of the grid
/// field are needed.
pub fn indicator_volume(
    w: &SpaceTimeField,
    scenario: &Scenario,
    params: &ProbeParams,
    needle: &Needle,
    grid: &Grid,
) -> Result<VolumeIndicator> {
    indicator_volume_with(w, scenario, params, needle, grid, &VolumeOptions::default())
}

pub fn indicator_volume_with(
    w: &SpaceTimeField,
    scenario: &Scenario,
    params: &ProbeParams,
    needle: &Needle,
    grid: &Grid,
    opts: &VolumeOptions,
) -> Result<VolumeIndicator> {
    if w.grid != *grid {
        return Err(Error::Shape("reflected field does not match the grid".into()));
    }
    if scenario.inclusion.profile.is_some() {
        return Err(Error::Parameter(
            "the volume form assumes a constant contrast inside the inclusion".into(),
        ));
    }
    crate::solver::check_clearance(scenario, &Grid { t_end: params.t_prime, ..*grid }, needle)?;
    let km1 = scenario.inclusion.k0 - 1.0;
    let fwd = ProbeField::forward(params.with_mode(EtaMode::Zero), needle)?;
    let adj = adjoint_probe(params, needle)?;
    let nodes = time_nodes(grid, params)?;
    let mut bulk = LogSum::new();
    if km1 != 0.0 {
        for node in &nodes {
            let y = needle.at(node.t);
            let (vol, surf) = opts.rule.points(scenario, node.t, &y);
            let mut fit = InteriorFit::new(w, scenario, *node);
            let mut acc = 0.0;
            for (x, wt) in &vol {
                let u = fwd.evaluate(node.t, x)?;
                let us = adj.evaluate(node.t, x)?;
                acc += wt * (u.gradient.dot(&us.gradient) - fit.value(x) * us.laplacian);
            }
            for (x, n) in &surf {
                let us = adj.evaluate(node.t, x)?;
                acc += fit.value(x) * us.gradient.dot(n);
            }
            bulk.push_scaled(km1 * node.weight * acc, -params.ln_kappa_neg(node.t));
        }
    }
    let last = nodes.last().expect("at least two time nodes");
    let first = nodes.first().expect("at least two time nodes");
    let end_final = endpoint(w, grid, &adj, needle, last)?.scale(-params.ln_kappa_neg(last.t));
    let end_init = endpoint(w, grid, &adj, needle, first)?.scale(-params.ln_kappa_neg(first.t));
    let bulk = bulk.value();
    let mut total = LogSum::new();
    total.push(bulk);
    total.push(end_final);
    total.push(end_init.neg());
    Ok(VolumeIndicator {
        value: total.value(),
        bulk,
        endpoint_final: end_final,
        endpoint_initial: end_init,
    })
}

/// `∫_Ω w(t,·) u*(t,·)` in spherical coordinates about the pole, with every
/// ray clipped to the box.
fn endpoint(w: &SpaceTimeField, grid: &Grid, adj: &ProbeField, needle: &Needle, node: &TimeNode) -> Result<SignedLog> {
    let y = needle.at(node.t);
    let tau = adj.params().tau;
    let polar = GaussLegendre::new(24);
    let radial = GaussLegendre::new(8);
    let az = 48;
    let dphi = 2.0 * PI / az as f64;
    let scales = [0.0, 0.5, 1.5, 3.5, 7.0, 14.0, 30.0, 60.0];
    let mut sum = LogSum::new();
    for (cpsi, wc) in polar.mapped(-1.0, 1.0) {
        let spsi = (1.0 - cpsi * cpsi).max(0.0).sqrt();
        for m in 0..az {
            let ph = (m as f64 + 0.5) * dphi;
            let om = Vec3::new(spsi * ph.cos(), spsi * ph.sin(), cpsi);
            let Some((r0, r1)) = ray_box(&grid.domain, &y, &om) else {
                continue;
            };
            let mut edges: Vec<f64> = scales.iter().map(|s| r0 + s / tau).filter(|&r| r < r1).collect();
            edges.push(r1);
            let mut acc = 0.0;
            for e in edges.windows(2) {
                for (r, wr) in radial.mapped(e[0], e[1]) {
                    let x = y + om * r;
                    let us = adj.value(node.t, &x)?;
                    acc += wr * r * r * us * field_at(w, node, &x);
                }
            }
            sum.push_scaled(acc * wc * dphi, 0.0);
        }
    }
    Ok(sum.value())
}

/// Parameter interval `[r0, r1]`, `r0 ≥ 0`, of the ray `y + rω` inside the box.
fn ray_box(domain: &Domain, y: &Vec3, om: &Vec3) -> Option<(f64, f64)> {
    let mut lo: f64 = 0.0;
    let mut hi = f64::INFINITY;
    for i in 0..3 {
        if om[i].abs() < 1e-300 {
            if y[i] < domain.lo[i] || y[i] > domain.hi[i] {
                return None;
            }
            continue;
        }
        let a = (domain.lo[i] - y[i]) / om[i];
        let b = (domain.hi[i] - y[i]) / om[i];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (hi > lo).then_some((lo, hi))
}

/// `|k−1| ∫_{D(t)} |∇p_{τ,y(t)}|² dx` by nested adaptive quadrature in
/// inclusion-centred spherical coordinates.
pub fn energy_density(scenario: &Scenario, tau: f64, t: f64, y: &Vec3, rel_tol: f64) -> f64 {
    let inc = &scenario.inclusion;
    let km1 = (inc.k0 - 1.0).abs();
    if km1 == 0.0 {
        return 0.0;
    }
    let c = inc.center(t);
    let a = inc.semi_axes(t);
    let det = a[0] * a[1] * a[2];
    let dir = Vec3::from_fn(|i, _| (y[i] - c[i]) / a[i]);
    let e3 = if dir.norm() > 0.0 { dir.normalize() } else { Vec3::z() };
    let helper = if e3[0].abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (helper - e3 * helper.dot(&e3)).normalize();
    let e2 = e3.cross(&e1);
    let symmetric = a[0] == a[1] && a[1] == a[2];
    let grad2 = |x: &Vec3| p_yukawa(tau, y, x).map(|(_, g)| g.norm_squared()).unwrap_or(0.0);
    let inner = |rho: f64, cpsi: f64| -> f64 {
        let spsi = (1.0 - cpsi * cpsi).max(0.0).sqrt();
        let at = |ph: f64| {
            let om = e1 * (spsi * ph.cos()) + e2 * (spsi * ph.sin()) + e3 * cpsi;
            grad2(&(c + Vec3::from_fn(|i, _| a[i] * rho * om[i])))
        };
        if symmetric {
            2.0 * PI * at(0.0)
        } else {
            2.0 * adaptive(at, 0.0, PI, 0.0, rel_tol, 200).value
        }
    };
    let shell = |rho: f64| -> f64 {
        let breaks = [-1.0, 0.0, 0.9, 0.99, 1.0];
        rho * rho * adaptive_split(|cp| inner(rho, cp), &breaks, 0.0, rel_tol, 400).value
    };
    km1 * det * adaptive_split(shell, &[0.0, 0.5, 0.9, 1.0], 0.0, rel_tol, 400).value
}

/// `∫₀^{T′} κ(t) |k−1| ∫_{D(t)} |∇p_{τ,y(t)}|² dx dt`.
pub fn energy_reference(scenario: &Scenario, params: &ProbeParams, needle: &Needle) -> Result<SignedLog> {
    energy_reference_tol(scenario, params, needle, 1e-8)
}

pub fn energy_reference_tol(scenario: &Scenario, params: &ProbeParams, needle: &Needle, rel_tol: f64) -> Result<SignedLog> {
    scenario.check_time(params.t_prime)?;
    if (scenario.inclusion.k0 - 1.0).abs() == 0.0 {
        return Ok(SignedLog::ZERO);
    }
    let tp = params.t_prime;
    let d = crate::scenario::dist_needle_to_inclusion(scenario, needle, tp)?;
    if d <= 0.0 {
        return Err(Error::Clearance {
            t: tp,
            clearance: d,
            required: f64::MIN_POSITIVE,
        });
    }
    let mut breaks = vec![0.0, params.theta, tp];
    breaks.extend(needle.path.kinks_in(0.0, tp));
    breaks.extend(scenario.inclusion.kink_times().into_iter().filter(|&t| t > 0.0 && t < tp));
    // resolve the κ peak on the scale 1/(τμ)
    let width = 1.0 / (params.tau * params.mu).max(1.0);
    for m in [1.0, 3.0, 10.0] {
        breaks.push(params.theta - m * width);
        breaks.push(params.theta + m * width);
    }
    breaks.retain(|&t| (0.0..=tp).contains(&t));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    // factor the peak value out so the integrand is O(1)
    let e_theta = energy_density(scenario, params.tau, params.theta, &needle.at(params.theta), rel_tol * 0.1);
    let scale = if e_theta > 0.0 { e_theta } else { 1.0 };
    let f = |t: f64| params.kappa(t) * energy_density(scenario, params.tau, t, &needle.at(t), rel_tol * 0.1) / scale;
    let r = adaptive_split(f, &breaks, 0.0, rel_tol, 400);
    Ok(SignedLog::from_f64(r.value).scale(scale.ln()))
}

/// One evaluated ladder point. The volume form is optional since it is far
/// more expensive than the boundary form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSample {
    pub params: ProbeParams,
    pub i_boundary: SignedLog,
    pub i_volume: Option<SignedLog>,
    pub energy_ref: SignedLog,
    pub endpoint_final: Option<SignedLog>,
    pub endpoint_initial: Option<SignedLog>,
    #[serde(with = "crate::logspace::extended_f64")]
    pub sandwich_ratio: f64,
}

impl IndicatorSample {
    pub fn new(params: ProbeParams, boundary: SignedLog, volume: Option<&VolumeIndicator>, energy_ref: SignedLog) -> Self {
        let ratio = if energy_ref.is_zero() {
            f64::NAN
        } else {
            (boundary.ln_abs - energy_ref.ln_abs).exp()
        };
        Self {
            params,
            i_boundary: boundary,
            i_volume: volume.map(|v| v.value),
            energy_ref,
            endpoint_final: volume.map(|v| v.endpoint_final),
            endpoint_initial: volume.map(|v| v.endpoint_initial),
            sandwich_ratio: ratio,
        }
    }

    /// Relative disagreement of the two forms, when both are present.
    pub fn identity_gap(&self) -> Option<f64> {
        self.i_volume.map(|v| self.i_boundary.relative_difference(v))
    }

    /// One CSV row matching [`CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<SignedLog>, f: fn(SignedLog) -> String| v.map(f).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.params.tau,
            self.params.mu,
            self.params.theta,
            self.params.t_prime,
            self.i_boundary.sign,
            self.i_boundary.ln_abs,
            opt(self.i_volume, |v| v.sign.to_string()),
            opt(self.i_volume, |v| v.ln_abs.to_string()),
            self.energy_ref.ln_abs,
            self.sandwich_ratio,
            opt(self.endpoint_final, |v| v.ln_abs.to_string()),
            opt(self.endpoint_initial, |v| v.ln_abs.to_string()),
        )
    }
}

/// Result of comparing `|I|` with the energy reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub ratio: f64,
    pub degenerate: bool,
    pub within_band: bool,
}

/// Checks `1/C* ≤ |I|/E ≤ C*` for one sample.
pub fn sandwich_check(sample: &IndicatorSample, band: f64) -> SandwichReport {
    if sample.energy_ref.is_zero() || sample.i_boundary.is_zero() {
        return SandwichReport {
            ratio: f64::NAN,
            degenerate: true,
            within_band: false,
        };
    }
    let r = sample.sandwich_ratio;
    SandwichReport {
        ratio: r,
        degenerate: false,
        within_band: r >= 1.0 / band && r <= band,
    }
}

/// `max/min` of the sandwich ratio over a ladder; `None` if any sample is degenerate.
pub fn sandwich_spread(samples: &[IndicatorSample]) -> Option<f64> {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for s in samples {
        let r = s.sandwich_ratio;
        if !(r.is_finite() && r > 0.0) {
            return None;
        }
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (!samples.is_empty()).then(|| hi / lo)
}

pub const CSV_HEADER: &str = "tau,mu,theta,t_prime,sign_i_boundary,ln_abs_i_boundary,sign_i_volume,ln_abs_i_volume,ln_energy_ref,sandwich_ratio,ln_abs_endpoint_final,ln_abs_endpoint_initial";

/// Writes samples as CSV with round-trip float formatting; columns of the
/// volume form are empty when it was not computed.
pub fn write_csv(out: &mut impl Write, samples: &[IndicatorSample]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for s in samples {
        writeln!(out, "{}", s.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::InclusionTrajectory;

    fn ball(k0: f64) -> Scenario {
        Scenario::new(
            Domain::unit_cube(),
            1.0,
            InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.15, k0),
        )
    }

    /// Radial-shell integration about the pole: the area of the sphere of
    /// radius `r` around `y` inside a ball at distance `L` with radius `R`
    /// is `πr(R² − (L−r)²)/L`.
    fn shell_oracle(tau: f64, l: f64, radius: f64) -> f64 {
        let g2 = |r: f64| ((tau * r + 1.0) * (-tau * r).exp() / (4.0 * PI * r * r)).powi(2);
        adaptive(
            |r| g2(r) * PI * r * (radius * radius - (l - r).powi(2)) / l,
            l - radius,
            l + radius,
            0.0,
            1e-13,
            500,
        )
        .value
    }

    #[test]
    fn energy_matches_shell_integration() {
        let s = ball(2.0);
        let y = Vec3::new(0.1, 0.5, 0.5);
        let tau = 12.0;
        let params = ProbeParams::new(tau, 3.0, 0.5, 1.0, EtaMode::MuSign).unwrap();
        let e = energy_reference(&s, &params, &Needle::fixed(y)).unwrap().to_f64();
        let tm = tau * 3.0;
        let kint = (1.0 - (-tm * 0.5f64).exp()) / tm * 2.0;
        let oracle = shell_oracle(tau, 0.4, 0.15) * kint;
        assert!((e - oracle).abs() < 1e-6 * oracle, "{e} vs {oracle}");
    }

    #[test]
    fn energy_vanishes_without_contrast() {
        let params = ProbeParams::new(8.0, 2.0, 0.5, 1.0, EtaMode::MuSign).unwrap();
        let e = energy_reference(&ball(1.0), &params, &Needle::fixed(Vec3::new(-0.1, 0.5, 0.5))).unwrap();
        assert!(e.is_zero());
    }

    #[test]
    fn conforming_rule_integrates_volume_and_flux() {
        let s = Scenario::new(
            Domain::unit_cube(),
            1.0,
            InclusionTrajectory {
                shape: crate::scenario::Shape::Ellipsoid {
                    axes: Vec3::new(1.0, 0.7, 0.5),
                },
                ..InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.2, 2.0)
            },
        );
        let rule = ConformingRule::default();
        let (vol, surf) = rule.points(&s, 0.0, &Vec3::new(0.1, 0.2, 0.3));
        let v: f64 = vol.iter().map(|p| p.1).sum();
        let exact = 4.0 / 3.0 * PI * 0.2 * 0.14 * 0.1;
        assert!((v - exact).abs() < 1e-12 * exact);
        // divergence theorem for F(x) = x: ∮ x·n = 3|D|
        let flux: f64 = surf.iter().map(|(x, n)| (x - Vec3::repeat(0.5)).dot(n)).sum();
        assert!((flux - 3.0 * exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn ray_clipping() {
        let d = Domain::unit_cube();
        let (a, b) = ray_box(&d, &Vec3::new(-0.5, 0.5, 0.5), &Vec3::x()).unwrap();
        assert!((a - 0.5).abs() < 1e-15 && (b - 1.5).abs() < 1e-15);
        assert!(ray_box(&d, &Vec3::new(-0.5, 0.5, 0.5), &(-Vec3::x())).is_none());
        let (a, b) = ray_box(&d, &Vec3::repeat(0.5), &Vec3::y()).unwrap();
        assert!(a == 0.0 && (b - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sandwich_degenerate_without_energy() {
        let params = ProbeParams::new(8.0, 2.0, 0.5, 1.0, EtaMode::MuSign).unwrap();
        let s = IndicatorSample::new(params, SignedLog::ZERO, None, SignedLog::ZERO);
        assert!(sandwich_check(&s, 10.0).degenerate);
        assert!(s.identity_gap().is_none());
        let mut out = Vec::new();
        write_csv(&mut out, &[s]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
    }

    #[test]
    fn profile_partial_sums_match_direct_form() {
        let s = Scenario::new(
            Domain::unit_cube(),
            0.5,
            InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.2, 2.0),
        );
        let g = Grid::new(Domain::unit_cube(), 8, 16, 0.5).unwrap();
        let needle = Needle::fixed(Vec3::new(-0.1, 0.5, 0.5));
        let p = ProbeParams::new(6.0, 1.0, 0.25, 0.5, EtaMode::Zero).unwrap();
        let w = crate::solver::solve_reflected(&s, &g, &p, &needle).unwrap();
        let flux = crate::solver::dtn_flux(&w, &g).unwrap();
        let profile = BoundaryProfile::compute(&flux, None, &p, &needle, &g).unwrap();
        for (tp, tol) in [(0.5, 1e-12), (13.0 / 32.0, 1e-12), (0.41, 2e-2)] {
            let q = ProbeParams { t_prime: tp, ..p };
            let direct = indicator_boundary(&flux, None, &q, &needle, &g).unwrap().value;
            let partial = profile.integrate_to(tp).unwrap();
            assert!(partial.relative_difference(direct) < tol, "T' = {tp}");
        }
        assert!(profile.integrate_to(0.6).is_err());
    }
}
