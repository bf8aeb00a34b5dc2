//! Implicit finite-difference heat solver on a box with a discontinuous,
//! moving conductivity, and boundary flux extraction.
//!
//! Grid nodes are indexed `(i, j, k)` in `0..=n+1` along x, y, z; the outer
//! layer holds Dirichlet values. Each level is stored z-y-x (x fastest).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::{EtaMode, ProbeField, ProbeParams};
use crate::scenario::{clearance, dist_needle_to_inclusion, Domain, InitialData, Needle, Scenario, Vec3};

/// Sub-samples per grid link for the harmonic average of `γ`.
const LINK_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub domain: Domain,
    /// Interior nodes per axis.
    pub n: usize,
    /// Spacing per axis, `extent / (n + 1)`.
    pub h: Vec3,
    pub dt: f64,
    pub steps: usize,
    pub t_end: f64,
}

impl Grid {
    pub fn new(domain: Domain, n: usize, steps: usize, t_end: f64) -> Result<Self> {
        if n < 8 {
            return Err(Error::Parameter(format!("grid needs n >= 8, got {n}")));
        }
        if steps == 0 || !(t_end > 0.0) {
            return Err(Error::Parameter(format!(
                "grid needs steps >= 1 and a positive end time, got {steps} and {t_end}"
            )));
        }
        Ok(Self {
            domain,
            n,
            h: domain.extent() / (n + 1) as f64,
            dt: t_end / steps as f64,
            steps,
            t_end,
        })
    }

    /// Nodes per axis including the boundary layer.
    pub fn side(&self) -> usize {
        self.n + 2
    }

    pub fn node_count(&self) -> usize {
        self.side().pow(3)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        let s = self.side();
        (k * s + j) * s + i
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.domain.lo + Vec3::new(i as f64 * self.h[0], j as f64 * self.h[1], k as f64 * self.h[2])
    }

    pub fn time(&self, level: usize) -> f64 {
        if level == self.steps {
            self.t_end
        } else {
            level as f64 * self.dt
        }
    }

    pub fn h_max(&self) -> f64 {
        self.h.max()
    }

    pub fn is_boundary(&self, i: usize, j: usize, k: usize) -> bool {
        let m = self.n + 1;
        i == 0 || j == 0 || k == 0 || i == m || j == m || k == m
    }

    /// Trapezoidal volume weight of a node.
    pub fn volume_weight(&self, i: usize, j: usize, k: usize) -> f64 {
        let m = self.n + 1;
        let f = |a: usize| if a == 0 || a == m { 0.5 } else { 1.0 };
        f(i) * f(j) * f(k) * self.h[0] * self.h[1] * self.h[2]
    }
}

/// Per-level scalar arrays on all grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: Grid,
    pub levels: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            levels: vec![vec![0.0; grid.node_count()]; grid.steps + 1],
            grid,
        }
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }

    /// Trilinear interpolation of level `k` at `x` (clamped to the box).
    pub fn interpolate(&self, k: usize, x: &Vec3) -> f64 {
        interpolate_level(&self.grid, &self.levels[k], x)
    }

    /// Trilinear in space and linear in time.
    pub fn interpolate_at(&self, t: f64, x: &Vec3) -> f64 {
        let (k0, k1, s) = bracket(&self.grid, t);
        let a = self.interpolate(k0, x);
        if s == 0.0 {
            return a;
        }
        (1.0 - s) * a + s * self.interpolate(k1, x)
    }

    /// Discrete L² norm of level `k` with trapezoidal weights.
    pub fn l2_norm(&self, k: usize) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        let side = g.side();
        for kk in 0..side {
            for j in 0..side {
                for i in 0..side {
                    let v = self.levels[k][g.idx(i, j, kk)];
                    s += g.volume_weight(i, j, kk) * v * v;
                }
            }
        }
        s.sqrt()
    }

    pub fn max_abs(&self, k: usize) -> f64 {
        self.levels[k].iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Level indices bracketing `t` and the linear weight of the upper one.
pub fn bracket(grid: &Grid, t: f64) -> (usize, usize, f64) {
    let t = t.clamp(0.0, grid.t_end);
    let pos = t / grid.dt;
    let k0 = (pos.floor() as usize).min(grid.steps);
    if k0 == grid.steps {
        return (k0, k0, 0.0);
    }
    let s = pos - k0 as f64;
    if s < 1e-12 {
        (k0, k0, 0.0)
    } else if s > 1.0 - 1e-12 {
        (k0 + 1, k0 + 1, 0.0)
    } else {
        (k0, k0 + 1, s)
    }
}

pub(crate) fn interpolate_level(g: &Grid, data: &[f64], x: &Vec3) -> f64 {
    let m = (g.n + 1) as f64;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let u = ((x[a] - g.domain.lo[a]) / g.h[a]).clamp(0.0, m);
        let b = (u.floor() as usize).min(g.n);
        base[a] = b;
        frac[a] = u - b as f64;
    }
    let mut v = 0.0;
    for dk in 0..2 {
        let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
        for dj in 0..2 {
            let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
            for di in 0..2 {
                let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
                v += wi * wj * wk * data[g.idx(base[0] + di, base[1] + dj, base[2] + dk)];
            }
        }
    }
    v
}

/// Boundary faces, ordered x−, x+, y−, y+, z−, z+.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    XMinus,
    XPlus,
    YMinus,
    YPlus,
    ZMinus,
    ZPlus,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMinus,
        Face::XPlus,
        Face::YMinus,
        Face::YPlus,
        Face::ZMinus,
        Face::ZPlus,
    ];

    pub fn axis(self) -> usize {
        self as usize / 2
    }

    pub fn is_plus(self) -> bool {
        self as usize % 2 == 1
    }

    pub fn normal(self) -> Vec3 {
        let mut v = Vec3::zeros();
        v[self.axis()] = if self.is_plus() { 1.0 } else { -1.0 };
        v
    }

    /// The two in-plane axes in increasing order.
    pub fn plane_axes(self) -> (usize, usize) {
        match self.axis() {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }
}

/// Per-level values on the six boundary faces, each face holding
/// `(n+2)²` nodes (edges and corners appear on every face they touch).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub grid: Grid,
    pub levels: Vec<Vec<f64>>,
}

impl BoundaryTrace {
    pub fn face_len(grid: &Grid) -> usize {
        grid.side() * grid.side()
    }

    pub fn level_len(grid: &Grid) -> usize {
        6 * Self::face_len(grid)
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            levels: vec![vec![0.0; Self::level_len(&grid)]; grid.steps + 1],
            grid,
        }
    }

    #[inline]
    pub fn slot(grid: &Grid, face: Face, a: usize, b: usize) -> usize {
        face as usize * Self::face_len(grid) + b * grid.side() + a
    }

    /// Grid node `(i, j, k)` of face node `(a, b)`.
    pub fn node(grid: &Grid, face: Face, a: usize, b: usize) -> (usize, usize, usize) {
        let c = if face.is_plus() { grid.n + 1 } else { 0 };
        match face.axis() {
            0 => (c, a, b),
            1 => (a, c, b),
            _ => (a, b, c),
        }
    }

    /// Trapezoidal area weight of face node `(a, b)`.
    pub fn area_weight(grid: &Grid, face: Face, a: usize, b: usize) -> f64 {
        let m = grid.n + 1;
        let f = |u: usize| if u == 0 || u == m { 0.5 } else { 1.0 };
        let (p, q) = face.plane_axes();
        f(a) * f(b) * grid.h[p] * grid.h[q]
    }

    /// Samples `f(t, x)` on every face node and level.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, &Vec3) -> f64 + Sync) -> Self {
        let levels = (0..=grid.steps)
            .into_par_iter()
            .map(|l| {
                let t = grid.time(l);
                let mut out = vec![0.0; Self::level_len(&grid)];
                for face in Face::ALL {
                    for b in 0..grid.side() {
                        for a in 0..grid.side() {
                            let (i, j, k) = Self::node(&grid, face, a, b);
                            out[Self::slot(&grid, face, a, b)] = f(t, &grid.point(i, j, k));
                        }
                    }
                }
                out
            })
            .collect();
        Self { grid, levels }
    }

    /// Applies independent multiplicative noise `1 + level·ξ`, `ξ ~ U(−1, 1)`.
    pub fn with_multiplicative_noise(mut self, level: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.levels {
            for v in l.iter_mut() {
                *v *= 1.0 + level * rng.gen_range(-1.0..1.0);
            }
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }
}

/// Harmonic-mean link conductivities for one time level. `c[a][idx]` is the
/// coefficient of the link from node `idx` to its `+a` neighbour.
#[derive(Debug, Clone)]
pub struct LinkCoefficients {
    pub c: [Vec<f64>; 3],
}

impl LinkCoefficients {
    pub fn assemble(scenario: &Scenario, grid: &Grid, t: f64) -> Self {
        let nn = grid.node_count();
        let mut c = [vec![1.0; nn], vec![1.0; nn], vec![1.0; nn]];
        if scenario.contrast_sign() == 0 && scenario.inclusion.profile.is_none() {
            return Self { c };
        }
        let center = scenario.inclusion.center(t);
        let reach = scenario.inclusion.semi_axes(t);
        let side = grid.side();
        let lo: Vec<usize> = (0..3)
            .map(|a| (((center[a] - reach[a] - grid.domain.lo[a]) / grid.h[a]).floor().max(0.0) as usize).saturating_sub(1))
            .collect();
        let hi: Vec<usize> = (0..3)
            .map(|a| ((((center[a] + reach[a] - grid.domain.lo[a]) / grid.h[a]).ceil() as usize) + 1).min(side - 1))
            .collect();
        for (axis, ca) in c.iter_mut().enumerate() {
            let mut step = [0usize; 3];
            step[axis] = 1;
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        if [i, j, k][axis] + 1 >= side {
                            continue;
                        }
                        let p0 = grid.point(i, j, k);
                        let p1 = grid.point(i + step[0], j + step[1], k + step[2]);
                        ca[grid.idx(i, j, k)] = if scenario.inclusion.profile.is_none() {
                            let f = chord_fraction(&center, &reach, &p0, &p1);
                            1.0 / (f / scenario.inclusion.k0 + (1.0 - f))
                        } else {
                            let mut inv = 0.0;
                            for m in 0..LINK_SAMPLES {
                                let s = (m as f64 + 0.5) / LINK_SAMPLES as f64;
                                inv += 1.0 / scenario.gamma_unchecked(t, &(p0 + (p1 - p0) * s));
                            }
                            LINK_SAMPLES as f64 / inv
                        };
                    }
                }
            }
        }
        Self { c }
    }
}

/// Fraction of the segment `p0 → p1` inside the ellipsoid with the given
/// centre and semi-axes.
fn chord_fraction(center: &Vec3, axes: &Vec3, p0: &Vec3, p1: &Vec3) -> f64 {
    let q = Vec3::from_fn(|i, _| (p0[i] - center[i]) / axes[i]);
    let d = Vec3::from_fn(|i, _| (p1[i] - p0[i]) / axes[i]);
    let a = d.norm_squared();
    let b = q.dot(&d);
    let disc = b * b - a * (q.norm_squared() - 1.0);
    if disc <= 0.0 {
        return 0.0;
    }
    let r = disc.sqrt();
    let s0 = ((-b - r) / a).max(0.0);
    let s1 = ((-b + r) / a).min(1.0);
    (s1 - s0).max(0.0)
}

/// Knobs of the time stepper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Reaction shift `λ`: solves `v_t − ∇·(γ∇v) + λv = source`.
    pub shift: f64,
    /// March from `t_end` down to 0 (backward equation with terminal data).
    pub reverse: bool,
    pub cg_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            shift: 0.0,
            reverse: false,
            cg_tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

/// `out = (1 + dt·λ)x + dt·Σ c (x_i − x_nb)/h²` on interior rows; boundary rows are zero.
fn apply(grid: &Grid, coef: &LinkCoefficients, dt: f64, shift: f64, x: &[f64], out: &mut [f64]) {
    let side = grid.side();
    let plane = side * side;
    let n = grid.n;
    let inv_h2 = [
        dt / (grid.h[0] * grid.h[0]),
        dt / (grid.h[1] * grid.h[1]),
        dt / (grid.h[2] * grid.h[2]),
    ];
    let diag0 = 1.0 + dt * shift;
    let strides = [1, side, plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
        slab.iter_mut().for_each(|v| *v = 0.0);
        if k == 0 || k > n {
            return;
        }
        for j in 1..=n {
            for i in 1..=n {
                let id = (k * side + j) * side + i;
                let xi = x[id];
                let mut acc = diag0 * xi;
                for a in 0..3 {
                    let s = strides[a];
                    let cp = coef.c[a][id];
                    let cm = coef.c[a][id - s];
                    acc += inv_h2[a] * (cp * (xi - x[id + s]) + cm * (xi - x[id - s]));
                }
                slab[j * side + i] = acc;
            }
        }
    });
}

fn jacobi_diag(grid: &Grid, coef: &LinkCoefficients, dt: f64, shift: f64) -> Vec<f64> {
    let side = grid.side();
    let strides = [1, side, side * side];
    let mut d = vec![1.0; grid.node_count()];
    for k in 1..=grid.n {
        for j in 1..=grid.n {
            for i in 1..=grid.n {
                let id = grid.idx(i, j, k);
                let mut v = 1.0 + dt * shift;
                for a in 0..3 {
                    v += dt / (grid.h[a] * grid.h[a]) * (coef.c[a][id] + coef.c[a][id - strides[a]]);
                }
                d[id] = v;
            }
        }
    }
    d
}

/// Order-independent dot product: per-plane partial sums, then a serial sum.
fn dot(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let plane = grid.side() * grid.side();
    let parts: Vec<f64> = a
        .par_chunks(plane)
        .zip(b.par_chunks(plane))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    parts.iter().sum()
}

/// Solves one implicit step in place. `x` holds the initial guess in the
/// interior and the Dirichlet values on the boundary; `rhs` is used on
/// interior rows only.
fn implicit_step(
    grid: &Grid,
    coef: &LinkCoefficients,
    opts: &SolveOptions,
    rhs: &[f64],
    x: &mut [f64],
) -> Result<usize> {
    let dt = grid.dt;
    let nn = grid.node_count();
    let diag = jacobi_diag(grid, coef, dt, opts.shift);
    let mut ax = vec![0.0; nn];
    // effective right-hand side including the Dirichlet coupling
    let mut bnd = x.to_vec();
    for k in 1..=grid.n {
        for j in 1..=grid.n {
            for i in 1..=grid.n {
                bnd[grid.idx(i, j, k)] = 0.0;
            }
        }
    }
    apply(grid, coef, dt, opts.shift, &bnd, &mut ax);
    let mut b_eff = vec![0.0; nn];
    for k in 1..=grid.n {
        for j in 1..=grid.n {
            for i in 1..=grid.n {
                let id = grid.idx(i, j, k);
                b_eff[id] = rhs[id] - ax[id];
            }
        }
    }
    let bnorm = dot(grid, &b_eff, &b_eff).sqrt();
    apply(grid, coef, dt, opts.shift, x, &mut ax);
    let mut r = vec![0.0; nn];
    for k in 1..=grid.n {
        for j in 1..=grid.n {
            for i in 1..=grid.n {
                let id = grid.idx(i, j, k);
                r[id] = rhs[id] - ax[id];
            }
        }
    }
    let target = opts.cg_tol * bnorm;
    let mut rnorm = dot(grid, &r, &r).sqrt();
    if rnorm <= target || bnorm == 0.0 {
        return Ok(0);
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz = dot(grid, &r, &z);
    for it in 1..=opts.max_iter {
        apply(grid, coef, dt, opts.shift, &p, &mut ax);
        let pap = dot(grid, &p, &ax);
        let alpha = rz / pap;
        for id in 0..nn {
            x[id] += alpha * p[id];
            r[id] -= alpha * ax[id];
        }
        rnorm = dot(grid, &r, &r).sqrt();
        if rnorm <= target {
            return Ok(it);
        }
        for id in 0..nn {
            z[id] = r[id] / diag[id];
        }
        let rz_new = dot(grid, &r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for id in 0..nn {
            p[id] = z[id] + beta * p[id];
        }
    }
    Err(Error::Solver {
        iterations: opts.max_iter,
        residual: rnorm / bnorm,
    })
}

/// Writes boundary values of `trace` level `l` into a full-grid array.
fn impose_boundary(grid: &Grid, trace: &BoundaryTrace, l: usize, x: &mut [f64]) {
    for face in Face::ALL.iter().rev() {
        for b in 0..grid.side() {
            for a in 0..grid.side() {
                let (i, j, k) = BoundaryTrace::node(grid, *face, a, b);
                x[grid.idx(i, j, k)] = trace.levels[l][BoundaryTrace::slot(grid, *face, a, b)];
            }
        }
    }
}

/// Generic backward-Euler march. `source(t, coef)` returns the interior
/// source at the new level, if any.
fn march(
    scenario: &Scenario,
    grid: &Grid,
    boundary: Option<&BoundaryTrace>,
    start: Vec<f64>,
    source: &(dyn Fn(f64, &LinkCoefficients) -> Result<Option<Vec<f64>>> + Sync),
    opts: &SolveOptions,
) -> Result<SpaceTimeField> {
    if start.len() != grid.node_count() {
        return Err(Error::Shape(format!(
            "initial field has {} values, grid has {} nodes",
            start.len(),
            grid.node_count()
        )));
    }
    if let Some(f) = boundary {
        if f.grid != *grid || f.levels.len() != grid.steps + 1 {
            return Err(Error::Shape("boundary trace does not match the grid".into()));
        }
    }
    let mut field = SpaceTimeField::zeros(*grid);
    let order: Vec<usize> = if opts.reverse {
        (0..=grid.steps).rev().collect()
    } else {
        (0..=grid.steps).collect()
    };
    let mut cur = start;
    if let Some(f) = boundary {
        impose_boundary(grid, f, order[0], &mut cur);
    }
    field.levels[order[0]] = cur.clone();
    for w in order.windows(2) {
        let l = w[1];
        let t = grid.time(l);
        let coef = LinkCoefficients::assemble(scenario, grid, t);
        let mut rhs = cur.clone();
        if let Some(s) = source(t, &coef)? {
            for (r, v) in rhs.iter_mut().zip(&s) {
                *r += grid.dt * v;
            }
        }
        let mut x = cur.clone();
        match boundary {
            Some(f) => impose_boundary(grid, f, l, &mut x),
            None => zero_boundary(grid, &mut x),
        }
        implicit_step(grid, &coef, opts, &rhs, &mut x)?;
        field.levels[l] = x.clone();
        cur = x;
    }
    Ok(field)
}

fn zero_boundary(grid: &Grid, x: &mut [f64]) {
    let side = grid.side();
    for k in 0..side {
        for j in 0..side {
            for i in 0..side {
                if grid.is_boundary(i, j, k) {
                    x[grid.idx(i, j, k)] = 0.0;
                }
            }
        }
    }
}

/// Dirichlet problem `v_t = ∇·(γ∇v)`, `v = f` on the boundary, `v(0) = v0`.
pub fn solve_dirichlet(
    scenario: &Scenario,
    grid: &Grid,
    f: &BoundaryTrace,
    v0: &[f64],
) -> Result<SpaceTimeField> {
    solve_dirichlet_with(scenario, grid, f, v0, &SolveOptions::default())
}

/// [`solve_dirichlet`] with a reaction shift or reversed time direction.
pub fn solve_dirichlet_with(
    scenario: &Scenario,
    grid: &Grid,
    f: &BoundaryTrace,
    v0: &[f64],
    opts: &SolveOptions,
) -> Result<SpaceTimeField> {
    march(scenario, grid, Some(f), v0.to_vec(), &|_, _| Ok(None), opts)
}

/// Samples a function at every grid node.
pub fn sample_nodes(grid: &Grid, f: impl Fn(&Vec3) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    let side = grid.side();
    let planes: Vec<Vec<f64>> = (0..side)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::with_capacity(side * side);
            for j in 0..side {
                for i in 0..side {
                    out.push(f(&grid.point(i, j, k))?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(planes.concat())
}

/// Initial field for the scenario; the probe-seeded option uses `U_τ(0,·)`.
pub fn initial_field(scenario: &Scenario, grid: &Grid, probe: Option<&ProbeField>) -> Result<Vec<f64>> {
    match (scenario.initial, probe) {
        (InitialData::ProbeSeeded, Some(p)) => sample_nodes(grid, |x| Ok(p.evaluate(0.0, x)?.value)),
        (InitialData::ProbeSeeded, None) => Err(Error::Parameter(
            "probe-seeded initial data needs a probe field".into(),
        )),
        _ => sample_nodes(grid, |x| Ok(scenario.initial_value(x))),
    }
}

/// Checks `d(y(t), D(t)) ≥ 2h` on `[0, grid.t_end]`.
pub fn check_clearance(scenario: &Scenario, grid: &Grid, needle: &Needle) -> Result<()> {
    let required = 2.0 * grid.h_max();
    let d = dist_needle_to_inclusion(scenario, needle, grid.t_end.min(scenario.horizon))?;
    if d >= required {
        return Ok(());
    }
    let t = (0..=grid.steps)
        .map(|l| grid.time(l))
        .find(|&t| clearance(scenario, needle, t) < required)
        .unwrap_or(grid.t_end);
    Err(Error::Clearance {
        t,
        clearance: d,
        required,
    })
}

/// Reflected wave in factored form `w = e^{−τ²t}W`:
/// `w_t − ∇·(γ∇w) + τ²w = ∇·((γ−1)∇u)`, `w = 0` on the boundary,
/// `w(0) = v0 − u(0)`, where `u` is the spatial part of the forward probe.
pub fn solve_reflected(
    scenario: &Scenario,
    grid: &Grid,
    params: &ProbeParams,
    needle: &Needle,
) -> Result<SpaceTimeField> {
    if params.eta_mode != EtaMode::Zero {
        return Err(Error::Parameter("the reflected wave uses the forward probe (eta_mode = Zero)".into()));
    }
    check_clearance(scenario, grid, needle)?;
    let probe = ProbeField::forward(*params, needle)?;
    let start = match scenario.initial {
        InitialData::ProbeSeeded => vec![0.0; grid.node_count()],
        _ => {
            let mut w0 = sample_nodes(grid, |x| Ok(scenario.initial_value(x) - probe.evaluate(0.0, x)?.value))?;
            zero_boundary(grid, &mut w0);
            w0
        }
    };
    let source = |t: f64, coef: &LinkCoefficients| -> Result<Option<Vec<f64>>> {
        Ok(Some(contrast_source(grid, coef, &probe, t)?))
    };
    let opts = SolveOptions {
        shift: params.tau * params.tau,
        ..SolveOptions::default()
    };
    march(scenario, grid, None, start, &source, &opts)
}

/// Measurement emulation for a pole that stays outside the closed body.
///
/// Solves the factored full problem `v_t − ∇·(γ∇v) + τ²v = 0` with Dirichlet
/// data and initial value taken from the forward probe, once with the
/// inclusion and once without, and returns the difference. Its normal flux
/// is `Λf − ∂_ν u` with the background flux computed on the same grid.
pub fn solve_measured(
    scenario: &Scenario,
    grid: &Grid,
    params: &ProbeParams,
    needle: &Needle,
) -> Result<SpaceTimeField> {
    if params.eta_mode != EtaMode::Zero {
        return Err(Error::Parameter("the measured field uses the forward probe (eta_mode = Zero)".into()));
    }
    if let Some(l) = (0..=grid.steps).find(|&l| grid.domain.distance_outside(&needle.at(grid.time(l))) <= 0.0) {
        return Err(Error::Parameter(format!(
            "measurement emulation needs the pole outside the body; it is inside at t = {}",
            grid.time(l)
        )));
    }
    check_clearance(scenario, grid, needle)?;
    let probe = ProbeField::forward(*params, needle)?;
    let f = try_trace(grid, |t, x| Ok(probe.evaluate(t, x)?.value))?;
    let v0 = sample_nodes(grid, |x| Ok(probe.evaluate(0.0, x)?.value))?;
    let opts = SolveOptions {
        shift: params.tau * params.tau,
        ..SolveOptions::default()
    };
    let mut background = scenario.clone();
    background.inclusion.k0 = 1.0;
    background.inclusion.profile = None;
    let with = solve_dirichlet_with(scenario, grid, &f, &v0, &opts)?;
    let without = solve_dirichlet_with(&background, grid, &f, &v0, &opts)?;
    let mut w = with;
    for (a, b) in w.levels.iter_mut().zip(&without.levels) {
        for (x, y) in a.iter_mut().zip(b) {
            *x -= y;
        }
    }
    Ok(w)
}

fn try_trace(grid: &Grid, f: impl Fn(f64, &Vec3) -> Result<f64> + Sync) -> Result<BoundaryTrace> {
    let err = std::sync::OnceLock::new();
    let trace = BoundaryTrace::from_fn(*grid, |t, x| match f(t, x) {
        Ok(v) => v,
        Err(e) => {
            let _ = err.set(e.to_string());
            f64::NAN
        }
    });
    if trace.is_finite() {
        Ok(trace)
    } else {
        Err(Error::Parameter(err.into_inner().unwrap_or_else(|| "non-finite boundary data".into())))
    }
}

/// Discrete divergence of `(γ_link − 1)·∂u` over links where the link
/// conductivity differs from 1.
fn contrast_source(grid: &Grid, coef: &LinkCoefficients, probe: &ProbeField, t: f64) -> Result<Vec<f64>> {
    let side = grid.side();
    let strides = [1, side, side * side];
    let mut links: Vec<(usize, usize, f64)> = Vec::new();
    for (a, ca) in coef.c.iter().enumerate() {
        for (id, &c) in ca.iter().enumerate() {
            if (c - 1.0).abs() > 1e-14 {
                links.push((a, id, c - 1.0));
            }
        }
    }
    let fluxes: Vec<f64> = links
        .par_iter()
        .map(|&(a, id, cm1)| {
            let i = id % side;
            let j = (id / side) % side;
            let k = id / (side * side);
            let mut x = grid.point(i, j, k);
            x[a] += 0.5 * grid.h[a];
            Ok(cm1 * probe.evaluate(t, &x)?.gradient[a])
        })
        .collect::<Result<_>>()?;
    let mut s = vec![0.0; grid.node_count()];
    for (&(a, id, _), q) in links.iter().zip(&fluxes) {
        let up = id + strides[a];
        s[id] += q / grid.h[a];
        s[up] -= q / grid.h[a];
    }
    Ok(s)
}

/// Outward normal derivative at every face node, by the second-order
/// one-sided difference `(3v₀ − 4v₁ + v₂)/(2h)`.
pub fn dtn_flux(field: &SpaceTimeField, grid: &Grid) -> Result<BoundaryTrace> {
    if field.grid != *grid {
        return Err(Error::Shape("field grid differs from the requested grid".into()));
    }
    let side = grid.side();
    let mut out = BoundaryTrace::zeros(*grid);
    for (l, data) in field.levels.iter().enumerate() {
        let lvl = &mut out.levels[l];
        for face in Face::ALL {
            let ax = face.axis();
            let h = grid.h[ax];
            for b in 0..side {
                for a in 0..side {
                    let (i, j, k) = BoundaryTrace::node(grid, face, a, b);
                    let mut p = [i as isize, j as isize, k as isize];
                    let dir: isize = if face.is_plus() { -1 } else { 1 };
                    let v0 = data[grid.idx(p[0] as usize, p[1] as usize, p[2] as usize)];
                    p[ax] += dir;
                    let v1 = data[grid.idx(p[0] as usize, p[1] as usize, p[2] as usize)];
                    p[ax] += dir;
                    let v2 = data[grid.idx(p[0] as usize, p[1] as usize, p[2] as usize)];
                    lvl[BoundaryTrace::slot(grid, face, a, b)] = (3.0 * v0 - 4.0 * v1 + v2) / (2.0 * h);
                }
            }
        }
    }
    Ok(out)
}

/// Sidecar metadata of a field snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub format: String,
    pub order: String,
    pub grid: Grid,
    pub levels: usize,
    pub nodes_per_level: usize,
    pub scenario_hash: String,
    pub params: Option<ProbeParams>,
}

/// Writes `<base>.bin` (little-endian f64, level-major, z-y-x) and `<base>.json`.
pub fn write_snapshot(
    field: &SpaceTimeField,
    base: &Path,
    scenario_hash: &str,
    params: Option<&ProbeParams>,
) -> Result<(PathBuf, PathBuf)> {
    let bin = base.with_extension("bin");
    let json = base.with_extension("json");
    let mut bytes = Vec::with_capacity(field.levels.len() * field.grid.node_count() * 8);
    for l in &field.levels {
        for v in l {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(&bin)?.write_all(&bytes)?;
    let meta = SnapshotMeta {
        format: "f64-le".into(),
        order: "level,z,y,x".into(),
        grid: field.grid,
        levels: field.levels.len(),
        nodes_per_level: field.grid.node_count(),
        scenario_hash: scenario_hash.to_string(),
        params: params.copied(),
    };
    fs::write(&json, serde_json::to_string_pretty(&meta)?)?;
    Ok((bin, json))
}

pub fn read_snapshot(base: &Path) -> Result<(SpaceTimeField, SnapshotMeta)> {
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
    let mut bytes = Vec::new();
    fs::File::open(base.with_extension("bin"))?.read_to_end(&mut bytes)?;
    let expected = meta.levels * meta.nodes_per_level * 8;
    if bytes.len() != expected || meta.nodes_per_level != meta.grid.node_count() {
        return Err(Error::Shape(format!(
            "snapshot holds {} bytes, sidecar implies {expected}",
            bytes.len()
        )));
    }
    let levels = bytes
        .chunks_exact(meta.nodes_per_level * 8)
        .map(|lv| {
            lv.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect()
        })
        .collect();
    Ok((SpaceTimeField { grid: meta.grid, levels }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::p_yukawa;
    use crate::scenario::InclusionTrajectory;
    use std::f64::consts::PI;

    fn background() -> Scenario {
        Scenario::new(
            Domain::unit_cube(),
            1.0,
            InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.15, 1.0),
        )
    }

    fn with_ball(k0: f64) -> Scenario {
        Scenario::new(
            Domain::unit_cube(),
            1.0,
            InclusionTrajectory::static_ball(Vec3::repeat(0.5), 0.2, k0),
        )
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = Grid::new(Domain::unit_cube(), 8, 4, 0.1).unwrap();
        let f = BoundaryTrace::zeros(g);
        let v = solve_dirichlet(&background(), &g, &f, &vec![0.0; g.node_count()]).unwrap();
        assert!(v.levels.iter().all(|l| l.iter().all(|&x| x == 0.0)));
    }

    fn manufactured_error(n: usize, steps: usize) -> f64 {
        let g = Grid::new(Domain::unit_cube(), n, steps, 0.05).unwrap();
        let exact = |t: f64, x: &Vec3| {
            (-3.0 * PI * PI * t).exp() * (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
        };
        let f = BoundaryTrace::from_fn(g, exact);
        let v0 = sample_nodes(&g, |x| Ok(exact(0.0, x))).unwrap();
        let v = solve_dirichlet(&background(), &g, &f, &v0).unwrap();
        let l = g.steps;
        let ex = sample_nodes(&g, |x| Ok(exact(g.t_end, x))).unwrap();
        let err: f64 = v.levels[l].iter().zip(&ex).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let nrm: f64 = ex.iter().map(|b| b * b).sum::<f64>();
        (err / nrm).sqrt()
    }

    #[test]
    fn manufactured_solution_converges() {
        let e1 = manufactured_error(9, 40);
        let e2 = manufactured_error(19, 160);
        assert!(e1 < 0.05, "{e1}");
        assert!(e2 < e1 / 3.0, "{e1} -> {e2}");
    }

    #[test]
    fn maximum_principle_with_inclusion() {
        let s = with_ball(2.0);
        let g = Grid::new(Domain::unit_cube(), 10, 8, 0.2).unwrap();
        let y = Vec3::new(-0.3, 0.5, 0.5);
        let f = BoundaryTrace::from_fn(g, |_, x| p_yukawa(4.0, &y, x).unwrap().0);
        let v = solve_dirichlet(&s, &g, &f, &vec![0.0; g.node_count()]).unwrap();
        let fmax = f.levels.iter().flatten().fold(0.0f64, |m, &x| m.max(x));
        let fmin = f.levels.iter().flatten().fold(f64::INFINITY, |m, &x| m.min(x));
        for l in &v.levels[1..] {
            for &x in l {
                assert!(x <= fmax.max(0.0) + 1e-9 && x >= fmin.min(0.0) - 1e-9);
            }
        }
    }

    #[test]
    fn energy_decays_without_data() {
        let s = with_ball(0.5);
        let g = Grid::new(Domain::unit_cube(), 10, 10, 0.1).unwrap();
        let v0 = sample_nodes(&g, |x| Ok(x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]) * x[2] * (1.0 - x[2]))).unwrap();
        let v = solve_dirichlet(&s, &g, &BoundaryTrace::zeros(g), &v0).unwrap();
        for k in 1..=g.steps {
            assert!(v.l2_norm(k) <= v.l2_norm(k - 1) + 1e-15);
        }
    }

    #[test]
    fn operator_is_symmetric() {
        use rand::Rng;
        let s = with_ball(2.0);
        let g = Grid::new(Domain::unit_cube(), 12, 1, 0.01).unwrap();
        let coef = LinkCoefficients::assemble(&s, &g, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut u = vec![0.0; g.node_count()];
        let mut w = vec![0.0; g.node_count()];
        for k in 1..=g.n {
            for j in 1..=g.n {
                for i in 1..=g.n {
                    u[g.idx(i, j, k)] = rng.gen_range(-1.0..1.0);
                    w[g.idx(i, j, k)] = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let mut au = vec![0.0; g.node_count()];
        let mut aw = vec![0.0; g.node_count()];
        apply(&g, &coef, g.dt, 3.0, &u, &mut au);
        apply(&g, &coef, g.dt, 3.0, &w, &mut aw);
        let a = dot(&g, &au, &w);
        let b = dot(&g, &u, &aw);
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn reversed_march_mirrors_forward() {
        let s = background();
        let g = Grid::new(Domain::unit_cube(), 8, 6, 0.06).unwrap();
        let f = BoundaryTrace::from_fn(g, |t, x| (1.0 + t) * x[0] * x[1]);
        let v0 = sample_nodes(&g, |x| Ok(x[2])).unwrap();
        let fwd = solve_dirichlet(&s, &g, &f, &v0).unwrap();
        let mut rev_trace = f.clone();
        rev_trace.levels.reverse();
        let opts = SolveOptions {
            reverse: true,
            ..SolveOptions::default()
        };
        let bwd = solve_dirichlet_with(&s, &g, &rev_trace, &v0, &opts).unwrap();
        for l in 0..=g.steps {
            let a = &fwd.levels[l];
            let b = &bwd.levels[g.steps - l];
            let m = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(m < 1e-8, "level {l}: {m}");
        }
    }

    #[test]
    fn flux_exact_on_linear_fields() {
        let g = Grid::new(Domain::unit_cube(), 8, 1, 0.1).unwrap();
        let a = Vec3::new(0.3, -1.2, 2.0);
        let mut field = SpaceTimeField::zeros(g);
        for l in &mut field.levels {
            *l = sample_nodes(&g, |x| Ok(a.dot(x))).unwrap();
        }
        let flux = dtn_flux(&field, &g).unwrap();
        for face in Face::ALL {
            let expect = a.dot(&face.normal());
            let v = flux.levels[1][BoundaryTrace::slot(&g, face, 3, 4)];
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn flux_of_yukawa_is_second_order() {
        let tau = 3.0;
        let y = Vec3::new(-0.4, 0.45, 0.55);
        let err = |n: usize| {
            let g = Grid::new(Domain::unit_cube(), n, 1, 0.1).unwrap();
            let mut field = SpaceTimeField::zeros(g);
            field.levels[0] = sample_nodes(&g, |x| Ok(p_yukawa(tau, &y, x)?.0)).unwrap();
            let flux = dtn_flux(&field, &g).unwrap();
            let mut e: f64 = 0.0;
            for face in Face::ALL {
                for b in 0..g.side() {
                    for a in 0..g.side() {
                        let (i, j, k) = BoundaryTrace::node(&g, face, a, b);
                        let exact = p_yukawa(tau, &y, &g.point(i, j, k)).unwrap().1.dot(&face.normal());
                        e = e.max((flux.levels[0][BoundaryTrace::slot(&g, face, a, b)] - exact).abs());
                    }
                }
            }
            e
        };
        let (e1, e2) = (err(19), err(39));
        assert!(e2 < e1 / 3.0, "{e1} -> {e2}");
    }

    #[test]
    fn no_contrast_gives_no_reflection() {
        let s = background().with_initial(InitialData::ProbeSeeded);
        let g = Grid::new(Domain::unit_cube(), 8, 4, 0.2).unwrap();
        let needle = Needle::fixed(Vec3::new(-0.2, 0.5, 0.5));
        let p = ProbeParams::new(6.0, 1.0, 0.1, 0.2, EtaMode::Zero).unwrap();
        let w = solve_reflected(&s, &g, &p, &needle).unwrap();
        assert!(w.levels.iter().all(|l| l.iter().all(|&x| x == 0.0)));
        let flux = dtn_flux(&w, &g).unwrap();
        assert!(flux.levels.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn clearance_is_enforced() {
        let s = with_ball(2.0);
        let g = Grid::new(Domain::unit_cube(), 8, 4, 0.2).unwrap();
        let needle = Needle::fixed(Vec3::new(0.5, 0.5, 0.75));
        let p = ProbeParams::new(6.0, 1.0, 0.1, 0.2, EtaMode::Zero).unwrap();
        assert!(matches!(solve_reflected(&s, &g, &p, &needle), Err(Error::Clearance { .. })));
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let g = Grid::new(Domain::unit_cube(), 8, 3, 0.3).unwrap();
        let mut field = SpaceTimeField::zeros(g);
        for (l, lv) in field.levels.iter_mut().enumerate() {
            for (i, v) in lv.iter_mut().enumerate() {
                *v = ((i * 31 + l * 7) as f64).sin() * 1e-200 + (i as f64).sqrt();
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("w");
        write_snapshot(&field, &base, "abc", None).unwrap();
        let (back, meta) = read_snapshot(&base).unwrap();
        assert_eq!(meta.scenario_hash, "abc");
        for (a, b) in field.levels.iter().flatten().zip(back.levels.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Steady radial transmission problem `−∇·(γ∇v) + τ²v = 0` around a
    /// centred ball, exact in closed form.
    fn radial_transmission(k: f64, tau: f64, radius: f64) -> impl Fn(&Vec3) -> f64 + Sync {
        let q = tau / k.sqrt();
        let (r0, t) = (radius, tau);
        let vin = (q * r0).sinh() / r0;
        let din = k * (q * r0 * (q * r0).cosh() - (q * r0).sinh()) / (r0 * r0);
        let (e_m, e_p) = ((-t * r0).exp() / r0, (t * r0).exp() / r0);
        let (d_m, d_p) = (
            -(t * r0 + 1.0) * (-t * r0).exp() / (r0 * r0),
            (t * r0 - 1.0) * (t * r0).exp() / (r0 * r0),
        );
        let det = e_m * d_p - e_p * d_m;
        let b = (vin * d_p - e_p * din) / det;
        let c = (e_m * din - d_m * vin) / det;
        move |x: &Vec3| {
            let r = (x - Vec3::repeat(0.5)).norm();
            if r < 1e-12 {
                q
            } else if r < r0 {
                (q * r).sinh() / r
            } else {
                (b * (-t * r).exp() + c * (t * r).exp()) / r
            }
        }
    }

    #[test]
    fn transmission_problem_converges() {
        let (k, tau, radius) = (2.0, 8.0, 0.2);
        let exact = radial_transmission(k, tau, radius);
        let s = Scenario::new(
            Domain::unit_cube(),
            1.0,
            InclusionTrajectory::static_ball(Vec3::repeat(0.5), radius, k),
        );
        let err = |n: usize| {
            let g = Grid::new(Domain::unit_cube(), n, 2, 0.5).unwrap();
            let f = BoundaryTrace::from_fn(g, |_, x| exact(x));
            let v0 = sample_nodes(&g, |x| Ok(exact(x))).unwrap();
            let opts = SolveOptions {
                shift: tau * tau,
                ..SolveOptions::default()
            };
            let v = solve_dirichlet_with(&s, &g, &f, &v0, &opts).unwrap();
            let e = v.levels[2].iter().zip(&v0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            e / v0.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        };
        let (e1, e2) = (err(15), err(31));
        assert!(e1 < 2e-3 && e2 < e1 / 3.0, "{e1} -> {e2}");
    }

    #[test]
    fn reflection_sign_follows_contrast() {
        let g = Grid::new(Domain::unit_cube(), 15, 8, 0.2).unwrap();
        let needle = Needle::fixed(Vec3::new(-0.1, 0.5, 0.5));
        let p = ProbeParams::new(8.0, 1.0, 0.1, 0.2, EtaMode::Zero).unwrap();
        let probe_side = Vec3::new(0.25, 0.5, 0.5);
        for (k0, sign) in [(2.0, -1.0), (0.5, 1.0)] {
            let w = solve_reflected(&with_ball(k0), &g, &p, &needle).unwrap();
            assert!(sign * w.interpolate(8, &probe_side) > 0.0, "k0 = {k0}");
        }
    }
}
