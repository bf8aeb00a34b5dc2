//! Special fundamental solutions with a moving pole.
//!
//! The forward field is `U_τ(t,x) = e^{τ²t} φ(t,x) p_τ(x − y(t))` and the adjoint
//! field is `U*_τ(t,x) = e^{−τ²t} φ*(t,x) p_τ(x − y(t))`, where `p_τ` is the
//! Yukawa kernel `e^{−τr}/(4πr)`. The correction factors are ratios of heat
//! potentials and are evaluated as one-dimensional integrals over the heat
//! kernel's time lag `s`, after the change of variables
//! `s = (r/2τ)e^{±a}`, `α = τr(cosh a − 1)`, which turns the lag integral into
//! a smooth integral against the weight `α^{−1/2}e^{−α}`.
//!
//! The `e^{±τ²t}` time factors are never multiplied in; they are returned as
//! logarithms next to the O(e^{−τr}) spatial parts.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{GaussLegendre, QuadratureRule};
use crate::scenario::{Needle, Vec3};

/// Weight `η` entering the probe equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMode {
    /// `η ≡ 0`, used for the forward field.
    Zero,
    /// `η(t) = μ·sgn(t − θ)`, used for the adjoint field.
    MuSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    pub tau: f64,
    pub mu: f64,
    pub theta: f64,
    pub t_prime: f64,
    pub eta_mode: EtaMode,
}

impl ProbeParams {
    /// Checks `τ > 0`, `0 ≤ μ < τ` and `0 < θ < T′`.
    pub fn new(tau: f64, mu: f64, theta: f64, t_prime: f64, eta_mode: EtaMode) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
        }
        if !(mu >= 0.0 && mu < tau) {
            return Err(Error::Parameter(format!(
                "mu must satisfy 0 <= mu < tau, got mu = {mu}, tau = {tau}"
            )));
        }
        if !(t_prime > 0.0) {
            return Err(Error::Parameter(format!("T' must be positive, got {t_prime}")));
        }
        if !(theta > 0.0 && theta < t_prime) {
            return Err(Error::Parameter(format!(
                "theta must lie in (0, T') = (0, {t_prime}), got {theta}"
            )));
        }
        Ok(Self {
            tau,
            mu,
            theta,
            t_prime,
            eta_mode,
        })
    }

    pub fn with_mode(mut self, eta_mode: EtaMode) -> Self {
        self.eta_mode = eta_mode;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    /// Smallest admissible `μ` for initial data of growth `l0`.
    pub fn mu_threshold(&self, l0: f64) -> f64 {
        l0 * (1.0 / self.theta).max(1.0 / (self.t_prime - self.theta))
    }

    /// `κ(t) = e^{−τμ|t−θ|}`.
    pub fn kappa(&self, t: f64) -> f64 {
        (-self.ln_kappa_neg(t)).exp()
    }

    /// `τμ|t−θ|`, i.e. `−ln κ(t)`.
    pub fn ln_kappa_neg(&self, t: f64) -> f64 {
        self.tau * self.mu * (t - self.theta).abs()
    }

    /// `ρ(t) = ∫₀ᵗ η`.
    pub fn rho(&self, t: f64) -> f64 {
        match self.eta_mode {
            EtaMode::Zero => 0.0,
            EtaMode::MuSign => self.mu * ((t - self.theta).abs() - self.theta),
        }
    }

    pub fn eta(&self, t: f64) -> f64 {
        match self.eta_mode {
            EtaMode::Zero => 0.0,
            EtaMode::MuSign => self.mu * (t - self.theta).signum(),
        }
    }

    fn rho_is_trivial(&self) -> bool {
        self.eta_mode == EtaMode::Zero || self.mu == 0.0
    }
}

/// `κ(t)` as a free function.
pub fn kappa(params: &ProbeParams, t: f64) -> f64 {
    params.kappa(t)
}

/// `ρ(t)` as a free function.
pub fn rho(params: &ProbeParams, t: f64) -> f64 {
    params.rho(t)
}

/// Yukawa kernel `e^{−τr}/(4πr)` and its gradient in `x`.
pub fn p_yukawa(tau: f64, y: &Vec3, x: &Vec3) -> Result<(f64, Vec3)> {
    let d = x - y;
    let r = d.norm();
    if !(r > 0.0) {
        return Err(Error::Pole { r });
    }
    let v = (-tau * r).exp() / (4.0 * PI * r);
    let g = d * (-(tau * r + 1.0) * v / (r * r));
    Ok((v, g))
}

/// Which heat potential the correction factor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Lag reaches into the past: pole positions `y(t − s)`.
    Forward,
    /// Lag reaches into the future: pole positions `y(t + s)`.
    Adjoint,
}

/// Nodes used by the lag integral: a generalized Laguerre rule for smooth
/// integrands, plus Gauss-Legendre panels and a shifted Laguerre tail for
/// integrands with kinks (from needle corners or the kink of `ρ` at `θ`).
#[derive(Debug, Clone)]
pub struct LagQuadrature {
    pub smooth: QuadratureRule,
    pub panel: GaussLegendre,
    pub tail: QuadratureRule,
    /// Maximum panel length in `β = √α`.
    pub panel_width: f64,
    /// Smallest start of the Laguerre tail.
    pub tail_start: f64,
    /// Relative tolerance on the truncated-tail estimate.
    pub tail_tol: f64,
}

impl LagQuadrature {
    pub fn with_nodes(nodes: usize) -> Self {
        Self {
            smooth: QuadratureRule::generalized(nodes, -0.5, QuadratureRule::DEFAULT_ALPHA_MAX),
            panel: GaussLegendre::new((nodes / 4).max(4)),
            tail: QuadratureRule::generalized((nodes / 2).max(4), 0.0, QuadratureRule::DEFAULT_ALPHA_MAX),
            panel_width: 1.0,
            tail_start: 2.0,
            tail_tol: 1e-10,
        }
    }

    /// Same layout with every rule doubled.
    pub fn doubled(&self) -> Self {
        Self::with_nodes(2 * self.smooth.node_count())
    }

    pub fn alpha_max(&self) -> f64 {
        self.smooth.alpha_max()
    }

    /// Shared default instance (64 nodes, cutoff 60).
    pub fn shared() -> Arc<LagQuadrature> {
        static RULE: OnceLock<Arc<LagQuadrature>> = OnceLock::new();
        RULE.get_or_init(|| Arc::new(LagQuadrature::with_nodes(QuadratureRule::DEFAULT_NODES)))
            .clone()
    }
}

/// Correction factor and its split, gradient, and tail diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiValue {
    pub phi: f64,
    pub plus: f64,
    pub minus: f64,
    pub grad: Vec3,
    /// Estimated size of the neglected tail beyond the cutoff.
    pub tail_estimate: f64,
}

/// A probe field evaluated at one space-time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    /// Spatial part `φ·p`.
    pub value: f64,
    pub gradient: Vec3,
    pub laplacian: f64,
    /// `±τ²t`: the full field is `e^{ln_time_factor}·value`.
    pub ln_time_factor: f64,
    pub phi: PhiValue,
}

/// Evaluator for `U_τ` or `U*_τ` along a fixed needle.
#[derive(Debug, Clone)]
pub struct ProbeField {
    params: ProbeParams,
    needle: Needle,
    kind: ProbeKind,
    quad: Arc<LagQuadrature>,
    trivial: bool,
}

/// Integrand components, all with respect to the weight `α^{−1/2}e^{−α}`.
const NCOMP: usize = 6;
const C_PLUS: usize = 0;
const C_MINUS: usize = 1;
const C_GRAD: usize = 2;
const C_LAP: usize = 5;

impl ProbeField {
    pub fn new(params: ProbeParams, needle: &Needle, kind: ProbeKind) -> Self {
        Self::with_quadrature(params, needle, kind, LagQuadrature::shared())
    }

    pub fn with_quadrature(
        params: ProbeParams,
        needle: &Needle,
        kind: ProbeKind,
        quad: Arc<LagQuadrature>,
    ) -> Self {
        let trivial = needle.lipschitz_bound == 0.0 && params.rho_is_trivial();
        Self {
            params,
            needle: needle.clone(),
            kind,
            quad,
            trivial,
        }
    }

    /// Forward field; requires `η ≡ 0`.
    pub fn forward(params: ProbeParams, needle: &Needle) -> Result<Self> {
        if params.eta_mode != EtaMode::Zero {
            return Err(Error::Parameter("the forward probe requires eta_mode = Zero".into()));
        }
        Ok(Self::new(params, needle, ProbeKind::Forward))
    }

    /// Adjoint field; requires `η = μ·sgn(t−θ)`.
    pub fn adjoint(params: ProbeParams, needle: &Needle) -> Result<Self> {
        if params.eta_mode != EtaMode::MuSign {
            return Err(Error::Parameter("the adjoint probe requires eta_mode = MuSign".into()));
        }
        Ok(Self::new(params, needle, ProbeKind::Adjoint))
    }

    pub fn params(&self) -> &ProbeParams {
        &self.params
    }

    pub fn needle(&self) -> &Needle {
        &self.needle
    }

    pub fn kind(&self) -> ProbeKind {
        self.kind
    }

    pub fn ln_time_factor(&self, t: f64) -> f64 {
        let tt = self.params.tau * self.params.tau * t;
        match self.kind {
            ProbeKind::Forward => tt,
            ProbeKind::Adjoint => -tt,
        }
    }

    /// Pole position and lag direction.
    fn lag_point(&self, t: f64, s: f64) -> (Vec3, f64) {
        match self.kind {
            ProbeKind::Forward => (self.needle.at(t - s), self.params.rho(t - s)),
            ProbeKind::Adjoint => (self.needle.at(t + s), self.params.rho(t + s)),
        }
    }

    /// Lags at which the integrand has a kink.
    fn kink_lags(&self, t: f64) -> Vec<f64> {
        let mut lags: Vec<f64> = self
            .needle
            .kink_times()
            .iter()
            .map(|&tk| match self.kind {
                ProbeKind::Forward => t - tk,
                ProbeKind::Adjoint => tk - t,
            })
            .filter(|&s| s > 0.0)
            .collect();
        if self.params.eta_mode == EtaMode::MuSign && self.params.mu > 0.0 {
            let s = match self.kind {
                ProbeKind::Forward => t - self.params.theta,
                ProbeKind::Adjoint => self.params.theta - t,
            };
            if s > 0.0 {
                lags.push(s);
            }
        }
        lags
    }

    fn lag_factor(&self, t: f64, x: &Vec3, y0: &Vec3, rho0: f64, s: f64) -> f64 {
        let (z, rho_s) = self.lag_point(t, s);
        let dy = z - y0;
        let drho = match self.kind {
            ProbeKind::Forward => rho_s - rho0,
            ProbeKind::Adjoint => -(rho_s - rho0),
        };
        (self.params.tau * drho + dy.dot(&(2.0 * x - z - y0)) / (4.0 * s)).exp()
    }

    /// `g(s)` and the per-lag integrands for `∇u/p` and `Δu/p`.
    ///
    /// Returns `(g, ∇-integrand, Δ-integrand)`.
    fn lag_terms(&self, t: f64, x: &Vec3, y0: &Vec3, rho0: f64, s: f64) -> (f64, Vec3, f64) {
        let (z, rho_s) = self.lag_point(t, s);
        let dy = z - y0;
        let drho = match self.kind {
            ProbeKind::Forward => rho_s - rho0,
            ProbeKind::Adjoint => -(rho_s - rho0),
        };
        let expo = self.params.tau * drho + dy.dot(&(2.0 * x - z - y0)) / (4.0 * s);
        let g = expo.exp();
        let xz = x - z;
        let grad = xz * (-g / (2.0 * s));
        let lap = g * (xz.norm_squared() / (4.0 * s * s) - 1.5 / s);
        (g, grad, lap)
    }

    /// All integrand components at `α`, relative to the weight `α^{−1/2}e^{−α}`.
    fn integrand(&self, t: f64, x: &Vec3, y0: &Vec3, rho0: f64, r: f64, alpha: f64) -> [f64; NCOMP] {
        let tau = self.params.tau;
        let tr = tau * r;
        let b = alpha / tr;
        let sh = (b * (b + 2.0)).sqrt();
        let ea = 1.0 + b + sh;
        let s_hi = r / (2.0 * tau) * ea;
        let s_lo = r / (2.0 * tau) / ea;
        let (g1, gr1, l1) = self.lag_terms(t, x, y0, rho0, s_hi);
        let (g2, gr2, l2) = self.lag_terms(t, x, y0, rho0, s_lo);
        let sa = alpha.sqrt();
        let half = ea.sqrt();
        // √α / (√(2πτr) sinh a)
        let pref = if alpha > 0.0 {
            sa / ((2.0 * PI * tr).sqrt() * sh)
        } else {
            0.5 / PI.sqrt()
        };
        let w1 = pref / half;
        let w2 = pref * half;
        let plus = (g1 + g2) / (2.0 * PI.sqrt());
        let minus = sa * (g2 - g1) / (2.0 * (2.0 * PI).sqrt() * (tr + 0.5 * alpha).sqrt());
        let grad = gr1 * w1 + gr2 * w2;
        let lap = l1 * w1 + l2 * w2;
        [plus, minus, grad[0], grad[1], grad[2], lap]
    }

    /// `plus` and `minus` only, for value-only evaluation.
    fn integrand_value(&self, t: f64, x: &Vec3, y0: &Vec3, rho0: f64, r: f64, alpha: f64) -> [f64; 2] {
        let tr = self.params.tau * r;
        let b = alpha / tr;
        let sh = (b * (b + 2.0)).sqrt();
        let ea = 1.0 + b + sh;
        let s_hi = r / (2.0 * self.params.tau) * ea;
        let s_lo = r / (2.0 * self.params.tau) / ea;
        let g1 = self.lag_factor(t, x, y0, rho0, s_hi);
        let g2 = self.lag_factor(t, x, y0, rho0, s_lo);
        let sa = alpha.sqrt();
        [
            (g1 + g2) / (2.0 * PI.sqrt()),
            sa * (g2 - g1) / (2.0 * (2.0 * PI).sqrt() * (tr + 0.5 * alpha).sqrt()),
        ]
    }

    fn accumulate<const K: usize>(acc: &mut [f64; K], f: &[f64; K], w: f64) {
        for (a, v) in acc.iter_mut().zip(f) {
            *a += w * v;
        }
    }

    /// Raw integrals of all components; returns `(integrals, tail estimate)`.
    fn integrate<const K: usize>(&self, t: f64, r: f64, f: impl Fn(f64) -> [f64; K]) -> ([f64; K], f64) {
        let tau = self.params.tau;
        let tr = tau * r;
        let amax = self.quad.alpha_max();
        let mut breaks: Vec<f64> = self
            .kink_lags(t)
            .into_iter()
            .map(|s| {
                let q = 2.0 * tau * s / r;
                tr * (q - 1.0).powi(2) / (2.0 * q)
            })
            .filter(|&a| a > 0.0 && a < amax)
            .collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut acc = [0.0; K];
        if breaks.is_empty() {
            for (&a, &w) in self.quad.smooth.nodes().iter().zip(self.quad.smooth.weights()) {
                Self::accumulate(&mut acc, &f(a), w);
            }
        } else {
            let tail_from = breaks.last().copied().unwrap_or(0.0).max(self.quad.tail_start);
            let mut edges: Vec<f64> = std::iter::once(0.0)
                .chain(breaks.iter().map(|a| a.sqrt()))
                .collect();
            edges.push(tail_from.sqrt());
            edges.dedup();
            for w in edges.windows(2) {
                let (b0, b1) = (w[0], w[1]);
                if b1 <= b0 {
                    continue;
                }
                let pieces = ((b1 - b0) / self.quad.panel_width).ceil().max(1.0) as usize;
                let h = (b1 - b0) / pieces as f64;
                for k in 0..pieces {
                    let lo = b0 + k as f64 * h;
                    for (beta, wt) in self.quad.panel.mapped(lo, lo + h) {
                        let a = beta * beta;
                        Self::accumulate(&mut acc, &f(a), 2.0 * wt * (-a).exp());
                    }
                }
            }
            let scale = (-tail_from).exp();
            for (&u, &w) in self.quad.tail.nodes().iter().zip(self.quad.tail.weights()) {
                let a = tail_from + u;
                Self::accumulate(&mut acc, &f(a), scale * w / a.sqrt());
            }
        }
        let fm = f(amax);
        let tail = (fm[C_PLUS].abs() + fm[C_MINUS].abs()) * (-amax).exp() / amax.sqrt();
        (acc, tail)
    }

    /// Correction factor `φ` (or `φ*`) with its split and gradient.
    pub fn phi(&self, t: f64, x: &Vec3) -> Result<PhiValue> {
        Ok(self.evaluate(t, x)?.phi)
    }

    /// Full evaluation: `φ·p`, its gradient and Laplacian.
    pub fn evaluate(&self, t: f64, x: &Vec3) -> Result<FieldValue> {
        let y0 = self.needle.at(t);
        let (p, gp) = p_yukawa(self.params.tau, &y0, x)?;
        let r = (x - y0).norm();
        let tau = self.params.tau;
        let ln_tf = self.ln_time_factor(t);
        if self.trivial {
            return Ok(FieldValue {
                value: p,
                gradient: gp,
                laplacian: tau * tau * p,
                ln_time_factor: ln_tf,
                phi: PhiValue {
                    phi: 1.0,
                    plus: 1.0,
                    minus: 0.0,
                    grad: Vec3::zeros(),
                    tail_estimate: 0.0,
                },
            });
        }
        let rho0 = self.params.rho(t);
        let (acc, tail) = self.integrate(t, r, |a| self.integrand(t, x, &y0, rho0, r, a));
        let plus = acc[C_PLUS];
        let minus = acc[C_MINUS];
        let phi = plus + minus;
        if !phi.is_finite() || tail > self.quad.tail_tol * phi.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Quadrature {
                detail: format!(
                    "lag integral at t = {t}, r = {r:e}: phi = {phi:e}, tail estimate {tail:e}"
                ),
            });
        }
        let grad_u_over_p = Vec3::new(acc[C_GRAD], acc[C_GRAD + 1], acc[C_GRAD + 2]);
        let d = x - y0;
        // ∇φ = ∇u/p − φ∇p/p with ∇p/p = −(τr+1)(x−y)/r²
        let grad_phi = grad_u_over_p + d * (phi * (tau * r + 1.0) / (r * r));
        Ok(FieldValue {
            value: phi * p,
            gradient: grad_u_over_p * p,
            laplacian: acc[C_LAP] * p,
            ln_time_factor: ln_tf,
            phi: PhiValue {
                phi,
                plus,
                minus,
                grad: grad_phi,
                tail_estimate: tail,
            },
        })
    }

    /// Spatial part `φ·p` only.
    pub fn value(&self, t: f64, x: &Vec3) -> Result<f64> {
        let y0 = self.needle.at(t);
        let (p, _) = p_yukawa(self.params.tau, &y0, x)?;
        if self.trivial {
            return Ok(p);
        }
        let r = (x - y0).norm();
        let rho0 = self.params.rho(t);
        let (acc, tail) = self.integrate(t, r, |a| self.integrand_value(t, x, &y0, rho0, r, a));
        let phi = acc[0] + acc[1];
        if !phi.is_finite() || tail > self.quad.tail_tol * phi.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Quadrature {
                detail: format!("lag integral at t = {t}, r = {r:e}: phi = {phi:e}, tail estimate {tail:e}"),
            });
        }
        Ok(phi * p)
    }

    /// Evaluates a batch of `(t, x)` points in parallel; results keep input order.
    pub fn evaluate_batch(&self, points: &[(f64, Vec3)]) -> Vec<Result<FieldValue>> {
        points.par_iter().map(|(t, x)| self.evaluate(*t, x)).collect()
    }
}

/// Forward correction factor `φ` at `(t, x)`.
pub fn phi_correction(params: &ProbeParams, needle: &Needle, t: f64, x: &Vec3) -> Result<PhiValue> {
    ProbeField::new(*params, needle, ProbeKind::Forward).phi(t, x)
}

/// Forward probe `U_τ`: spatial part `φ·p`, gradient, and `ln e^{τ²t}`.
pub fn probe_u(params: &ProbeParams, needle: &Needle, t: f64, x: &Vec3) -> Result<FieldValue> {
    ProbeField::forward(*params, needle)?.evaluate(t, x)
}

/// Adjoint probe `U*_τ`: spatial part `φ*·p`, gradient, and `ln e^{−τ²t}`.
pub fn probe_ustar(params: &ProbeParams, needle: &Needle, t: f64, x: &Vec3) -> Result<FieldValue> {
    ProbeField::adjoint(*params, needle)?.evaluate(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_split;
    use crate::scenario::{Extension, PiecewiseLinear};

    fn moving_needle() -> Needle {
        Needle::from_points(
            vec![-1.0, 0.0, 0.3, 0.7, 2.0],
            vec![
                Vec3::new(-0.6, 0.5, 0.5),
                Vec3::new(-0.1, 0.5, 0.5),
                Vec3::new(0.2, 0.6, 0.5),
                Vec3::new(0.35, 0.45, 0.55),
                Vec3::new(0.35, 0.45, 0.55),
            ],
            1.0,
            Extension::Clamp,
        )
        .unwrap()
    }

    fn params(tau: f64, mu: f64, mode: EtaMode) -> ProbeParams {
        ProbeParams::new(tau, mu, 0.5, 1.0, mode).unwrap()
    }

    #[test]
    fn yukawa_values() {
        let (v, _) = p_yukawa(0.0, &Vec3::zeros(), &Vec3::x()).unwrap();
        assert!((v - 1.0 / (4.0 * PI)).abs() < 1e-15);
        let (v, _) = p_yukawa(1.0, &Vec3::zeros(), &Vec3::x()).unwrap();
        assert!((v - 0.029_274_9).abs() < 1e-7);
        assert!(matches!(p_yukawa(1.0, &Vec3::x(), &Vec3::x()), Err(Error::Pole { .. })));
    }

    #[test]
    fn yukawa_satisfies_screened_poisson() {
        let tau = 5.0;
        let y = Vec3::zeros();
        let x = Vec3::new(0.3, 0.0, 0.0);
        let h = 1e-3;
        let p = |x: Vec3| p_yukawa(tau, &y, &x).unwrap().0;
        let mut lap = -6.0 * p(x);
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = h;
            lap += p(x + e) + p(x - e);
        }
        lap /= h * h;
        let res = (-lap + tau * tau * p(x)).abs() / (tau * tau * p(x));
        assert!(res < 1e-4, "{res}");
    }

    #[test]
    fn kappa_and_rho() {
        let p = ProbeParams::new(10.0, 1.0, 0.4, 1.0, EtaMode::MuSign).unwrap();
        assert_eq!(p.kappa(0.4), 1.0);
        assert!((p.kappa(0.5) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(p.rho(0.0), 0.0);
        assert!((p.rho(0.8)).abs() < 1e-15);
        assert!((p.rho(0.4) + 0.4).abs() < 1e-15);
        assert_eq!(p.with_mode(EtaMode::Zero).rho(0.3), 0.0);
    }

    #[test]
    fn static_needle_gives_unit_factor() {
        let needle = Needle::fixed(Vec3::new(-0.2, 0.5, 0.5));
        let x = Vec3::new(0.3, 0.4, 0.6);
        let f = probe_u(&params(12.0, 3.0, EtaMode::Zero), &needle, 0.3, &x).unwrap();
        let (p, gp) = p_yukawa(12.0, &needle.at(0.3), &x).unwrap();
        assert_eq!(f.value, p);
        assert_eq!(f.gradient, gp);
        assert!((f.ln_time_factor - 144.0 * 0.3).abs() < 1e-12);
        let a = probe_ustar(&params(12.0, 0.0, EtaMode::MuSign), &needle, 0.3, &x).unwrap();
        assert_eq!(a.value, p);
    }

    #[test]
    fn quadrature_reproduces_kernel_moments() {
        // A needle that is static on the lag range but not globally, so the
        // quadrature path is exercised while g ≡ 1.
        let needle = Needle::new(
            PiecewiseLinear::new(
                vec![1.5, 2.0],
                vec![Vec3::new(-0.2, 0.5, 0.5), Vec3::new(-0.3, 0.5, 0.5)],
            )
            .unwrap(),
        );
        let pr = params(10.0, 2.0, EtaMode::Zero);
        let field = ProbeField::forward(pr, &needle).unwrap();
        let x = Vec3::new(0.2, 0.6, 0.45);
        let f = field.evaluate(0.5, &x).unwrap();
        let (p, gp) = p_yukawa(10.0, &needle.at(0.5), &x).unwrap();
        assert!((f.phi.phi - 1.0).abs() < 1e-12, "{}", f.phi.phi);
        assert!(f.phi.minus.abs() < 1e-12);
        assert!((f.gradient - gp).norm() < 1e-11 * gp.norm());
        assert!((f.laplacian - 100.0 * p).abs() < 1e-10 * 100.0 * p);
    }

    /// Direct adaptive integration of the un-substituted lag integral.
    fn phi_oracle(field: &ProbeField, t: f64, x: &Vec3) -> f64 {
        let tau = field.params.tau;
        let y0 = field.needle.at(t);
        let r = (x - y0).norm();
        let rho0 = field.params.rho(t);
        let kernel = |s: f64| (-tau * tau * s - r * r / (4.0 * s)).exp() * s.powf(-1.5);
        let s_peak = r / (2.0 * tau);
        let mut breaks = vec![0.0, s_peak * 0.1, s_peak, s_peak * 10.0, 5.0];
        breaks.extend(field.kink_lags(t).into_iter().filter(|&s| s < 5.0));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let num = adaptive_split(
            |s| if s <= 0.0 { 0.0 } else { kernel(s) * field.lag_terms(t, x, &y0, rho0, s).0 },
            &breaks,
            0.0,
            1e-12,
            20_000,
        );
        let den = 2.0 * PI.sqrt() * (-tau * r).exp() / r;
        num.value / den
    }

    #[test]
    fn factor_matches_direct_lag_integral() {
        let needle = moving_needle();
        for (mode, kind, mu) in [
            (EtaMode::Zero, ProbeKind::Forward, 2.0),
            (EtaMode::MuSign, ProbeKind::Adjoint, 5.0),
        ] {
            let field = ProbeField::new(params(20.0, mu, mode), &needle, kind);
            for (t, x) in [
                (0.5, Vec3::new(0.5, 0.5, 0.5)),
                (0.2, Vec3::new(0.4, 0.7, 0.3)),
                (0.8, Vec3::new(0.6, 0.45, 0.5)),
            ] {
                let phi = field.phi(t, &x).unwrap().phi;
                let oracle = phi_oracle(&field, t, &x);
                assert!((phi - oracle).abs() < 1e-6 * oracle.abs(), "{kind:?} t={t}: {phi} vs {oracle}");
            }
        }
    }

    #[test]
    fn doubling_nodes_is_stable() {
        let needle = moving_needle();
        let pr = params(20.0, 5.0, EtaMode::MuSign);
        let q = LagQuadrature::shared();
        let a = ProbeField::with_quadrature(pr, &needle, ProbeKind::Adjoint, q.clone());
        let b = ProbeField::with_quadrature(pr, &needle, ProbeKind::Adjoint, Arc::new(q.doubled()));
        for (t, x) in [(0.3, Vec3::new(0.5, 0.5, 0.5)), (0.6, Vec3::new(0.9, 0.1, 0.2))] {
            let pa = a.phi(t, &x).unwrap().phi;
            let pb = b.phi(t, &x).unwrap().phi;
            assert!((pa - pb).abs() < 1e-8 * pb.abs(), "{pa} vs {pb}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let needle = moving_needle();
        let field = ProbeField::forward(params(10.0, 2.0, EtaMode::Zero), &needle).unwrap();
        let x = Vec3::new(0.55, 0.4, 0.6);
        let t = 0.45;
        let f = field.evaluate(t, &x).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = h;
            let up = field.evaluate(t, &(x + e)).unwrap();
            let dn = field.evaluate(t, &(x - e)).unwrap();
            let fd = (up.value - dn.value) / (2.0 * h);
            assert!((fd - f.gradient[i]).abs() < 1e-6 * f.gradient.norm(), "u_{i}");
            let fdphi = (up.phi.phi - dn.phi.phi) / (2.0 * h);
            assert!((fdphi - f.phi.grad[i]).abs() < 1e-5 * (1.0 + f.phi.grad.norm()), "phi_{i}");
        }
    }

    #[test]
    fn pole_is_rejected() {
        let needle = moving_needle();
        let y = needle.at(0.4);
        assert!(matches!(
            probe_u(&params(10.0, 2.0, EtaMode::Zero), &needle, 0.4, &y),
            Err(Error::Pole { .. })
        ));
        assert!(probe_u(&params(10.0, 2.0, EtaMode::MuSign), &needle, 0.4, &Vec3::zeros()).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(ProbeParams::new(10.0, 10.0, 0.5, 1.0, EtaMode::Zero).is_err());
        assert!(ProbeParams::new(10.0, 1.0, 1.0, 1.0, EtaMode::Zero).is_err());
        assert!(ProbeParams::new(-1.0, 0.0, 0.5, 1.0, EtaMode::Zero).is_err());
    }

    #[test]
    fn value_path_matches_full_evaluation() {
        let needle = Needle::new(
            crate::scenario::PiecewiseLinear::new(
                vec![0.0, 0.3, 0.6],
                vec![Vec3::new(-0.2, 0.4, 0.5), Vec3::new(0.1, 0.5, 0.5), Vec3::new(0.2, 0.7, 0.4)],
            )
            .unwrap(),
        );
        let params = ProbeParams::new(10.0, 2.0, 0.4, 1.0, EtaMode::MuSign).unwrap();
        for field in [ProbeField::forward(params.with_mode(EtaMode::Zero), &needle).unwrap(), ProbeField::adjoint(params, &needle).unwrap()] {
            for (t, x) in [(0.2, Vec3::new(0.5, 0.5, 0.5)), (0.45, Vec3::new(0.3, 0.2, 0.6)), (0.7, Vec3::new(0.0, 0.5, 0.5))] {
                let full = field.evaluate(t, &x).unwrap().value;
                let v = field.value(t, &x).unwrap();
                assert!((v - full).abs() <= 1e-13 * full.abs(), "{v} vs {full}");
            }
        }
    }
}
