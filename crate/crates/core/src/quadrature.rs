//! Quadrature building blocks: Gauss rules from the Golub-Welsch eigenproblem and
//! an adaptive Gauss-Kronrod integrator.

use nalgebra::DMatrix;

/// Generalized Gauss-Laguerre rule for `∫₀^∞ f(α) α^a e^{-α} dα`.
///
/// Nodes beyond `alpha_max` are dropped; their combined weight is below
/// `e^{-alpha_max}` times a polynomial factor and never matters at the
/// accuracy the probe integrals need.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    exponent: f64,
    node_count: usize,
    alpha_max: f64,
}

impl QuadratureRule {
    pub const DEFAULT_NODES: usize = 64;
    pub const DEFAULT_ALPHA_MAX: f64 = 60.0;

    /// Standard Laguerre rule (`a = 0`), weight `e^{-α}`.
    pub fn laguerre(node_count: usize) -> Self {
        Self::generalized(node_count, 0.0, Self::DEFAULT_ALPHA_MAX)
    }

    /// Generalized rule with weight `α^exponent e^{-α}`, `exponent > -1`.
    pub fn generalized(node_count: usize, exponent: f64, alpha_max: f64) -> Self {
        assert!(node_count >= 1, "quadrature rule needs at least one node");
        assert!(exponent > -1.0, "Laguerre exponent must exceed -1");
        let diag: Vec<f64> = (0..node_count)
            .map(|i| 2.0 * i as f64 + exponent + 1.0)
            .collect();
        let off: Vec<f64> = (1..node_count)
            .map(|i| (i as f64 * (i as f64 + exponent)).sqrt())
            .collect();
        let (nodes, first) = golub_welsch(&diag, &off);
        let scale = gamma(exponent + 1.0);
        let mut pairs: Vec<(f64, f64)> = nodes
            .into_iter()
            .zip(first)
            .map(|(x, v)| (x, v * v * scale))
            .filter(|&(x, _)| x <= alpha_max)
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Self {
            nodes,
            weights,
            exponent,
            node_count,
            alpha_max,
        }
    }

    /// The same family with twice the nodes; used for accuracy checks.
    pub fn doubled(&self) -> Self {
        Self::generalized(2 * self.node_count, self.exponent, self.alpha_max)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(node_count: usize) -> Self {
        assert!(node_count >= 1);
        let diag = vec![0.0; node_count];
        let off: Vec<f64> = (1..node_count)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        let (nodes, first) = golub_welsch(&diag, &off);
        let mut pairs: Vec<(f64, f64)> = nodes
            .into_iter()
            .zip(first)
            .map(|(x, v)| (x, 2.0 * v * v))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // symmetrize to kill eigen-solver asymmetry
        let n = pairs.len();
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (pairs[j].0 - pairs[i].0);
            let w = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-x, w);
            pairs[j] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let (nodes, weights) = pairs.into_iter().unzip();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Eigenvalues and first eigenvector components of a symmetric tridiagonal matrix.
fn golub_welsch(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag[i];
    }
    for (i, &b) in off.iter().enumerate() {
        m[(i, i + 1)] = b;
        m[(i + 1, i)] = b;
    }
    let eigen = m.symmetric_eigen();
    let values = eigen.eigenvalues.iter().copied().collect();
    let first = (0..n).map(|j| eigen.eigenvectors[(0, j)]).collect();
    (values, first)
}

/// Lanczos approximation of the gamma function (g = 7, n = 9).
pub fn gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = COEF[0];
        let t = x + G + 0.5;
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel: returns (kronrod estimate, |kronrod - gauss|).
fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * GK_WK[7];
    let mut g = fc * GK_WG[3];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adaptive {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
}

/// Globally adaptive Gauss-Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Bisects the panel with the largest error estimate until the total error
/// is below `max(abs_tol, rel_tol·|I|)` or `max_panels` is reached.
pub fn adaptive(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Adaptive {
    if a == b {
        return Adaptive {
            value: 0.0,
            error: 0.0,
            panels: 0,
        };
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut panels = vec![(a, b, v, e)];
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) || panels.len() >= max_panels {
            return Adaptive {
                value: total,
                error: err,
                panels: panels.len(),
            };
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty panel list");
        let (pa, pb, _, _) = panels.swap_remove(idx);
        let mid = 0.5 * (pa + pb);
        let (v1, e1) = gk15(&mut f, pa, mid);
        let (v2, e2) = gk15(&mut f, mid, pb);
        panels.push((pa, mid, v1, e1));
        panels.push((mid, pb, v2, e2));
    }
}

/// Adaptive integration over consecutive breakpoints (kinks of the integrand).
pub fn adaptive_split(
    mut f: impl FnMut(f64) -> f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Adaptive {
    let mut out = Adaptive {
        value: 0.0,
        error: 0.0,
        panels: 0,
    };
    let pieces = breaks.len().saturating_sub(1).max(1);
    for w in breaks.windows(2) {
        let r = adaptive(&mut f, w[0], w[1], abs_tol / pieces as f64, rel_tol, max_panels);
        out.value += r.value;
        out.error += r.error;
        out.panels += r.panels;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn laguerre_weights_sum_to_one() {
        let rule = QuadratureRule::laguerre(64);
        let s: f64 = rule.weights().iter().sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        assert!(rule.weights().iter().all(|&w| w > 0.0));
        assert!(rule.nodes().iter().all(|&x| x <= 60.0));
    }

    #[test]
    fn half_exponent_rule_integrates_gamma() {
        let rule = QuadratureRule::generalized(64, -0.5, 60.0);
        let s: f64 = rule.weights().iter().sum();
        assert_abs_diff_eq!(s, std::f64::consts::PI.sqrt(), epsilon = 1e-12);
        // ∫ α^{-1/2} α^2 e^{-α} = Γ(5/2)
        let v = rule.integrate(|x| x * x);
        assert_abs_diff_eq!(v, 0.75 * std::f64::consts::PI.sqrt(), epsilon = 1e-11);
    }

    #[test]
    fn laguerre_reproduces_factorials() {
        let rule = QuadratureRule::laguerre(32);
        assert_abs_diff_eq!(rule.integrate(|x| x.powi(5)), 120.0, epsilon = 1e-9);
    }

    #[test]
    fn legendre_exact_on_polynomials() {
        let gl = GaussLegendre::new(8);
        assert_abs_diff_eq!(gl.integrate(0.0, 2.0, |x| x.powi(15)), 2f64.powi(16) / 16.0, epsilon = 1e-9);
        assert_abs_diff_eq!(gl.integrate(-1.0, 1.0, |_| 1.0), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn gamma_matches_known_values() {
        assert_abs_diff_eq!(gamma(0.5), std::f64::consts::PI.sqrt(), epsilon = 1e-13);
        assert_abs_diff_eq!(gamma(5.0), 24.0, epsilon = 1e-11);
        assert_abs_diff_eq!(gamma(1.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn adaptive_handles_kinks_and_peaks() {
        let r = adaptive(|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1e-13, 1e-13, 200);
        assert_abs_diff_eq!(r.value, 0.5 * (0.09 + 0.49), epsilon = 1e-11);
        let r = adaptive(|x: f64| (-400.0 * x * x).exp(), -1.0, 1.0, 1e-14, 1e-12, 200);
        assert_abs_diff_eq!(r.value, (std::f64::consts::PI / 400.0).sqrt(), epsilon = 1e-12);
    }
}
