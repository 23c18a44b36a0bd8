//! Probabilist Hermite polynomials, Gaussian quadrature against the standard
//! normal measure, and the truncated-expansion surrogate activation
//!
//! ```text
//! σ̂_r(x) = Σ_{i≤r} (c_i / i!) He_i(x) + c_r* z,   z ~ N(0, 1),
//! ```
//!
//! with `c_i = E[σ(x) He_i(x)]` and `c_r*` chosen so that `E[σ̂_r²] = E[σ²]`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};

/// Radicands in `[-RESIDUAL_SLACK, 0)` are clamped to zero.
pub const RESIDUAL_SLACK: f64 = 1e-9;

/// Relative radicand below which the residual is reported as exactly zero.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

/// Extra quadrature nodes required beyond the expansion degree.
pub const QUADRATURE_HEADROOM: usize = 40;

/// `He_i(x)` by the three-term recurrence `He_{i+1} = x He_i − i He_{i−1}`.
pub fn hermite_eval(i: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if i == 0 {
        return prev;
    }
    for j in 1..i {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Fills `out[i] = He_i(x)` for `i < out.len()`.
pub fn hermite_values(x: f64, out: &mut [f64]) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = cur;
        let next = x * cur - i as f64 * prev;
        prev = cur;
        cur = next;
    }
}

pub fn factorial(i: usize) -> f64 {
    (1..=i).map(|k| k as f64).product()
}

/// Nodes and weights for integrals `E[f(x)]`, `x ~ N(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub const MEASURE: &'static str = "standard_normal";

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Composite Gauss–Legendre rule on `[-half_width, half_width]` with the
    /// normal density folded into the weights. Zero is always a panel edge, so
    /// integrands with a kink at the origin (relu) converge spectrally on each
    /// side instead of algebraically as with a global Gauss–Hermite rule.
    pub fn normal_panels(half_width: f64, panels_per_side: usize, order: usize) -> Result<Self> {
        if half_width.is_nan() || half_width <= 0.0 || panels_per_side == 0 || order == 0 {
            return Err(Error::InvalidArgument {
                what: "panel rule",
                reason: "half width, panel count and order must be positive",
            });
        }
        let (gl_nodes, gl_weights) = gauss_legendre(order);
        let width = half_width / panels_per_side as f64;
        let norm = 1.0 / libm::sqrt(2.0 * PI);
        let total = 2 * panels_per_side * order;
        let mut nodes = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for panel in 0..2 * panels_per_side {
            let lo = -half_width + panel as f64 * width;
            let mid = lo + 0.5 * width;
            for (&t, &w) in gl_nodes.iter().zip(&gl_weights) {
                let x = mid + 0.5 * width * t;
                nodes.push(x);
                weights.push(0.5 * width * w * norm * libm::exp(-0.5 * x * x));
            }
        }
        Ok(Self { nodes, weights })
    }

    /// Default rule for Hermite coefficients: 16-point panels of width 0.5 on
    /// `[-14, 14]` (896 nodes). The truncated tail mass is below 1e-43.
    pub fn default_for_coefficients() -> Self {
        Self::normal_panels(14.0, 28, 16).expect("static panel parameters are valid")
    }
}

/// Gauss–Legendre nodes (ascending) and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = libm::cos(PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut pp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Q-point Gauss–Hermite rule for the standard normal measure.
///
/// Nodes are the eigenvalues of the Jacobi matrix of the probabilists'
/// Hermite recurrence (zero diagonal, off-diagonal `√k`), located one by one
/// with Sturm-sequence bisection. Weights follow from the Christoffel
/// function `w = 1 / Σ_k q_k(x)²` of the orthonormal polynomials
/// `q_k = He_k / √k!`.
pub fn gauss_hermite_rule(q: usize) -> Result<QuadratureRule> {
    if q == 0 {
        return Err(Error::InvalidArgument {
            what: "quadrature size",
            reason: "must be at least 1",
        });
    }
    let off_sq: Vec<f64> = (1..q).map(|k| k as f64).collect();
    let bound = 2.0 * libm::sqrt(q as f64) + 1.0;
    let mut nodes: Vec<f64> = (0..q).map(|i| jacobi_eigenvalue(&off_sq, i, bound)).collect();
    for i in 0..q / 2 {
        let a = 0.5 * (nodes[q - 1 - i] - nodes[i]);
        nodes[i] = -a;
        nodes[q - 1 - i] = a;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }
    let weights = nodes.iter().map(|&x| christoffel_weight(x, q)).collect();
    Ok(QuadratureRule { nodes, weights })
}

/// Number of eigenvalues below `x` of the zero-diagonal symmetric tridiagonal
/// matrix with squared off-diagonals `off_sq`.
fn sturm_count(off_sq: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = -x;
    if q < 0.0 {
        count += 1;
    }
    for &e2 in off_sq {
        let prev = if q == 0.0 { f64::EPSILON } else { q };
        q = -x - e2 / prev;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `index`-th smallest eigenvalue, by bisection on `[-bound, bound]`.
fn jacobi_eigenvalue(off_sq: &[f64], index: usize, bound: f64) -> f64 {
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if sturm_count(off_sq, mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn christoffel_weight(x: f64, q: usize) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut sum = 1.0;
    for k in 0..q - 1 {
        let kf = k as f64;
        let next = (x * cur - libm::sqrt(kf) * prev) / libm::sqrt(kf + 1.0);
        prev = cur;
        cur = next;
        sum += cur * cur;
    }
    1.0 / sum
}

/// `c_i = E[σ(x) He_i(x)]` for `i = 0..=r`.
pub fn hermite_coefficients(sigma: impl Fn(f64) -> f64, r: usize, rule: &QuadratureRule) -> Result<Vec<f64>> {
    let required = r + QUADRATURE_HEADROOM;
    if rule.len() < required {
        return Err(Error::InsufficientQuadrature {
            nodes: rule.len(),
            degree: r,
            required,
        });
    }
    let mut coeffs = vec![0.0; r + 1];
    let mut he = vec![0.0; r + 1];
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let s = w * sigma(x);
        hermite_values(x, &mut he);
        for (c, h) in coeffs.iter_mut().zip(&he) {
            *c += s * h;
        }
    }
    Ok(coeffs)
}

pub fn second_moment(sigma: impl Fn(f64) -> f64, rule: &QuadratureRule) -> f64 {
    rule.expect(|x| {
        let s = sigma(x);
        s * s
    })
}

/// `c_i² / i!` for each coefficient.
pub fn parseval_terms(coeffs: &[f64]) -> Vec<f64> {
    let mut fact = 1.0;
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i > 0 {
                fact *= i as f64;
            }
            c * c / fact
        })
        .collect()
}

/// `√(E[σ²] − Σ c_i²/i!)`, the weight of the independent Gaussian residual.
pub fn residual_coefficient(coeffs: &[f64], second_moment: f64) -> Result<f64> {
    let energy: f64 = parseval_terms(coeffs).iter().sum();
    let radicand = second_moment - energy;
    if radicand < -RESIDUAL_SLACK {
        return Err(Error::ResidualInconsistent { excess: -radicand });
    }
    // Quadrature roundoff on a fully captured σ leaves radicands of order
    // 1e-15; they would otherwise surface as a spurious ~1e-8 residual.
    if radicand <= ROUNDOFF_FLOOR * second_moment.max(1.0) {
        return Ok(0.0);
    }
    Ok(libm::sqrt(radicand))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermiteExpansion {
    pub degree_r: usize,
    pub coeffs: Vec<f64>,
    pub residual: f64,
    pub second_moment: f64,
}

impl HermiteExpansion {
    pub fn fit(sigma: impl Fn(f64) -> f64, r: usize, rule: &QuadratureRule) -> Result<Self> {
        let coeffs = hermite_coefficients(&sigma, r, rule)?;
        let second_moment = second_moment(&sigma, rule);
        let residual = residual_coefficient(&coeffs, second_moment)?;
        Ok(Self {
            degree_r: r,
            coeffs,
            residual,
            second_moment,
        })
    }

    /// Expansion of a named activation with the default coefficient rule.
    pub fn of(activation: Activation, r: usize) -> Result<Self> {
        Self::fit(
            |x| activation.apply(x),
            r,
            &QuadratureRule::default_for_coefficients(),
        )
    }

    /// The deterministic polynomial part `Σ (c_i/i!) He_i(x)`.
    #[inline]
    pub fn polynomial(&self, x: f64) -> f64 {
        let (mut prev, mut cur) = (0.0, 1.0);
        let mut fact = 1.0;
        let mut acc = 0.0;
        for (i, &c) in self.coeffs.iter().enumerate() {
            if i > 0 {
                fact *= i as f64;
            }
            acc += c / fact * cur;
            let next = x * cur - i as f64 * prev;
            prev = cur;
            cur = next;
        }
        acc
    }

    pub fn parseval_terms(&self) -> Vec<f64> {
        parseval_terms(&self.coeffs)
    }
}

/// `σ̂_r(x)` for a caller-supplied standard normal draw `z`.
#[inline]
pub fn surrogate_apply(exp: &HermiteExpansion, x: f64, z: f64) -> f64 {
    exp.polynomial(x) + exp.residual * z
}

#[cfg(test)]
mod tests {
    use super::*;

    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    #[test]
    fn small_polynomials() {
        assert_eq!(hermite_eval(2, 2.0), 3.0);
        assert_eq!(hermite_eval(3, 1.0), -2.0);
        assert_eq!(hermite_eval(4, 0.0), 3.0);
        assert_eq!(hermite_eval(0, 9.0), 1.0);
        assert_eq!(hermite_eval(1, 9.0), 9.0);
    }

    #[test]
    fn closed_forms_on_grid() {
        for k in 0..100 {
            let x = -5.0 + 0.1 * k as f64;
            let cases = [
                (2, x * x - 1.0),
                (3, x * x * x - 3.0 * x),
                (4, x * x * x * x - 6.0 * x * x + 3.0),
            ];
            for (i, want) in cases {
                let got = hermite_eval(i, x);
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "He_{i}({x})");
            }
            let mut all = [0.0; 5];
            hermite_values(x, &mut all);
            for (i, v) in all.iter().enumerate() {
                assert_eq!(*v, hermite_eval(i, x));
            }
        }
    }

    #[test]
    fn one_point_rule() {
        let r = gauss_hermite_rule(1).unwrap();
        assert_eq!(r.nodes.len(), 1);
        assert!(r.nodes[0].abs() < 1e-15);
        assert!((r.weights[0] - 1.0).abs() < 1e-15);
        assert!(gauss_hermite_rule(0).is_err());
    }

    #[test]
    fn low_order_moments_exact() {
        for q in [2usize, 3, 5, 10, 60, 200] {
            let r = gauss_hermite_rule(q).unwrap();
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12, "Q={q}");
            assert!((r.expect(|x| x * x) - 1.0).abs() < 1e-12, "Q={q}");
            if q >= 3 {
                assert!((r.expect(|x| x * x * x * x) - 3.0).abs() < 1e-12, "Q={q}");
            }
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn exact_through_degree_2q_minus_1() {
        // E[x^{2k}] = (2k−1)!!
        for q in 1..=6usize {
            let r = gauss_hermite_rule(q).unwrap();
            for deg in 0..2 * q {
                let got = r.expect(|x| libm::pow(x, deg as f64));
                let want = if deg % 2 == 1 {
                    0.0
                } else {
                    (1..deg).step_by(2).map(|k| k as f64).product()
                };
                assert!((got - want).abs() < 1e-11 * want.max(1.0), "Q={q} deg={deg}");
            }
        }
    }

    #[test]
    fn orthogonality_under_quadrature() {
        let r = gauss_hermite_rule(60).unwrap();
        for i in 0..=8 {
            for j in 0..=8 {
                let got = r.expect(|x| hermite_eval(i, x) * hermite_eval(j, x));
                let want = if i == j { factorial(i) } else { 0.0 };
                assert!((got - want).abs() < 1e-8, "({i},{j}) {got}");
            }
        }
    }

    #[test]
    fn panel_rule_normalized() {
        let r = QuadratureRule::default_for_coefficients();
        assert_eq!(r.len(), 896);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert!((r.expect(|x| x * x) - 1.0).abs() < 1e-13);
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(QuadratureRule::normal_panels(0.0, 2, 2).is_err());
    }

    #[test]
    fn identity_coefficients() {
        let rule = QuadratureRule::default_for_coefficients();
        let c = hermite_coefficients(|x| x, 6, &rule).unwrap();
        for (i, v) in c.iter().enumerate() {
            let want = if i == 1 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-10, "c{i}={v}");
        }
    }

    #[test]
    fn relu_coefficients_match_closed_forms() {
        let rule = QuadratureRule::default_for_coefficients();
        let c = hermite_coefficients(|x: f64| x.max(0.0), 4, &rule).unwrap();
        let want = [INV_SQRT_2PI, 0.5, INV_SQRT_2PI, 0.0, -INV_SQRT_2PI];
        for (got, want) in c.iter().zip(want) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn tanh_has_no_even_coefficients() {
        let rule = QuadratureRule::default_for_coefficients();
        let c = hermite_coefficients(libm::tanh, 4, &rule).unwrap();
        assert!(c[0].abs() < 1e-10 && c[2].abs() < 1e-10 && c[4].abs() < 1e-10);
        assert!(c[1] > 0.5);
    }

    #[test]
    fn too_small_rule_rejected() {
        let rule = gauss_hermite_rule(30).unwrap();
        assert!(matches!(
            hermite_coefficients(|x| x, 4, &rule),
            Err(Error::InsufficientQuadrature { required: 44, .. })
        ));
    }

    #[test]
    fn second_moments() {
        let rule = QuadratureRule::default_for_coefficients();
        assert!((second_moment(|x| x, &rule) - 1.0).abs() < 1e-12);
        assert!((second_moment(|x: f64| x.max(0.0), &rule) - 0.5).abs() < 1e-12);
        assert_eq!(second_moment(|_| 0.0, &rule), 0.0);
    }

    #[test]
    fn residuals() {
        let rule = QuadratureRule::default_for_coefficients();
        let he2 = HermiteExpansion::fit(|x| x * x - 1.0, 2, &rule).unwrap();
        assert!(he2.residual < 1e-6);

        let relu = HermiteExpansion::of(Activation::Relu, 4).unwrap();
        let closed = 0.5 - (1.0 / (2.0 * PI) + 0.25 + 1.0 / (4.0 * PI) + 1.0 / (48.0 * PI));
        assert!((relu.residual - libm::sqrt(closed)).abs() < 1e-9);
        assert!((relu.residual - 0.0681).abs() < 1e-3);

        let id0 = HermiteExpansion::of(Activation::Identity, 0).unwrap();
        assert!((id0.residual - 1.0).abs() < 1e-12);

        assert!(matches!(
            residual_coefficient(&[1.0, 1.0], 1.5),
            Err(Error::ResidualInconsistent { .. })
        ));
        assert_eq!(residual_coefficient(&[1.0], 1.0 - 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn surrogate_values() {
        let id = HermiteExpansion::of(Activation::Identity, 3).unwrap();
        assert!((surrogate_apply(&id, 1.7, 123.0) - 1.7).abs() < 1e-10);

        let relu = HermiteExpansion::of(Activation::Relu, 4).unwrap();
        let want = INV_SQRT_2PI - 0.5 * INV_SQRT_2PI - INV_SQRT_2PI / 24.0 * 3.0;
        assert!((surrogate_apply(&relu, 0.0, 0.0) - want).abs() < 1e-10);
        assert!((want - 0.1496).abs() < 1e-4);
    }

    #[test]
    fn parseval_monotone() {
        let rule = QuadratureRule::default_for_coefficients();
        for act in [Activation::Relu, Activation::Tanh, Activation::Identity] {
            let exp = HermiteExpansion::fit(|x| act.apply(x), 12, &rule).unwrap();
            let mut partial = 0.0;
            for t in exp.parseval_terms() {
                assert!(t >= 0.0);
                partial += t;
                assert!(partial <= exp.second_moment + 1e-9);
            }
        }
    }
}
