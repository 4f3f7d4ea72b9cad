//! Scalar numerical primitives shared by every likelihood in the crate.
//!
//! Densities are composed in log space. Quadrature rules are stored already
//! normalized to a probability measure (standard normal for Gauss–Hermite,
//! uniform on (0,1) for Gauss–Legendre), so an expectation is a plain weighted
//! sum over transformed nodes.

use std::f64::consts::{PI, SQRT_2};
use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;
use gauss_quad::legendre::GaussLegendre;

use crate::error::{HteError, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
pub const DEFAULT_QUADRATURE_ORDER: usize = 32;
pub const DEFAULT_LEGENDRE_ORDER: usize = 64;

/// Log terms are clamped here before summation (just above `ln(f64::MIN_POSITIVE)`).
pub const LOG_FLOOR: f64 = -745.0;

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Logistic link `1 / (1 + exp(-t))`.
pub fn logistic(t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(HteError::Domain(format!("logistic argument must be finite, got {t}")));
    }
    Ok(sigmoid(t))
}

/// Unchecked logistic for inner loops. Never overflows.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(t))`.
#[inline]
pub fn log_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

/// `ln(1 - sigmoid(t))`.
#[inline]
pub fn log1m_sigmoid(t: f64) -> f64 {
    log_sigmoid(-t)
}

#[inline]
pub(crate) fn normal_log_density(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

#[inline]
pub(crate) fn normal_density(z: f64) -> f64 {
    (-LN_SQRT_2PI - 0.5 * z * z).exp()
}

/// Standard normal cdf.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// `ln Φ(z)`, accurate in the far lower tail.
pub fn normal_log_cdf(z: f64) -> f64 {
    if z > -30.0 {
        normal_cdf(z).ln()
    } else {
        // Mills-ratio asymptotic expansion.
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -LN_SQRT_2PI - 0.5 * z2 - (-z).ln() + series.ln()
    }
}

/// `E[max(Y, 0)]` for `Y ~ Normal(mean, sd²)`.
pub fn censored_normal_mean(mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mean.max(0.0);
    }
    let a = mean / sd;
    mean * normal_cdf(a) + sd * normal_density(a)
}

/// Numerically stable `ln Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// Pairwise (tree) summation. The reduction order depends only on the length,
/// so results are bit-stable however the terms were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelEval {
    pub log_density: f64,
    pub cdf: f64,
}

/// Gumbel (maximum) law with location and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gumbel {
    location: f64,
    scale: f64,
}

impl Gumbel {
    pub fn new(location: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !location.is_finite() {
            return Err(HteError::Domain(format!(
                "Gumbel requires finite location and scale > 0, got ({location}, {scale})"
            )));
        }
        Ok(Self { location, scale })
    }

    /// Caller guarantees `scale > 0`.
    #[inline]
    pub(crate) fn new_unchecked(location: f64, scale: f64) -> Self {
        Self { location, scale }
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn log_density(&self, y: f64) -> f64 {
        let u = (y - self.location) / self.scale;
        -self.scale.ln() - u - (-u).exp()
    }

    #[inline]
    pub fn cdf(&self, y: f64) -> f64 {
        self.log_cdf(y).exp()
    }

    #[inline]
    pub fn log_cdf(&self, y: f64) -> f64 {
        let u = (y - self.location) / self.scale;
        -(-u).exp()
    }

    /// Inverse cdf; `p` in (0, 1).
    #[inline]
    pub fn quantile(&self, p: f64) -> f64 {
        self.location - self.scale * (-p.ln()).ln()
    }

    pub fn mean(&self) -> f64 {
        self.location + EULER_GAMMA * self.scale
    }

    pub fn variance(&self) -> f64 {
        PI * PI / 6.0 * self.scale * self.scale
    }

    pub fn eval(&self, y: f64) -> GumbelEval {
        GumbelEval {
            log_density: self.log_density(y),
            cdf: self.cdf(y),
        }
    }
}

/// Log-density and cdf of Gumbel(location, scale) at `y`.
pub fn gumbel_distribution(y: f64, location: f64, scale: f64) -> Result<GumbelEval> {
    Ok(Gumbel::new(location, scale)?.eval(y))
}

/// Gauss–Hermite rule normalized to the standard normal measure: nodes are
/// `√2·x_k` and weights `w_k/√π`, so `Σ w = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(HteError::Config(format!("quadrature order must be >= 2, got {order}")));
        }
        let rule = GaussHermite::new(NonZeroUsize::new(order).expect("order >= 2"));
        let mut nodes = Vec::with_capacity(order);
        let mut weights = Vec::with_capacity(order);
        for &(x, w) in rule.as_node_weight_pairs() {
            nodes.push(SQRT_2 * x);
            weights.push(w);
        }
        // Renormalize exactly rather than trusting Σw = √π to the last ulp.
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self { nodes, weights, log_weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Standard-normal nodes.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `E f(Y)` for `Y ~ Normal(mean, sd²)`.
    pub fn expectation<F: FnMut(f64) -> f64>(&self, mean: f64, sd: f64, mut f: F) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mean + sd * t))
            .collect();
        pairwise_sum(&terms)
    }

    /// `ln E exp(log_f(Y))` for `Y ~ Normal(mean, sd²)`, via log-sum-exp.
    pub fn log_expectation<F: FnMut(f64) -> f64>(&self, mean: f64, sd: f64, mut log_f: F) -> f64 {
        let mut buf = [0.0f64; 128];
        let n = self.nodes.len();
        if n <= buf.len() {
            for k in 0..n {
                buf[k] = self.log_weights[k] + log_f(mean + sd * self.nodes[k]);
            }
            log_sum_exp(&buf[..n])
        } else {
            let terms: Vec<f64> = (0..n)
                .map(|k| self.log_weights[k] + log_f(mean + sd * self.nodes[k]))
                .collect();
            log_sum_exp(&terms)
        }
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_hermite(DEFAULT_QUADRATURE_ORDER).expect("default order is valid")
    }
}

/// `∫ f(y) Normal(y; mean, sd²) dy` by a Gauss–Hermite rule of the given order.
pub fn gauss_hermite_expectation<F: FnMut(f64) -> f64>(
    f: F,
    mean: f64,
    sd: f64,
    order: usize,
) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(HteError::Domain(format!("sd must be positive, got {sd}")));
    }
    Ok(QuadratureRule::gauss_hermite(order)?.expectation(mean, sd, f))
}

/// Gauss–Legendre rule on (0, 1), used for integrals against a law through
/// its inverse cdf.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitIntervalRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl UnitIntervalRule {
    pub fn gauss_legendre(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(HteError::Config(format!("quadrature order must be >= 2, got {order}")));
        }
        let rule = GaussLegendre::new(NonZeroUsize::new(order).expect("order >= 2"));
        let (nodes, weights): (Vec<f64>, Vec<f64>) = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .unzip();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self { nodes, weights, log_weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&u, &w)| w * f(u)).sum()
    }
}

impl Default for UnitIntervalRule {
    fn default() -> Self {
        Self::gauss_legendre(DEFAULT_LEGENDRE_ORDER).expect("default order is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Uniform};

    #[test]
    fn logistic_examples() {
        assert_eq!(logistic(0.0).unwrap(), 0.5);
        // 1/(1+e^1.2) evaluated in high precision: 0.2314752165...
        assert_abs_diff_eq!(logistic(-1.2).unwrap(), 0.231_475_216_500_982_8, epsilon = 1e-12);
        for t in [-5.0, -1.0, 0.3, 8.0] {
            assert_abs_diff_eq!(logistic(t).unwrap() + logistic(-t).unwrap(), 1.0, epsilon = 1e-15);
        }
        assert!(logistic(f64::NAN).is_err());
        assert!(logistic(f64::INFINITY).is_err());
        let hi = logistic(700.0).unwrap();
        let lo = logistic(-700.0).unwrap();
        assert!(hi.is_finite() && lo.is_finite() && lo > 0.0 && hi <= 1.0);
    }

    #[test]
    fn logistic_monotone_on_grid() {
        let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.05).collect();
        for w in grid.windows(2) {
            assert!(sigmoid(w[0]) < sigmoid(w[1]), "{} {}", w[0], w[1]);
        }
    }

    #[test]
    fn log_sigmoid_matches_direct() {
        for t in [-30.0, -2.0, 0.0, 1.5, 30.0] {
            assert_abs_diff_eq!(log_sigmoid(t), sigmoid(t).ln(), epsilon = 1e-12);
            assert_abs_diff_eq!(log1m_sigmoid(t), (1.0 / (1.0 + t.exp())).ln(), epsilon = 1e-12);
        }
        // 1 - sigmoid(30) cancels; the closed form is -30 - ln(1 + e^-30).
        assert_abs_diff_eq!(log1m_sigmoid(30.0), -30.0 - (-30f64).exp().ln_1p(), epsilon = 1e-14);
        assert!(log_sigmoid(-800.0).is_finite());
    }

    #[test]
    fn gumbel_examples() {
        let g = gumbel_distribution(0.0, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(g.cdf, (-1.0f64).exp(), epsilon = 1e-15);
        let g = gumbel_distribution(2.5, 2.5, 3.0).unwrap();
        assert_abs_diff_eq!(g.cdf, 0.367_879_441_171_442_3, epsilon = 1e-12);
        assert!(gumbel_distribution(0.0, 0.0, 0.0).is_err());
        assert!(gumbel_distribution(0.0, 0.0, -1.0).is_err());
        let d = Gumbel::new(0.3, 1.7).unwrap();
        for y in [-2.0, 0.0, 3.0] {
            assert_abs_diff_eq!(d.quantile(d.cdf(y)), y, epsilon = 1e-10);
        }
    }

    #[test]
    fn gumbel_monte_carlo_mean_is_euler_gamma() {
        let d = Gumbel::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = Uniform::new(0.0f64, 1.0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| d.quantile(u.sample(&mut rng).max(1e-300))).sum::<f64>() / n as f64;
        assert!((mean - 0.5772).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn gumbel_cdf_monotone_and_density_normalized() {
        let (loc, scale) = (0.7, 1.3);
        let d = Gumbel::new(loc, scale).unwrap();
        let (a, b) = (loc - 10.0 * scale, loc + 20.0 * scale);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut prev = -1.0;
        let mut integral = 0.0;
        for i in 0..=n {
            let y = a + i as f64 * h;
            let c = d.cdf(y);
            assert!(c >= prev);
            prev = c;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * d.log_density(y).exp() * h;
        }
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn gauss_hermite_examples() {
        for (m, s) in [(0.0, 1.0), (3.0, 0.2), (-7.0, 4.0)] {
            assert_abs_diff_eq!(gauss_hermite_expectation(|_| 1.0, m, s, 32).unwrap(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(gauss_hermite_expectation(|y| y, 1.0, 0.5, 32).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gauss_hermite_expectation(|y| y * y, 1.0, 0.5, 32).unwrap(), 1.25, epsilon = 1e-10);
        assert!(matches!(gauss_hermite_expectation(|y| y, 0.0, 1.0, 1), Err(HteError::Config(_))));
        assert!(gauss_hermite_expectation(|y| y, 0.0, 0.0, 8).is_err());
    }

    #[test]
    fn gauss_hermite_reproduces_gaussian_moments_to_order_six() {
        let rule = QuadratureRule::gauss_hermite(32).unwrap();
        let (m, s): (f64, f64) = (0.4, 1.7);
        // Raw moments of Normal(m, s²) from the central moments 1, 0, s², 0, 3s⁴, 0, 15s⁶.
        let central = [1.0, 0.0, s.powi(2), 0.0, 3.0 * s.powi(4), 0.0, 15.0 * s.powi(6)];
        for k in 0..=6usize {
            let exact: f64 = (0..=k)
                .map(|j| binom(k, j) * m.powi((k - j) as i32) * central[j])
                .sum();
            let q = rule.expectation(m, s, |y| y.powi(k as i32));
            assert!((q - exact).abs() < 1e-8 * exact.abs().max(1.0), "k={k}: {q} vs {exact}");
        }
    }

    fn binom(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn normal_log_density_integrates_and_matches_closed_form() {
        assert_abs_diff_eq!(
            normal_log_density(1.0, 1.0, 0.5),
            -0.5 * (2.0 * PI * 0.25f64).ln(),
            epsilon = 1e-14
        );
        // Trapezoid over ±12 sd.
        let (m, s) = (-0.3, 0.8);
        let n = 100_000;
        let h = 24.0 * s / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * normal_log_density(m - 12.0 * s + i as f64 * h, m, s).exp() * h
            })
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn normal_cdf_and_log_cdf() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.959_963_984_540_054), 0.975, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_log_cdf(-2.0), normal_cdf(-2.0).ln(), epsilon = 1e-12);
        // Continuity across the asymptotic switch.
        assert!((normal_log_cdf(-29.999) - normal_log_cdf(-30.001)).abs() < 0.1);
        assert!(normal_log_cdf(-100.0).is_finite());
    }

    #[test]
    fn censored_mean_of_standard_normal() {
        assert_abs_diff_eq!(censored_normal_mean(0.0, 1.0), 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(censored_normal_mean(0.0, 1.0), 0.398_942, epsilon = 1e-6);
        assert_abs_diff_eq!(censored_normal_mean(50.0, 1.0), 50.0, epsilon = 1e-12);
    }

    #[test]
    fn log_sum_exp_and_pairwise_sum() {
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }

    #[test]
    fn legendre_unit_interval_rule() {
        let r = UnitIntervalRule::default();
        assert_abs_diff_eq!(r.integrate(|_| 1.0), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(r.integrate(|u| u * u), 1.0 / 3.0, epsilon = 1e-13);
        assert!(r.nodes().iter().all(|&u| u > 0.0 && u < 1.0));
    }
}
