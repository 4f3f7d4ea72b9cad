//! Observed-data and data-augmented log-posteriors of the Gaussian model.
//!
//! Unit branches:
//! - `r=1, z=1`: `log ∫ N(y1; μ1(y0,x), σ1²) N(y0; μ0(x), σ0²) g(y0,x) dy0` (Gauss–Hermite)
//! - `r=1, z=0`: `log N(y0; μ0(x), σ0²) + log(1 − g(y0,x))`
//! - `r=0`:      `log N(y0; μ0(x), σ0²)`

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HteError, Result};
use crate::model::{Dataset, GaussianModelParams, UnitPattern, UnitRecord};
use crate::numeric::{log1m_sigmoid, log_sigmoid, normal_log_density, pairwise_sum, sigmoid, QuadratureRule, LN_SQRT_2PI, LOG_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "camelCase", deny_unknown_fields)]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    HalfNormal { scale: f64 },
    Flat,
}

impl Prior {
    pub fn log_density(&self, v: f64) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => normal_log_density(v, mean, sd),
            Prior::HalfNormal { scale } => {
                if v > 0.0 {
                    std::f64::consts::LN_2 + normal_log_density(v, 0.0, scale)
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Flat => 0.0,
        }
    }
}

/// Priors for unconstrained coefficients and for positive scale parameters,
/// with optional per-parameter overrides keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PriorSpec {
    pub coefficients: Prior,
    pub scales: Prior,
    #[serde(default)]
    pub overrides: BTreeMap<String, Prior>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            coefficients: Prior::Normal { mean: 0.0, sd: 10.0 },
            scales: Prior::HalfNormal { scale: 5.0 },
            overrides: BTreeMap::new(),
        }
    }
}

impl PriorSpec {
    pub fn log_density(&self, name: &str, value: f64, is_scale: bool) -> f64 {
        match self.overrides.get(name) {
            Some(p) => p.log_density(value),
            None if is_scale => self.scales.log_density(value),
            None => self.coefficients.log_density(value),
        }
    }

    /// Joint log prior over named parameters; names starting with `sigma` are scales.
    pub fn log_density_named<'a>(&self, params: impl IntoIterator<Item = (&'a str, f64)>) -> f64 {
        params.into_iter().map(|(n, v)| self.log_density(n, v, n.starts_with("sigma"))).sum()
    }

    pub fn gaussian_log_prior(&self, psi: &GaussianModelParams) -> f64 {
        self.log_density_named(GaussianModelParams::NAMES.iter().copied().zip(psi.to_vec()))
    }
}

fn scalar_x(x: &[f64]) -> Result<f64> {
    match x {
        [v] => Ok(*v),
        _ => Err(HteError::Shape { what: "Gaussian-model covariates", expected: 1, actual: x.len() }),
    }
}

/// Gaussian part of the treated-unit integral with `θ13 = 0`.
///
/// `N(y1; b + θ12·y0, σ1²)·N(y0; μ0, σ0²) = N(y1; m, v)·N(y0; c, s²)`, so the
/// quadrature runs against the posterior `N(c, s²)` of `y0` given `y1`.
struct TreatedSplit {
    /// `log N(y1; m, v)`, the linear-Gaussian marginal of `y1`.
    log_marginal: f64,
    center: f64,
    scale: f64,
    /// `y1 − θ10 − θ11·x`.
    resid: f64,
}

#[inline]
fn treated_split(y1: f64, x: f64, psi: &GaussianModelParams) -> TreatedSplit {
    let resid = y1 - psi.theta10 - psi.theta11 * x;
    let mu0 = psi.mu0(x);
    let (s0sq, s1sq) = (psi.sigma0 * psi.sigma0, psi.sigma1 * psi.sigma1);
    let v = s1sq + psi.theta12 * psi.theta12 * s0sq;
    let e = resid - psi.theta12 * mu0;
    TreatedSplit {
        log_marginal: -0.5 * e * e / v - 0.5 * v.ln() - LN_SQRT_2PI,
        center: mu0 + s0sq * psi.theta12 * e / v,
        scale: (s0sq * s1sq / v).sqrt(),
        resid,
    }
}

/// Log ratio of the full treated density to its `θ13 = 0` part at `y0`.
#[inline]
fn quadratic_log_ratio(y0: f64, split: &TreatedSplit, psi: &GaussianModelParams) -> f64 {
    if psi.theta13 == 0.0 {
        return 0.0;
    }
    let r = split.resid - psi.theta12 * y0;
    let q = psi.theta13 * y0 * y0;
    q * (2.0 * r - q) / (2.0 * psi.sigma1 * psi.sigma1)
}

/// Log-space evaluation of the treated-unit integral; exact in every regime.
fn treated_log_lik_log_space(y1: f64, x: f64, psi: &GaussianModelParams, quad: &QuadratureRule) -> f64 {
    let a = psi.beta0 + psi.beta1 * x;
    let sp = treated_split(y1, x, psi);
    sp.log_marginal
        + quad.log_expectation(sp.center, sp.scale, |y0| quadratic_log_ratio(y0, &sp, psi) + log_sigmoid(a + psi.beta2 * y0))
}

/// Treated-unit integral `∫ N(y1; μ1(y0,x), σ1²) σ(index) N(y0; μ0(x), σ0²) dy0`.
///
/// The linear-Gaussian part is integrated in closed form and the nodes are
/// placed on the posterior of `y0` given `y1`, so with `θ13 = β2 = 0` the
/// result is exact. The remaining sum runs in linear space after shifting by
/// its largest exponent and falls back to log space when it underflows.
#[inline]
pub(crate) fn treated_log_lik_scalar(y1: f64, x: f64, psi: &GaussianModelParams, quad: &QuadratureRule) -> f64 {
    const MAX_NODES: usize = 128;
    let n = quad.nodes().len();
    if n > MAX_NODES {
        return treated_log_lik_log_space(y1, x, psi, quad);
    }
    let a = psi.beta0 + psi.beta1 * x;
    let sp = treated_split(y1, x, psi);
    let (mut e, mut eta) = ([0.0f64; MAX_NODES], [0.0f64; MAX_NODES]);
    let mut max = f64::NEG_INFINITY;
    for k in 0..n {
        let y0 = sp.center + sp.scale * quad.nodes()[k];
        e[k] = quad.log_weights()[k] + quadratic_log_ratio(y0, &sp, psi);
        eta[k] = a + psi.beta2 * y0;
        max = max.max(e[k]);
    }
    let sum: f64 = (0..n).map(|k| (e[k] - max).exp() * sigmoid(eta[k])).sum();
    if sum > 0.0 && sum.is_finite() {
        sp.log_marginal + max + sum.ln()
    } else {
        treated_log_lik_log_space(y1, x, psi, quad)
    }
}

#[inline]
pub(crate) fn untreated_log_lik_scalar(y0: f64, x: f64, psi: &GaussianModelParams) -> f64 {
    normal_log_density(y0, psi.mu0(x), psi.sigma0) + log1m_sigmoid(psi.propensity_index(y0, x))
}

#[inline]
pub(crate) fn control_log_lik_scalar(y0: f64, x: f64, psi: &GaussianModelParams) -> f64 {
    normal_log_density(y0, psi.mu0(x), psi.sigma0)
}

/// `log p(y1, z=1 | x, ψ)`, integrating the missing `y0` by Gauss–Hermite
/// quadrature centered on its posterior given `y1`.
pub fn treated_unit_log_lik(y1: f64, x: &[f64], psi: &GaussianModelParams, quad: &QuadratureRule) -> Result<f64> {
    let xv = scalar_x(x)?;
    let v = treated_log_lik_scalar(y1, xv, psi, quad);
    if !v.is_finite() {
        return Err(HteError::Numerical {
            context: "treated-unit log-likelihood".into(),
            detail: format!("value {v} at y1={y1}, x={xv}, psi={psi:?}"),
        });
    }
    Ok(v)
}

/// `log p(y0, z=0 | x, ψ)` for a treatment-arm unit that did not take treatment.
pub fn control_unit_log_lik(y0: f64, x: &[f64], psi: &GaussianModelParams) -> Result<f64> {
    Ok(untreated_log_lik_scalar(y0, scalar_x(x)?, psi))
}

/// Sum of per-unit terms plus diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodEval {
    pub log_lik: f64,
    /// Units whose log term hit [`LOG_FLOOR`].
    pub floored: usize,
}

fn floor_terms(terms: &mut [f64]) -> usize {
    let mut hits = 0;
    for t in terms.iter_mut() {
        if t.is_nan() {
            continue;
        }
        if *t < LOG_FLOOR {
            *t = LOG_FLOOR;
            hits += 1;
        }
    }
    hits
}

fn unit_term(u: &UnitRecord, psi: &GaussianModelParams, quad: &QuadratureRule) -> Result<f64> {
    let x = scalar_x(&u.x)?;
    Ok(match u.pattern() {
        UnitPattern::Treated => treated_log_lik_scalar(u.y1.expect("validated"), x, psi, quad),
        UnitPattern::Untreated => untreated_log_lik_scalar(u.y0.expect("validated"), x, psi),
        UnitPattern::ControlArm => control_log_lik_scalar(u.y0.expect("validated"), x, psi),
    })
}

/// Observed-data log-likelihood (marginalized over missing `y0`).
pub fn gaussian_log_likelihood(psi: &GaussianModelParams, data: &Dataset, quad: &QuadratureRule) -> Result<LikelihoodEval> {
    let mut terms = data.units.iter().map(|u| unit_term(u, psi, quad)).collect::<Result<Vec<_>>>()?;
    let floored = floor_terms(&mut terms);
    let log_lik = pairwise_sum(&terms);
    if log_lik.is_nan() {
        return Err(HteError::Numerical { context: "marginal log-likelihood".into(), detail: format!("NaN at {psi:?}") });
    }
    Ok(LikelihoodEval { log_lik, floored })
}

/// Unnormalized log posterior of the observed-data likelihood.
pub fn marginal_log_posterior(psi: &GaussianModelParams, data: &Dataset, prior: &PriorSpec, quad: &QuadratureRule) -> Result<f64> {
    Ok(gaussian_log_likelihood(psi, data, quad)?.log_lik + prior.gaussian_log_prior(psi))
}

/// Augmented log-likelihood with `y0mis` aligned to the `r=1, z=1` units in dataset order.
pub fn augmented_log_likelihood(psi: &GaussianModelParams, y0mis: &[f64], data: &Dataset) -> Result<LikelihoodEval> {
    let n_treated = data.count(UnitPattern::Treated);
    if y0mis.len() != n_treated {
        return Err(HteError::Shape { what: "y0mis (one per r=1, z=1 unit)", expected: n_treated, actual: y0mis.len() });
    }
    let mut k = 0;
    let mut terms = Vec::with_capacity(data.len());
    for u in &data.units {
        let x = scalar_x(&u.x)?;
        terms.push(match u.pattern() {
            UnitPattern::Treated => {
                let y0 = y0mis[k];
                k += 1;
                treated_augmented_term(u.y1.expect("validated"), y0, x, psi)
            }
            UnitPattern::Untreated => untreated_log_lik_scalar(u.y0.expect("validated"), x, psi),
            UnitPattern::ControlArm => control_log_lik_scalar(u.y0.expect("validated"), x, psi),
        });
    }
    let floored = floor_terms(&mut terms);
    Ok(LikelihoodEval { log_lik: pairwise_sum(&terms), floored })
}

#[inline]
pub(crate) fn treated_augmented_term(y1: f64, y0: f64, x: f64, psi: &GaussianModelParams) -> f64 {
    log_sigmoid(psi.propensity_index(y0, x))
        + normal_log_density(y1, psi.mu1(y0, x), psi.sigma1)
        + normal_log_density(y0, psi.mu0(x), psi.sigma0)
}

pub fn augmented_log_posterior(psi: &GaussianModelParams, y0mis: &[f64], data: &Dataset, prior: &PriorSpec) -> Result<f64> {
    Ok(augmented_log_likelihood(psi, y0mis, data)?.log_lik + prior.gaussian_log_prior(psi))
}

/// Unnormalized full-conditional log density of a treated unit's missing `y0`.
pub fn y0mis_full_conditional_log_density(y0: f64, unit: &UnitRecord, psi: &GaussianModelParams) -> Result<f64> {
    if unit.pattern() != UnitPattern::Treated || unit.y1.is_none() || unit.y0.is_some() {
        return Err(HteError::Contract(format!(
            "unit {} is not an r=1, z=1 unit with observed y1 and missing y0",
            unit.id
        )));
    }
    Ok(treated_augmented_term(unit.y1.expect("checked"), y0, scalar_x(&unit.x)?, psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Setup;
    use crate::numeric::sigmoid;
    use approx::assert_abs_diff_eq;

    fn truth() -> GaussianModelParams {
        GaussianModelParams::simulation_design()
    }

    #[test]
    fn beta2_zero_factorizes_in_closed_form() {
        let mut sharp = truth();
        (sharp.theta12, sharp.sigma0, sharp.sigma1) = (1.0, 1.5, 0.3);
        let quad = QuadratureRule::default();
        for (mut p, (y1, x)) in [truth(), sharp].into_iter().flat_map(|p| [(2.0, 0.5), (-1.0, 1.2), (0.3, -2.0)].map(|f| (p, f))) {
            p.beta2 = 0.0;
            p.theta13 = 0.0;
            let mean = p.theta10 + p.theta11 * x + p.theta12 * p.mu0(x);
            let sd = (p.theta12 * p.theta12 * p.sigma0 * p.sigma0 + p.sigma1 * p.sigma1).sqrt();
            let closed = sigmoid(p.beta0 + p.beta1 * x).ln() + normal_log_density(y1, mean, sd);
            assert_abs_diff_eq!(treated_unit_log_lik(y1, &[x], &p, &quad).unwrap(), closed, epsilon = 1e-10);
        }
    }

    #[test]
    fn treated_loglik_stable_across_orders() {
        let q32 = QuadratureRule::gauss_hermite(32).unwrap();
        let q64 = QuadratureRule::gauss_hermite(64).unwrap();
        let a = treated_unit_log_lik(2.0, &[0.5], &truth(), &q32).unwrap();
        let b = treated_unit_log_lik(2.0, &[0.5], &truth(), &q64).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }

    #[test]
    fn control_unit_examples() {
        let p = truth();
        let v = control_unit_log_lik(1.0, &[0.0], &p).unwrap();
        let a = normal_log_density(1.0, 1.0, 0.5);
        let b = (1.0 - sigmoid(-0.6)).ln();
        assert_abs_diff_eq!(v, a + b, epsilon = 1e-14);
        assert_abs_diff_eq!(sigmoid(-0.6), 0.354_343_693_774_204_2, epsilon = 1e-12);
        let mut q = p;
        q.beta0 = -1e6;
        let v = control_unit_log_lik(1.0, &[0.0], &q).unwrap();
        assert_abs_diff_eq!(v, normal_log_density(1.0, 1.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn total_probability_over_z_and_outcome() {
        // ∫ p(y1, z=1|x) dy1 + ∫ p(y0, z=0|x) dy0 = 1.
        let p = truth();
        let quad = QuadratureRule::default();
        for x in [-1.5, 0.0, 2.0] {
            let n = 6000;
            let (a, b) = (-15.0, 15.0);
            let h = (b - a) / n as f64;
            let mut total = 0.0;
            for i in 0..=n {
                let y = a + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                total += w * h * (treated_unit_log_lik(y, &[x], &p, &quad).unwrap().exp()
                    + control_unit_log_lik(y, &[x], &p).unwrap().exp());
            }
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-4);
        }
    }

    fn three_units() -> Dataset {
        Dataset::new(
            vec![
                UnitRecord::treated("t", vec![0.5], 2.0),
                UnitRecord::untreated("u", vec![-0.4], 0.7),
                UnitRecord::control_arm("c", vec![1.1], 1.9),
            ],
            1,
            Setup::RctOneSided,
            None,
        )
        .unwrap()
    }

    #[test]
    fn marginal_posterior_is_sum_of_branches() {
        let p = truth();
        let quad = QuadratureRule::default();
        let prior = PriorSpec::default();
        let data = three_units();
        let expected = treated_unit_log_lik(2.0, &[0.5], &p, &quad).unwrap()
            + control_unit_log_lik(0.7, &[-0.4], &p).unwrap()
            + normal_log_density(1.9, p.mu0(1.1), p.sigma0)
            + prior.gaussian_log_prior(&p);
        assert_abs_diff_eq!(marginal_log_posterior(&p, &data, &prior, &quad).unwrap(), expected, epsilon = 1e-12);

        let empty = Dataset::new(vec![], 1, Setup::RctOneSided, None).unwrap();
        assert_eq!(marginal_log_posterior(&p, &empty, &prior, &quad).unwrap(), prior.gaussian_log_prior(&p));
    }

    #[test]
    fn control_arm_only_ignores_beta() {
        let data = Dataset::new(
            vec![UnitRecord::control_arm("a", vec![0.0], 1.0), UnitRecord::control_arm("b", vec![1.0], 2.0)],
            1,
            Setup::RctOneSided,
            None,
        )
        .unwrap();
        let quad = QuadratureRule::default();
        let flat = PriorSpec { coefficients: Prior::Flat, scales: Prior::Flat, overrides: BTreeMap::new() };
        let p = truth();
        let mut q = p;
        q.beta0 = 3.0;
        q.beta1 = -2.0;
        q.beta2 = 5.0;
        assert_eq!(
            marginal_log_posterior(&p, &data, &flat, &quad).unwrap(),
            marginal_log_posterior(&q, &data, &flat, &quad).unwrap()
        );
        // A single r=0 unit needs no augmentation.
        let one = Dataset::new(vec![UnitRecord::control_arm("a", vec![0.0], 1.0)], 1, Setup::RctOneSided, None).unwrap();
        let prior = PriorSpec::default();
        assert_eq!(
            augmented_log_posterior(&p, &[], &one, &prior).unwrap(),
            marginal_log_posterior(&p, &one, &prior, &quad).unwrap()
        );
    }

    #[test]
    fn augmented_integrates_to_marginal_for_one_treated_unit() {
        let p = truth();
        let quad = QuadratureRule::gauss_hermite(64).unwrap();
        let data = Dataset::new(vec![UnitRecord::treated("t", vec![0.5], 2.0)], 1, Setup::ObsMicro, None).unwrap();
        let flat = PriorSpec { coefficients: Prior::Flat, scales: Prior::Flat, overrides: BTreeMap::new() };
        // Dense trapezoid over y0mis.
        let n = 20_000;
        let (a, b) = (-8.0, 10.0);
        let h = (b - a) / n as f64;
        let integral: f64 = (0..=n)
            .map(|i| {
                let y = a + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * h * augmented_log_posterior(&p, &[y], &data, &flat).unwrap().exp()
            })
            .sum();
        let marginal = marginal_log_posterior(&p, &data, &flat, &quad).unwrap();
        assert_abs_diff_eq!(integral.ln(), marginal, epsilon = 1e-6);
    }

    #[test]
    fn augmented_ignores_latents_of_untreated_units_and_checks_length() {
        let p = truth();
        let prior = PriorSpec::default();
        let data = three_units();
        assert!(matches!(augmented_log_posterior(&p, &[], &data, &prior), Err(HteError::Shape { .. })));
        let u_only = Dataset::new(vec![UnitRecord::untreated("u", vec![0.0], 0.3)], 1, Setup::ObsMicro, None).unwrap();
        assert!(augmented_log_posterior(&p, &[], &u_only, &prior).is_ok());
    }

    #[test]
    fn full_conditional_contract_and_shape() {
        let p = truth();
        let u = UnitRecord::untreated("u", vec![0.0], 0.3);
        assert!(matches!(y0mis_full_conditional_log_density(0.0, &u, &p), Err(HteError::Contract(_))));

        // β2 = 0, θ12 = θ13 = 0: proportional to N(μ0(x), σ0²).
        let mut q = p;
        q.beta2 = 0.0;
        q.theta12 = 0.0;
        q.theta13 = 0.0;
        let t = UnitRecord::treated("t", vec![0.4], 1.3);
        let base = y0mis_full_conditional_log_density(0.0, &t, &q).unwrap() - normal_log_density(0.0, q.mu0(0.4), q.sigma0);
        for y in [-1.0, 0.5, 2.0, 3.0] {
            let v = y0mis_full_conditional_log_density(y, &t, &q).unwrap() - normal_log_density(y, q.mu0(0.4), q.sigma0);
            assert_abs_diff_eq!(v, base, epsilon = 1e-12);
        }
    }

    fn grid_density(unit: &UnitRecord, p: &GaussianModelParams) -> (Vec<f64>, Vec<f64>, f64) {
        let n = 40_000;
        let (a, b) = (-6.0, 8.0);
        let h = (b - a) / n as f64;
        let ys: Vec<f64> = (0..=n).map(|i| a + i as f64 * h).collect();
        let mut dens: Vec<f64> = ys.iter().map(|&y| y0mis_full_conditional_log_density(y, unit, p).unwrap().exp()).collect();
        let z: f64 = dens.iter().sum::<f64>() * h;
        dens.iter_mut().for_each(|d| *d /= z);
        (ys, dens, h)
    }

    #[test]
    fn full_conditional_gaussian_times_logistic_tilt() {
        // θ13 = 0: N(y0; m, s²)·logistic(...) with precision 1/σ0² + θ12²/σ1².
        let mut p = truth();
        p.theta13 = 0.0;
        let x = 0.3;
        let y1 = 2.1;
        let unit = UnitRecord::treated("t", vec![x], y1);
        let prec = 1.0 / p.sigma0.powi(2) + p.theta12.powi(2) / p.sigma1.powi(2);
        let m = (p.mu0(x) / p.sigma0.powi(2) + p.theta12 * (y1 - p.theta10 - p.theta11 * x) / p.sigma1.powi(2)) / prec;
        let s = prec.recip().sqrt();
        let (ys, dens, h) = grid_density(&unit, &p);
        let mut analytic: Vec<f64> =
            ys.iter().map(|&y| normal_log_density(y, m, s).exp() * sigmoid(p.propensity_index(y, x))).collect();
        let z: f64 = analytic.iter().sum::<f64>() * h;
        analytic.iter_mut().for_each(|d| *d /= z);
        let tv: f64 = 0.5 * dens.iter().zip(&analytic).map(|(a, b)| (a - b).abs()).sum::<f64>() * h;
        assert!(tv < 1e-4, "total variation {tv}");
    }

    #[test]
    fn full_conditional_mode_shifts_right_with_beta2() {
        let unit = UnitRecord::treated("t", vec![0.0], 1.8);
        let argmax = |b2: f64| {
            let mut p = truth();
            p.beta2 = b2;
            let (ys, dens, _) = grid_density(&unit, &p);
            let i = dens.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            ys[i]
        };
        assert!(argmax(2.0) > argmax(0.0));
    }

    #[test]
    fn permutation_invariance() {
        let p = truth();
        let quad = QuadratureRule::default();
        let prior = PriorSpec::default();
        let data = three_units();
        let mut rev = data.clone();
        rev.units.reverse();
        let a = marginal_log_posterior(&p, &data, &prior, &quad).unwrap();
        let b = marginal_log_posterior(&p, &rev, &prior, &quad).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn augmented_maximum_is_interior() {
        let p = truth();
        let data = Dataset::new(vec![UnitRecord::treated("t", vec![0.0], 1.5)], 1, Setup::ObsMicro, None).unwrap();
        let prior = PriorSpec::default();
        let ys: Vec<f64> = (0..=2000).map(|i| -10.0 + i as f64 * 0.01).collect();
        let vals: Vec<f64> = ys.iter().map(|&y| augmented_log_posterior(&p, &[y], &data, &prior).unwrap()).collect();
        let i = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(i > 0 && i < ys.len() - 1);
    }

    #[test]
    fn floor_is_applied_and_reported() {
        let p = truth();
        let data = Dataset::new(vec![UnitRecord::control_arm("far", vec![0.0], 1e4)], 1, Setup::RctOneSided, None).unwrap();
        let eval = gaussian_log_likelihood(&p, &data, &QuadratureRule::default()).unwrap();
        assert_eq!(eval.floored, 1);
        assert_eq!(eval.log_lik, LOG_FLOOR);
    }

    #[test]
    fn linear_space_sum_matches_log_space() {
        let q = QuadratureRule::default();
        let mut p = truth();
        for (y1, x, b2) in [(2.0, 0.5, 0.6), (-3.0, 2.0, -1.0), (9.0, -3.0, 2.5), (0.1, 0.0, 0.0)] {
            p.beta2 = b2;
            let fast = treated_log_lik_scalar(y1, x, &p, &q);
            let slow = treated_log_lik_log_space(y1, x, &p, &q);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-11);
        }
        // Propensity underflows on every node: the log-space fallback keeps the value finite.
        p.beta0 = -2000.0;
        let v = treated_log_lik_scalar(2.0, 0.5, &p, &q);
        assert!(v.is_finite() && v < -1900.0);
        assert_abs_diff_eq!(v, treated_log_lik_log_space(2.0, 0.5, &p, &q), epsilon = 1e-9);
    }
}
