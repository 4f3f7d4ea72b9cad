//! Tobit-type model with outcomes censored at zero.
//!
//! Latent outcomes: `y0* ~ Gumbel(ξ0 + x'ξx, σ0)`, `y1* | y0*, x ~ N(λ0 + λ1 y0* + x'λx, σ1²)`,
//! observed `y = max(y*, 0)`; `p(z=1 | y0*, x) = logistic(β0 + β1 y0* + β2 y0*² + x'βx)`.
//!
//! Integrals against the Gumbel law use the inverse-cdf map `y0* = Q(u)` and a
//! 64-point Gauss–Legendre rule on `(0, 1)`.
//!
//! The sampler augments `y0* ≤ 0` for zero-outcome units with `r = 1, z = 0`,
//! whose moments need the latent value, using an independence Metropolis step
//! with a truncated-Gumbel proposal that also carries the change in the GMM
//! term. Zero-outcome control-arm units contribute `log G(0)` in closed form.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HteError, Result};
use crate::estimands::{EstimandSummary, HteCurve};
use crate::gmm::{mean_moment, moment_from_propensity, quadratic_objective, two_step_weight, AuxSource, AuxiliaryMoments, GmmConfig, MomentReference, WeightSpec};
use crate::likelihood::PriorSpec;
use crate::model::{Dataset, UnitPattern, UnitRecord};
use crate::numeric::{
    censored_normal_mean, log1m_sigmoid, log_sigmoid, log_sum_exp, normal_cdf, normal_log_cdf, pairwise_sum, sigmoid,
    Gumbel, UnitIntervalRule, EULER_GAMMA, LN_SQRT_2PI, LOG_FLOOR,
};
use crate::sampler::{convergence_diagnostics, run_chains, ConvergenceReport, PosteriorDraws, SamplerSettings, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TobitGumbelParams {
    pub xi0: f64,
    pub xi_x: Vec<f64>,
    pub sigma0: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda_x: Vec<f64>,
    pub sigma1: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta_x: Vec<f64>,
}

impl TobitGumbelParams {
    /// Synthetic design with one standard-normal covariate (about 13% of
    /// untreated outcomes censored).
    pub fn simulation_design() -> Self {
        Self {
            xi0: 0.7,
            xi_x: vec![0.5],
            sigma0: 1.0,
            lambda0: 0.5,
            lambda1: 1.1,
            lambda_x: vec![0.3],
            sigma1: 0.8,
            beta0: -0.5,
            beta1: 0.6,
            beta2: -0.15,
            beta_x: vec![0.3],
        }
    }

    pub fn dim(&self) -> usize {
        self.xi_x.len()
    }

    pub fn len_for(d: usize) -> usize {
        3 * d + 8
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.lambda_x.len() != d {
            return Err(HteError::Shape { what: "lambdaX", expected: d, actual: self.lambda_x.len() });
        }
        if self.beta_x.len() != d {
            return Err(HteError::Shape { what: "betaX", expected: d, actual: self.beta_x.len() });
        }
        if self.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(HteError::Domain("non-finite parameter".into()));
        }
        if !(self.sigma0 > 0.0 && self.sigma1 > 0.0) {
            return Err(HteError::Domain(format!(
                "sigma0 and sigma1 must be positive, got ({}, {})",
                self.sigma0, self.sigma1
            )));
        }
        Ok(())
    }

    pub fn names(d: usize) -> Vec<String> {
        let mut n = vec!["xi0".to_string()];
        n.extend((1..=d).map(|k| format!("xiX{k}")));
        n.push("sigma0".into());
        n.push("lambda0".into());
        n.push("lambda1".into());
        n.extend((1..=d).map(|k| format!("lambdaX{k}")));
        n.push("sigma1".into());
        n.extend(["beta0", "beta1", "beta2"].map(String::from));
        n.extend((1..=d).map(|k| format!("betaX{k}")));
        n
    }

    fn sigma_indices(d: usize) -> [usize; 2] {
        [1 + d, 4 + 2 * d]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.xi0];
        v.extend(&self.xi_x);
        v.extend([self.sigma0, self.lambda0, self.lambda1]);
        v.extend(&self.lambda_x);
        v.extend([self.sigma1, self.beta0, self.beta1, self.beta2]);
        v.extend(&self.beta_x);
        v
    }

    pub fn from_slice(v: &[f64], d: usize) -> Result<Self> {
        if v.len() != Self::len_for(d) {
            return Err(HteError::Shape { what: "Tobit–Gumbel parameter vector", expected: Self::len_for(d), actual: v.len() });
        }
        let mut it = v.iter().copied();
        let mut take = |k: usize| -> Vec<f64> { (&mut it).take(k).collect() };
        let xi0 = take(1)[0];
        let xi_x = take(d);
        let s = take(3);
        let lambda_x = take(d);
        let b = take(4);
        let beta_x = take(d);
        Ok(Self {
            xi0,
            xi_x,
            sigma0: s[0],
            lambda0: s[1],
            lambda1: s[2],
            lambda_x,
            sigma1: b[0],
            beta0: b[1],
            beta1: b[2],
            beta2: b[3],
            beta_x,
        })
    }

    #[inline]
    fn dot(a: &[f64], x: &[f64]) -> f64 {
        a.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    #[inline]
    pub fn mu0(&self, x: &[f64]) -> f64 {
        self.xi0 + Self::dot(&self.xi_x, x)
    }

    #[inline]
    pub fn mu1(&self, y0s: f64, x: &[f64]) -> f64 {
        self.lambda0 + self.lambda1 * y0s + Self::dot(&self.lambda_x, x)
    }

    #[inline]
    pub fn propensity_index(&self, y0s: f64, x: &[f64]) -> f64 {
        self.beta0 + self.beta1 * y0s + self.beta2 * y0s * y0s + Self::dot(&self.beta_x, x)
    }

    pub fn gumbel(&self, x: &[f64]) -> Gumbel {
        Gumbel::new_unchecked(self.mu0(x), self.sigma0)
    }
}

/// Gauss–Legendre nodes on (0,1) pre-mapped to standard Gumbel quantiles
/// `t = −ln(−ln u)`, so `Q(u) = μ + σ t`.
#[derive(Debug, Clone)]
pub struct GumbelRule {
    pub nodes: Vec<f64>,
    pub t: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GumbelRule {
    pub const MAX_ORDER: usize = 128;

    pub fn new(order: usize) -> Result<Self> {
        if order > Self::MAX_ORDER {
            return Err(HteError::Config(format!("Gumbel rule order {order} exceeds {}", Self::MAX_ORDER)));
        }
        let r = UnitIntervalRule::gauss_legendre(order)?;
        Ok(Self {
            nodes: r.nodes().to_vec(),
            t: r.nodes().iter().map(|u| -(-u.ln()).ln()).collect(),
            log_weights: r.log_weights().to_vec(),
            weights: r.weights().to_vec(),
        })
    }
}

impl Default for GumbelRule {
    fn default() -> Self {
        Self::new(crate::numeric::DEFAULT_LEGENDRE_ORDER).expect("default order is valid")
    }
}

fn check_nonnegative(u: &UnitRecord) -> Result<()> {
    for v in [u.y0, u.y1].into_iter().flatten() {
        if v < 0.0 {
            return Err(HteError::Data(format!("unit {}: negative outcome {v} in the censored model", u.id)));
        }
    }
    Ok(())
}

/// Branch (i): `log ∫ N(y1; μ1(y0*,x), σ1²) g(y0*,x) dG(y0*)`.
fn treated_positive(y1: f64, x: &[f64], p: &TobitGumbelParams, rule: &GumbelRule) -> f64 {
    let mu = p.mu0(x);
    let n = rule.t.len();
    let inv_s1 = 1.0 / p.sigma1;
    let (mut e, mut eta) = ([0.0f64; 128], [0.0f64; 128]);
    let mut max = f64::NEG_INFINITY;
    for k in 0..n {
        let y0s = mu + p.sigma0 * rule.t[k];
        let r = (y1 - p.mu1(y0s, x)) * inv_s1;
        e[k] = rule.log_weights[k] - 0.5 * r * r;
        eta[k] = p.propensity_index(y0s, x);
        max = max.max(e[k]);
    }
    let sum: f64 = (0..n).map(|k| (e[k] - max).exp() * sigmoid(eta[k])).sum();
    let tail = -LN_SQRT_2PI - p.sigma1.ln();
    if sum > 0.0 && sum.is_finite() {
        return max + sum.ln() + tail;
    }
    for k in 0..n {
        e[k] += log_sigmoid(eta[k]);
    }
    log_sum_exp(&e[..n]) + tail
}

/// Branch (ii): `log ∫ Φ(−μ1(y0*,x)/σ1) g(y0*,x) dG(y0*)`.
fn treated_zero(x: &[f64], p: &TobitGumbelParams, rule: &GumbelRule) -> f64 {
    let mu = p.mu0(x);
    let n = rule.t.len();
    let node = |k: usize| {
        let y0s = mu + p.sigma0 * rule.t[k];
        (-p.mu1(y0s, x) / p.sigma1, p.propensity_index(y0s, x))
    };
    let sum: f64 = (0..n)
        .map(|k| {
            let (c, eta) = node(k);
            rule.weights[k] * normal_cdf(c) * sigmoid(eta)
        })
        .sum();
    if sum > 1e-300 && sum.is_finite() {
        return sum.ln();
    }
    let mut buf = [0.0f64; 128];
    for k in 0..n {
        let (c, eta) = node(k);
        buf[k] = rule.log_weights[k] + normal_log_cdf(c) + log_sigmoid(eta);
    }
    log_sum_exp(&buf[..n])
}

/// Branch (iv): `log ∫_{−∞}^0 Gumbel(y0*) (1 − g(y0*,x)) dy0*`.
fn untreated_zero(x: &[f64], p: &TobitGumbelParams, rule: &GumbelRule) -> f64 {
    let g = p.gumbel(x);
    let log_f0 = g.log_cdf(0.0);
    let f0 = log_f0.exp();
    if f0 <= 0.0 {
        return log_f0;
    }
    let mut buf = [0.0f64; 128];
    let n = rule.t.len();
    for k in 0..n {
        let y0s = g.quantile(rule.nodes[k] * f0).min(0.0);
        buf[k] = rule.log_weights[k] + log1m_sigmoid(p.propensity_index(y0s, x));
    }
    log_f0 + log_sum_exp(&buf[..n])
}

/// Observed-data log-likelihood contribution of one unit.
///
/// Treatment-arm units use the four branches; control-arm units contribute
/// `log Gumbel(y0)` or `log G(0)`.
pub fn censored_unit_log_lik(unit: &UnitRecord, psi: &TobitGumbelParams, rule: &GumbelRule) -> Result<f64> {
    check_nonnegative(unit)?;
    if unit.x.len() != psi.dim() {
        return Err(HteError::Shape { what: "covariate dimension", expected: psi.dim(), actual: unit.x.len() });
    }
    let x = &unit.x;
    let v = match unit.validate()? {
        UnitPattern::Treated => {
            let y1 = unit.y1.expect("validated");
            if y1 > 0.0 {
                treated_positive(y1, x, psi, rule)
            } else {
                treated_zero(x, psi, rule)
            }
        }
        UnitPattern::Untreated => {
            let y0 = unit.y0.expect("validated");
            if y0 > 0.0 {
                psi.gumbel(x).log_density(y0) + log1m_sigmoid(psi.propensity_index(y0, x))
            } else {
                untreated_zero(x, psi, rule)
            }
        }
        UnitPattern::ControlArm => {
            let y0 = unit.y0.expect("validated");
            let g = psi.gumbel(x);
            if y0 > 0.0 {
                g.log_density(y0)
            } else {
                g.log_cdf(0.0)
            }
        }
    };
    Ok(v)
}

/// Model-implied `E[y0*]` and `E[y0*²]` averaged over the given covariates.
pub fn implied_latent_moments(psi: &TobitGumbelParams, xs: &[&[f64]]) -> (f64, f64) {
    let n = xs.len() as f64;
    let var = std::f64::consts::PI.powi(2) / 6.0 * psi.sigma0 * psi.sigma0;
    let (mut m1, mut m2) = (0.0, 0.0);
    for x in xs {
        let m = psi.mu0(x) + EULER_GAMMA * psi.sigma0;
        m1 += m;
        m2 += var + m * m;
    }
    (m1 / n, m2 / n)
}

/// Moment vector of length `d + 3`, centered on `aux` (which must carry `momentY0Sq`).
pub fn censored_moment_vector(y0_star: f64, x: &[f64], psi: &TobitGumbelParams, aux: &AuxiliaryMoments) -> Result<Vec<f64>> {
    let reference = MomentReference::from_aux(aux, true)?;
    let mut out = vec![0.0; reference.len()];
    moment_from_propensity(sigmoid(psi.propensity_index(y0_star, x)), y0_star, x, &reference, "<unnamed>", &mut out)?;
    Ok(out)
}

/// Inverse-cdf draw from `Gumbel(location, scale)` truncated to `(−∞, upper]`.
pub fn truncated_gumbel_draw(location: f64, scale: f64, upper: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    truncated_gumbel_draw_for(location, scale, upper, rng, "<unnamed>")
}

pub fn truncated_gumbel_draw_for(location: f64, scale: f64, upper: f64, rng: &mut ChaCha8Rng, unit: &str) -> Result<f64> {
    let g = Gumbel::new(location, scale)?;
    let p = g.cdf(upper);
    if !(p > 0.0) {
        return Err(HteError::Rejection { unit: unit.to_string() });
    }
    let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    Ok(g.quantile(u * p).min(upper))
}

/// Latent `y0* ≤ 0` values for zero-outcome untreated units, in dataset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CensoredLatentState {
    pub unit_index: Vec<usize>,
    pub y0_star: Vec<f64>,
}

pub struct CensoredTarget<'a> {
    pub data: &'a Dataset,
    pub prior: PriorSpec,
    pub rule: GumbelRule,
    pub weight: DMatrix<f64>,
    pub aux: AuxiliaryMoments,
    pub init: TobitGumbelParams,
    d: usize,
    latent_units: Vec<usize>,
    /// Moment subsample (r=1, z=0): (unit index, position in latent vector if censored).
    moment_units: Vec<(usize, Option<usize>)>,
    control_x: Vec<usize>,
}

/// Auxiliary inputs for the censored moments: control-arm covariate means and
/// the untreated share of the treatment arm. `E[y0*]`, `E[y0*²]` are model-implied.
pub fn censored_aux(data: &Dataset) -> Result<AuxiliaryMoments> {
    let controls: Vec<_> = data.iter_pattern(UnitPattern::ControlArm).collect();
    if controls.is_empty() {
        return Err(HteError::Usage("the censored model needs r=0 units to estimate p(y0*)".into()));
    }
    let arm: Vec<_> = data.units.iter().filter(|u| u.r).collect();
    if arm.is_empty() {
        return Err(HteError::Data("no r=1 units".into()));
    }
    let n = controls.len() as f64;
    let mean_x = (0..data.d).map(|k| controls.iter().map(|u| u.x[k]).sum::<f64>() / n).collect();
    let prob_z0 = arm.iter().filter(|u| !u.realized_z()).count() as f64 / arm.len() as f64;
    Ok(AuxiliaryMoments { mean_y0: 0.0, mean_x, prob_z0, moment_y0_sq: Some(0.0), source: AuxSource::EstimatedFromControlArm })
}

fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = rows.len();
    let p = rows.first()?.len();
    if n <= p {
        return None;
    }
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let yv = nalgebra::DVector::from_column_slice(y);
    let coef = x.clone().svd(true, true).solve(&yv, 1e-12).ok()?;
    let resid = &yv - &x * &coef;
    Some((coef.iter().copied().collect(), (resid.norm_squared() / (n - p) as f64).sqrt()))
}

/// Starting values: Gumbel moments from the control arm's positive outcomes,
/// least squares of positive treated outcomes on `x`, and a logistic fit of
/// `z` on `x` with `β1 = 0.1`.
pub fn censored_initial_values(data: &Dataset) -> Result<TobitGumbelParams> {
    let d = data.d;
    let pos0: Vec<_> = data.units.iter().filter(|u| u.y0.is_some_and(|v| v > 0.0)).collect();
    let rows0: Vec<Vec<f64>> = pos0.iter().map(|u| std::iter::once(1.0).chain(u.x.iter().copied()).collect()).collect();
    let (c0, s0) = least_squares(&rows0, &pos0.iter().map(|u| u.y0.expect("filtered")).collect::<Vec<_>>())
        .ok_or_else(|| HteError::Initialization("too few positive untreated outcomes".into()))?;
    let sigma0 = (s0 * 6f64.sqrt() / std::f64::consts::PI).max(0.05);
    let pos1: Vec<_> = data.iter_pattern(UnitPattern::Treated).filter(|u| u.y1.is_some_and(|v| v > 0.0)).collect();
    let rows1: Vec<Vec<f64>> = pos1.iter().map(|u| std::iter::once(1.0).chain(u.x.iter().copied()).collect()).collect();
    let (c1, s1) = least_squares(&rows1, &pos1.iter().map(|u| u.y1.expect("filtered")).collect::<Vec<_>>())
        .ok_or_else(|| HteError::Initialization("too few positive treated outcomes".into()))?;
    let arm: Vec<_> = data.units.iter().filter(|u| u.r).collect();
    let feats: Vec<Vec<f64>> = arm.iter().map(|u| std::iter::once(1.0).chain(u.x.iter().copied()).collect()).collect();
    let z: Vec<bool> = arm.iter().map(|u| u.realized_z()).collect();
    let beta = crate::baselines::fit_logistic(&feats, &z).map(|f| f.coefficients).unwrap_or_else(|_| vec![0.0; d + 1]);
    Ok(TobitGumbelParams {
        xi0: c0[0] - EULER_GAMMA * sigma0,
        xi_x: c0[1..].to_vec(),
        sigma0,
        lambda0: c1[0],
        lambda1: 0.0,
        lambda_x: c1[1..].to_vec(),
        sigma1: s1.max(0.05),
        beta0: beta[0],
        beta1: 0.1,
        beta2: 0.0,
        beta_x: beta[1..].to_vec(),
    })
}

impl<'a> CensoredTarget<'a> {
    pub fn new(data: &'a Dataset, prior: PriorSpec, weight: DMatrix<f64>, aux: AuxiliaryMoments) -> Result<Self> {
        for u in &data.units {
            check_nonnegative(u)?;
        }
        let d = data.d;
        if weight.nrows() != d + 3 || weight.ncols() != d + 3 {
            return Err(HteError::Shape { what: "censored GMM weight matrix", expected: d + 3, actual: weight.nrows() });
        }
        let mut latent_units = Vec::new();
        let mut moment_units = Vec::new();
        let mut control_x = Vec::new();
        for (i, u) in data.units.iter().enumerate() {
            match u.pattern() {
                UnitPattern::ControlArm => control_x.push(i),
                UnitPattern::Untreated => {
                    if u.y0 == Some(0.0) {
                        moment_units.push((i, Some(latent_units.len())));
                        latent_units.push(i);
                    } else {
                        moment_units.push((i, None));
                    }
                }
                UnitPattern::Treated => {}
            }
        }
        if control_x.is_empty() {
            return Err(HteError::Usage("the censored model needs r=0 units to estimate p(y0*)".into()));
        }
        if moment_units.is_empty() {
            return Err(HteError::Config("moment subsample (r=1, z=0 units) is empty".into()));
        }
        let init = censored_initial_values(data)?;
        Ok(Self { data, prior, rule: GumbelRule::default(), weight, aux, init, d, latent_units, moment_units, control_x })
    }

    pub fn with_initial(mut self, psi: TobitGumbelParams) -> Self {
        self.init = psi;
        self
    }

    pub fn params(&self, theta: &[f64]) -> TobitGumbelParams {
        let mut v = theta.to_vec();
        for i in TobitGumbelParams::sigma_indices(self.d) {
            v[i] = v[i].exp();
        }
        TobitGumbelParams::from_slice(&v, self.d).expect("sampler vector has the censored layout")
    }

    fn unconstrained(&self, psi: &TobitGumbelParams) -> Vec<f64> {
        let mut v = psi.to_vec();
        for i in TobitGumbelParams::sigma_indices(self.d) {
            v[i] = v[i].ln();
        }
        v
    }

    fn reference(&self, psi: &TobitGumbelParams) -> (f64, f64) {
        let xs: Vec<&[f64]> = self.control_x.iter().map(|&i| self.data.units[i].x.as_slice()).collect();
        implied_latent_moments(psi, &xs)
    }

    fn moment_at(&self, psi: &TobitGumbelParams, reference: &MomentReference<'_>, i: usize, y0s: f64, out: &mut [f64]) -> Result<()> {
        let u = &self.data.units[i];
        moment_from_propensity(sigmoid(psi.propensity_index(y0s, &u.x)), y0s, &u.x, reference, &u.id, out)
    }

    fn moment_y0(&self, i: usize, slot: Option<usize>, latent: &[f64]) -> f64 {
        match slot {
            Some(k) => latent[k],
            None => self.data.units[i].y0.expect("validated"),
        }
    }

    fn q0(&self, psi: &TobitGumbelParams, latent: &[f64]) -> Result<f64> {
        let (m1, m2) = self.reference(psi);
        let reference = MomentReference { mean_x: &self.aux.mean_x, prob_z0: self.aux.prob_z0, mean_y0: m1, moment_y0_sq: Some(m2) };
        let mut moments = Vec::with_capacity(self.moment_units.len());
        for &(i, slot) in &self.moment_units {
            let mut m = vec![0.0; self.d + 3];
            self.moment_at(psi, &reference, i, self.moment_y0(i, slot, latent), &mut m)?;
            moments.push(m);
        }
        Ok(quadratic_objective(&mean_moment(&moments), moments.len(), &self.weight))
    }

    fn try_log_density(&self, theta: &[f64], latent: &[f64]) -> Result<f64> {
        let psi = self.params(theta);
        let mut lp = psi.sigma0.ln() + psi.sigma1.ln();
        for (name, v) in TobitGumbelParams::names(self.d).iter().zip(psi.to_vec()) {
            lp += self.prior.log_density(name, v, name.starts_with("sigma"));
        }
        if !lp.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        let mut latent_pos = self.latent_units.iter().enumerate().peekable();
        let mut terms = Vec::with_capacity(self.data.len());
        for (i, u) in self.data.units.iter().enumerate() {
            let censored_slot = match latent_pos.peek() {
                Some(&(k, &j)) if j == i => {
                    latent_pos.next();
                    Some(k)
                }
                _ => None,
            };
            let t = match censored_slot {
                Some(k) => {
                    let y = latent[k];
                    if y > 0.0 {
                        return Ok(f64::NEG_INFINITY);
                    }
                    psi.gumbel(&u.x).log_density(y) + log1m_sigmoid(psi.propensity_index(y, &u.x))
                }
                None => censored_unit_log_lik(u, &psi, &self.rule)?,
            };
            terms.push(t.max(LOG_FLOOR));
        }
        Ok(lp + pairwise_sum(&terms) + self.q0(&psi, latent)?)
    }

    /// Initial latent values: conditional medians of the truncated law.
    fn start_latent(&self, psi: &TobitGumbelParams) -> Vec<f64> {
        self.latent_units
            .iter()
            .map(|&i| {
                let g = psi.gumbel(&self.data.units[i].x);
                let p = g.cdf(0.0);
                if p > 0.0 {
                    g.quantile(0.5 * p).min(0.0)
                } else {
                    -1e-3
                }
            })
            .collect()
    }
}

impl Target for CensoredTarget<'_> {
    fn dim(&self) -> usize {
        TobitGumbelParams::len_for(self.d)
    }

    fn names(&self) -> Vec<String> {
        TobitGumbelParams::names(self.d)
    }

    fn initial(&self) -> Vec<f64> {
        self.unconstrained(&self.init)
    }

    fn log_density(&self, theta: &[f64], latent: &[f64]) -> f64 {
        self.try_log_density(theta, latent).unwrap_or(f64::NEG_INFINITY)
    }

    fn to_natural(&self, theta: &[f64]) -> Vec<f64> {
        self.params(theta).to_vec()
    }

    fn initial_latent(&self, theta: &[f64]) -> Vec<f64> {
        self.start_latent(&self.params(theta))
    }

    fn update_latents(&self, theta: &[f64], latent: &mut [f64], rng: &mut ChaCha8Rng) -> (usize, usize) {
        let psi = self.params(theta);
        let (m1, m2) = self.reference(&psi);
        let reference = MomentReference { mean_x: &self.aux.mean_x, prob_z0: self.aux.prob_z0, mean_y0: m1, moment_y0_sq: Some(m2) };
        let k = self.d + 3;
        let n0 = self.moment_units.len();
        // Running moment sum over the subsample for incremental Q0 updates.
        let mut sum = vec![0.0; k];
        let mut buf = vec![0.0; k];
        for &(i, slot) in &self.moment_units {
            if self.moment_at(&psi, &reference, i, self.moment_y0(i, slot, latent), &mut buf).is_err() {
                return (0, 0);
            }
            sum.iter_mut().zip(&buf).for_each(|(s, b)| *s += b);
        }
        let q = |s: &[f64]| {
            let mbar: Vec<f64> = s.iter().map(|v| v / n0 as f64).collect();
            quadratic_objective(&mbar, n0, &self.weight)
        };
        let mut q_cur = q(&sum);
        let (mut accepted, mut proposed) = (0, 0);
        let mut old_m = vec![0.0; k];
        let mut new_m = vec![0.0; k];
        for (slot, &i) in self.latent_units.iter().enumerate() {
            let u = &self.data.units[i];
            let g = psi.gumbel(&u.x);
            let Ok(cand) = truncated_gumbel_draw_for(g.location(), g.scale(), 0.0, rng, &u.id) else {
                continue;
            };
            proposed += 1;
            let cur = latent[slot];
            if self.moment_at(&psi, &reference, i, cur, &mut old_m).is_err()
                || self.moment_at(&psi, &reference, i, cand, &mut new_m).is_err()
            {
                continue;
            }
            let cand_sum: Vec<f64> = (0..k).map(|j| sum[j] - old_m[j] + new_m[j]).collect();
            let q_cand = q(&cand_sum);
            let log_ratio = log1m_sigmoid(psi.propensity_index(cand, &u.x)) - log1m_sigmoid(psi.propensity_index(cur, &u.x))
                + q_cand
                - q_cur;
            if log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio {
                latent[slot] = cand;
                sum = cand_sum;
                q_cur = q_cand;
                accepted += 1;
            }
        }
        (accepted, proposed)
    }
}

#[derive(Debug, Clone)]
pub struct CensoredFit {
    pub chains: Vec<PosteriorDraws>,
    pub pooled: PosteriorDraws,
    pub diagnostics: Option<ConvergenceReport>,
    pub d: usize,
    pub initial: TobitGumbelParams,
}

impl CensoredFit {
    pub fn posterior_mean(&self) -> Vec<f64> {
        let n = self.pooled.retained() as f64;
        (0..self.pooled.names.len()).map(|j| self.pooled.column(j).iter().sum::<f64>() / n).collect()
    }

    pub fn draws_as_params(&self) -> Result<Vec<TobitGumbelParams>> {
        self.pooled.parameter_draws.iter().map(|r| TobitGumbelParams::from_slice(r, self.d)).collect()
    }
}

/// Quasi-Bayes fit of the censored model. Only the `QUASI_BAYES` target is
/// supported; `TWO_STEP` weights come from a single pilot chain.
pub fn fit_censored(data: &Dataset, prior: &PriorSpec, settings: &SamplerSettings, gmm: &GmmConfig, seed: u64) -> Result<CensoredFit> {
    settings.validate()?;
    let aux = censored_aux(data)?;
    let k = data.d + 3;
    let weight = match &gmm.weight_matrix {
        WeightSpec::TwoStep => {
            let pilot = CensoredTarget::new(data, prior.clone(), DMatrix::identity(k, k), aux.clone())?;
            let draws = run_chains(&pilot, &SamplerSettings { chains: 1, store_latents: true, ..settings.clone() }, seed ^ 0x5EED_0F_F17)?;
            let p = &draws[0];
            let n = p.retained() as f64;
            let mean: Vec<f64> = (0..p.names.len()).map(|j| p.column(j).iter().sum::<f64>() / n).collect();
            let psi = TobitGumbelParams::from_slice(&mean, data.d)?;
            let last = p.latent_draws.as_ref().and_then(|l| l.last().cloned()).unwrap_or_default();
            let (m1, m2) = pilot.reference(&psi);
            let reference = MomentReference { mean_x: &aux.mean_x, prob_z0: aux.prob_z0, mean_y0: m1, moment_y0_sq: Some(m2) };
            let mut moments = Vec::new();
            for &(i, slot) in &pilot.moment_units {
                let mut m = vec![0.0; k];
                pilot.moment_at(&psi, &reference, i, pilot.moment_y0(i, slot, &last), &mut m)?;
                moments.push(m);
            }
            two_step_weight(&moments)?
        }
        _ => gmm.weight(k)?,
    };
    let target = CensoredTarget::new(data, prior.clone(), weight, aux)?;
    let chains = run_chains(&target, settings, seed)?;
    let pooled = PosteriorDraws::pooled(&chains)?;
    let diagnostics = convergence_diagnostics(&chains).ok();
    Ok(CensoredFit { chains, pooled, diagnostics, d: data.d, initial: target.init })
}

/// `E[max(y1*, 0) | y0*, x]`.
#[inline]
pub fn censored_treated_mean(psi: &TobitGumbelParams, y0s: f64, x: &[f64]) -> f64 {
    censored_normal_mean(psi.mu1(y0s, x), psi.sigma1)
}

/// `E[y1 | y0 = 0] = E[max(y1*,0) | y0* ≤ 0]` for one draw, averaging over covariates.
pub fn atom_at(psi: &TobitGumbelParams, xs: &[&[f64]], rule: &GumbelRule) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for x in xs {
        let g = psi.gumbel(x);
        let f0 = g.cdf(0.0);
        if f0 <= 0.0 {
            continue;
        }
        let inner: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&u, &w)| w * censored_treated_mean(psi, g.quantile(u * f0).min(0.0), x))
            .sum();
        num += f0 * inner;
        den += f0;
    }
    (den > 0.0).then(|| num / den)
}

/// `E[y1 | y0] − y0` for `y0 > 0`, reweighting covariates by the Gumbel density at `y0`.
pub fn censored_hte_at(psi: &TobitGumbelParams, xs: &[&[f64]], y0: f64) -> Option<f64> {
    let lw: Vec<f64> = xs.iter().map(|x| psi.gumbel(x).log_density(y0)).collect();
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > LOG_FLOOR) {
        return None;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (x, l) in xs.iter().zip(&lw) {
        let w = (l - max).exp();
        num += w * censored_treated_mean(psi, y0, x);
        den += w;
    }
    Some(num / den - y0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CensoredHteCurve {
    /// Curve over the positive grid points.
    pub curve: HteCurve,
    /// `HTE(0) = E[y1 | y0 = 0]`, integrating over `y0* ≤ 0`.
    pub atom: EstimandSummary,
}

pub fn censored_hte_curve(draws: &PosteriorDraws, data: &Dataset, grid: &[f64]) -> Result<CensoredHteCurve> {
    let params: Vec<TobitGumbelParams> =
        draws.parameter_draws.iter().map(|r| TobitGumbelParams::from_slice(r, data.d)).collect::<Result<_>>()?;
    censored_hte_curve_from_params(&params, data, grid)
}

pub fn censored_hte_curve_from_params(params: &[TobitGumbelParams], data: &Dataset, grid: &[f64]) -> Result<CensoredHteCurve> {
    use rayon::prelude::*;
    crate::estimands::validate_grid(grid)?;
    if grid[0] <= 0.0 {
        return Err(HteError::Config("censored HTE grid must be positive; the value at 0 is reported as the atom".into()));
    }
    if params.is_empty() {
        return Err(HteError::Undefined("no draws for the HTE curve".into()));
    }
    let xs: Vec<&[f64]> = data.units.iter().map(|u| u.x.as_slice()).collect();
    let rule = GumbelRule::default();
    let rows: Vec<(Vec<Option<f64>>, Option<f64>)> = params
        .par_iter()
        .map(|p| (grid.iter().map(|&y| censored_hte_at(p, &xs, y)).collect(), atom_at(p, &xs, &rule)))
        .collect();
    let flagged: Vec<bool> = (0..grid.len()).map(|j| rows.iter().any(|r| r.0[j].is_none())).collect();
    let values: Vec<Vec<f64>> = rows.iter().map(|r| r.0.iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect();
    let atoms: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
    Ok(CensoredHteCurve {
        curve: HteCurve::from_values(grid.to_vec(), &values, flagged)?,
        atom: EstimandSummary::from_samples(&atoms)?,
    })
}

/// Model-implied `E[y1] − E[y0]` of observed (censored) outcomes for one draw.
pub fn censored_ate_at(psi: &TobitGumbelParams, xs: &[&[f64]], rule: &GumbelRule) -> f64 {
    let n = xs.len() as f64;
    let mut total = 0.0;
    for x in xs {
        let mu = psi.mu0(x);
        for (t, w) in rule.t.iter().zip(&rule.weights) {
            let y0s = mu + psi.sigma0 * t;
            total += w * (censored_treated_mean(psi, y0s, x) - y0s.max(0.0));
        }
    }
    total / n
}
