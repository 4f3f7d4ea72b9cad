//! Data model, the Gaussian parameter bundle, the extended propensity score
//! and oracles for the true estimands of the Gaussian data-generating process.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HteError, Result};
use crate::gmm::AuxiliaryMoments;
use crate::numeric::{sigmoid, QuadratureRule};
use crate::rng::{derive_seed, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Setup {
    /// Randomized trial with one-sided noncompliance: `r` is the offer arm.
    RctOneSided,
    /// Observational study with a micro-level population sample (`r = 0`).
    ObsMicro,
    /// Observational study with only macro-level moments of the untreated outcome.
    ObsMacro,
}

impl std::str::FromStr for Setup {
    type Err = HteError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RCT_ONE_SIDED" => Ok(Setup::RctOneSided),
            "OBS_MICRO" => Ok(Setup::ObsMicro),
            "OBS_MACRO" => Ok(Setup::ObsMacro),
            other => Err(HteError::Usage(format!("unknown setup '{other}'"))),
        }
    }
}

/// Which branch of the observed-data likelihood a unit falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitPattern {
    /// `r = 1, z = 1`: `y1` observed, `y0` missing.
    Treated,
    /// `r = 1, z = 0`: `y0` observed.
    Untreated,
    /// `r = 0`: `y0` observed, `z` structurally 0.
    ControlArm,
}

/// One study unit. Missing values are `None`, never sentinels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: String,
    pub x: Vec<f64>,
    pub r: bool,
    pub z: Option<bool>,
    pub y1: Option<f64>,
    pub y0: Option<f64>,
}

impl UnitRecord {
    pub fn treated(id: impl Into<String>, x: Vec<f64>, y1: f64) -> Self {
        Self { id: id.into(), x, r: true, z: Some(true), y1: Some(y1), y0: None }
    }

    pub fn untreated(id: impl Into<String>, x: Vec<f64>, y0: f64) -> Self {
        Self { id: id.into(), x, r: true, z: Some(false), y1: None, y0: Some(y0) }
    }

    pub fn control_arm(id: impl Into<String>, x: Vec<f64>, y0: f64) -> Self {
        Self { id: id.into(), x, r: false, z: None, y1: None, y0: Some(y0) }
    }

    pub fn validate(&self) -> Result<UnitPattern> {
        let bad = |why: &str| Err(HteError::Data(format!("unit {}: {why}", self.id)));
        if self.x.iter().any(|v| !v.is_finite()) {
            return bad("non-finite covariate");
        }
        if self.y0.is_some_and(|v| !v.is_finite()) || self.y1.is_some_and(|v| !v.is_finite()) {
            return bad("non-finite outcome");
        }
        match (self.r, self.z) {
            (true, Some(true)) => {
                if self.y1.is_none() {
                    return bad("r=1, z=1 requires observed y1");
                }
                if self.y0.is_some() {
                    return bad("r=1, z=1 requires y0 missing");
                }
                Ok(UnitPattern::Treated)
            }
            (true, Some(false)) => {
                if self.y0.is_none() {
                    return bad("r=1, z=0 requires observed y0");
                }
                if self.y1.is_some() {
                    return bad("r=1, z=0 requires y1 missing");
                }
                Ok(UnitPattern::Untreated)
            }
            (true, None) => bad("r=1 requires observed z"),
            (false, z) => {
                if z.is_some() {
                    return bad("r=0 requires z missing");
                }
                if self.y0.is_none() || self.y1.is_some() {
                    return bad("r=0 requires y0 observed and y1 missing");
                }
                Ok(UnitPattern::ControlArm)
            }
        }
    }

    /// Pattern of an already-validated unit.
    pub fn pattern(&self) -> UnitPattern {
        match (self.r, self.z) {
            (true, Some(true)) => UnitPattern::Treated,
            (true, _) => UnitPattern::Untreated,
            (false, _) => UnitPattern::ControlArm,
        }
    }

    /// Realized treatment status; `r = 0` counts as untreated.
    pub fn realized_z(&self) -> bool {
        self.r && self.z == Some(true)
    }

    /// The outcome actually observed (`y1` if treated, else `y0`).
    pub fn realized_outcome(&self) -> f64 {
        if self.realized_z() {
            self.y1.expect("validated treated unit")
        } else {
            self.y0.expect("validated untreated unit")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub units: Vec<UnitRecord>,
    pub d: usize,
    pub setup: Setup,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxiliaryMoments>,
}

impl Dataset {
    pub fn new(units: Vec<UnitRecord>, d: usize, setup: Setup, aux: Option<AuxiliaryMoments>) -> Result<Self> {
        for u in &units {
            if u.x.len() != d {
                return Err(HteError::Shape { what: "covariate dimension", expected: d, actual: u.x.len() });
            }
            u.validate()?;
        }
        if setup == Setup::ObsMacro {
            let aux = aux
                .as_ref()
                .ok_or_else(|| HteError::Usage("setup OBS_MACRO requires auxiliary moments (meanY0, meanX, probZ0)".into()))?;
            aux.validate(d)?;
        }
        Ok(Self { units, d, setup, aux })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn iter_pattern(&self, p: UnitPattern) -> impl Iterator<Item = &UnitRecord> {
        self.units.iter().filter(move |u| u.pattern() == p)
    }

    pub fn count(&self, p: UnitPattern) -> usize {
        self.iter_pattern(p).count()
    }
}

/// Parameters of the Gaussian model: `y0|x ~ N(θ00 + θ01 x, σ0²)`,
/// `y1|y0,x ~ N(θ10 + θ11 x + θ12 y0 + θ13 y0², σ1²)`,
/// `p(z=1|y0,x) = logistic(β0 + β1 x + β2 y0)`. Scalar covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GaussianModelParams {
    pub theta00: f64,
    pub theta01: f64,
    pub theta10: f64,
    pub theta11: f64,
    pub theta12: f64,
    pub theta13: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl GaussianModelParams {
    pub const DIM: usize = 11;

    /// Order used for parameter vectors, draws and reports.
    pub const NAMES: [&'static str; 11] = [
        "theta00", "theta01", "sigma0", "theta10", "theta11", "theta12", "theta13", "sigma1", "beta0",
        "beta1", "beta2",
    ];

    /// The simulation design: θ0 = (1.0, 0.6), θ1 = (1.5, 0.5, 0.6, −0.2),
    /// σ = (0.5, 0.6), β = (−1.2, 0.8, 0.6), covariate sd 1.5.
    pub const fn simulation_design() -> Self {
        Self {
            theta00: 1.0,
            theta01: 0.6,
            theta10: 1.5,
            theta11: 0.5,
            theta12: 0.6,
            theta13: -0.2,
            sigma0: 0.5,
            sigma1: 0.6,
            beta0: -1.2,
            beta1: 0.8,
            beta2: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
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

    /// Rejects configurations that cannot identify the model (β2 frozen at 0).
    pub fn validate_identified(&self) -> Result<()> {
        self.validate()?;
        if self.beta2 == 0.0 {
            return Err(HteError::Config(
                "the y0 coefficient of the extended propensity score (beta2) must be nonzero for an identified fit".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn mu0(&self, x: f64) -> f64 {
        self.theta00 + self.theta01 * x
    }

    #[inline]
    pub fn mu1(&self, y0: f64, x: f64) -> f64 {
        self.theta10 + self.theta11 * x + self.theta12 * y0 + self.theta13 * y0 * y0
    }

    #[inline]
    pub fn propensity_index(&self, y0: f64, x: f64) -> f64 {
        self.beta0 + self.beta1 * x + self.beta2 * y0
    }

    pub fn extended_propensity_score(&self) -> ExtendedPropensityScore {
        ExtendedPropensityScore {
            k0: self.beta0,
            linear_y0_coefficient: self.beta2,
            extra_y0_basis: Vec::new(),
            x_coefficients: vec![self.beta1],
        }
    }

    /// Values in [`Self::NAMES`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.theta00, self.theta01, self.sigma0, self.theta10, self.theta11, self.theta12, self.theta13,
            self.sigma1, self.beta0, self.beta1, self.beta2,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != Self::DIM {
            return Err(HteError::Shape { what: "Gaussian parameter vector", expected: Self::DIM, actual: v.len() });
        }
        Ok(Self {
            theta00: v[0],
            theta01: v[1],
            sigma0: v[2],
            theta10: v[3],
            theta11: v[4],
            theta12: v[5],
            theta13: v[6],
            sigma1: v[7],
            beta0: v[8],
            beta1: v[9],
            beta2: v[10],
        })
    }
}

/// Basis functions allowed in the nonlinear part of the y0 index. Each vanishes at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Y0Basis {
    Quadratic,
}

impl Y0Basis {
    #[inline]
    pub fn eval(self, y0: f64) -> f64 {
        match self {
            Y0Basis::Quadratic => y0 * y0,
        }
    }
}

/// `p(z=1|y0,x) = logistic(k0 + θ_y0·y0 + Σ c_j T_j(y0) + x'γ)`.
///
/// The index is additive in `y0` and `x` by construction: there is no way to
/// express an interaction term, and every component vanishes at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExtendedPropensityScore {
    pub k0: f64,
    pub linear_y0_coefficient: f64,
    pub extra_y0_basis: Vec<(Y0Basis, f64)>,
    pub x_coefficients: Vec<f64>,
}

impl ExtendedPropensityScore {
    pub fn k_y0(&self, y0: f64) -> f64 {
        self.linear_y0_coefficient * y0 + self.extra_y0_basis.iter().map(|&(b, c)| c * b.eval(y0)).sum::<f64>()
    }

    pub fn k_x(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.x_coefficients.len() {
            return Err(HteError::Shape {
                what: "extended propensity covariates",
                expected: self.x_coefficients.len(),
                actual: x.len(),
            });
        }
        Ok(x.iter().zip(&self.x_coefficients).map(|(a, b)| a * b).sum())
    }

    pub fn log_odds(&self, y0: f64, x: &[f64]) -> Result<f64> {
        Ok(self.k0 + self.k_y0(y0) + self.k_x(x)?)
    }

    pub fn evaluate(&self, y0: f64, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.log_odds(y0, x)?))
    }
}

/// Extended propensity score of a Gaussian-model unit.
pub fn extended_propensity(y0: f64, x: &[f64], eps: &ExtendedPropensityScore) -> Result<f64> {
    eps.evaluate(y0, x)
}

/// True estimands of the Gaussian design with `x ~ N(0, x_sd²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueEstimands {
    pub dgp: GaussianModelParams,
    pub x_sd: f64,
    pub ate: f64,
    pub att_mc: f64,
    pub atu_mc: f64,
    /// Monte Carlo average of `y1 − y0` over the same simulated units.
    pub ate_mc: f64,
    pub prob_treated_mc: f64,
}

impl TrueEstimands {
    pub fn mean_y0(&self) -> f64 {
        self.dgp.mu0(0.0)
    }

    pub fn var_y0(&self) -> f64 {
        let p = &self.dgp;
        p.theta01 * p.theta01 * self.x_sd * self.x_sd + p.sigma0 * p.sigma0
    }

    /// `E[x | y0]` under the joint Gaussian law of `(x, y0)`.
    pub fn conditional_mean_x(&self, y0: f64) -> f64 {
        let cov = self.dgp.theta01 * self.x_sd * self.x_sd;
        cov / self.var_y0() * (y0 - self.mean_y0())
    }

    /// `HTE(y0) = E[y1 − y0 | y0]` in closed form.
    pub fn hte(&self, y0: f64) -> f64 {
        let p = &self.dgp;
        p.theta10 + p.theta11 * self.conditional_mean_x(y0) + p.theta12 * y0 + p.theta13 * y0 * y0 - y0
    }
}

/// Closed-form ATE and HTE plus Monte Carlo ATT/ATU over `mc_units` simulated units.
pub fn true_estimand_oracle(dgp: &GaussianModelParams, x_sd: f64, mc_units: usize, seed: u64) -> Result<TrueEstimands> {
    dgp.validate()?;
    if !(x_sd > 0.0) {
        return Err(HteError::Domain(format!("x_sd must be positive, got {x_sd}")));
    }
    let mean_x = 0.0;
    let mean_y0 = dgp.mu0(mean_x);
    let var_y0 = dgp.theta01 * dgp.theta01 * x_sd * x_sd + dgp.sigma0 * dgp.sigma0;
    let ate = dgp.theta10 + dgp.theta11 * mean_x + dgp.theta12 * mean_y0 + dgp.theta13 * (var_y0 + mean_y0 * mean_y0)
        - mean_y0;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::ORACLE]));
    let (mut sum_t, mut n_t, mut sum_u, mut n_u) = (0.0, 0usize, 0.0, 0usize);
    for _ in 0..mc_units {
        let e: [f64; 4] = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            rand::Rng::gen::<f64>(&mut rng),
        ];
        let x = x_sd * e[0];
        let y0 = dgp.mu0(x) + dgp.sigma0 * e[1];
        let y1 = dgp.mu1(y0, x) + dgp.sigma1 * e[2];
        if e[3] < sigmoid(dgp.propensity_index(y0, x)) {
            sum_t += y1 - y0;
            n_t += 1;
        } else {
            sum_u += y1 - y0;
            n_u += 1;
        }
    }
    let div = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok(TrueEstimands {
        dgp: *dgp,
        x_sd,
        ate,
        att_mc: div(sum_t, n_t),
        atu_mc: div(sum_u, n_u),
        ate_mc: div(sum_t + sum_u, n_t + n_u),
        prob_treated_mc: div(n_t as f64, mc_units),
    })
}

/// `P(z = 1)` under the Gaussian design, by nested Gauss–Hermite quadrature.
pub fn prob_treated(dgp: &GaussianModelParams, x_sd: f64, quad: &QuadratureRule) -> f64 {
    quad.expectation(0.0, x_sd, |x| {
        quad.expectation(dgp.mu0(x), dgp.sigma0, |y0| sigmoid(dgp.propensity_index(y0, x)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn eps() -> ExtendedPropensityScore {
        GaussianModelParams::simulation_design().extended_propensity_score()
    }

    #[test]
    fn extended_propensity_examples() {
        let e = eps();
        assert_abs_diff_eq!(extended_propensity(0.0, &[0.0], &e).unwrap(), 0.231_475_216_500_982_8, epsilon = 1e-12);
        // logistic(0.2)
        assert_abs_diff_eq!(extended_propensity(1.0, &[1.0], &e).unwrap(), 0.549_833_997_312_478, epsilon = 1e-12);
        assert!(matches!(extended_propensity(0.0, &[0.0, 1.0], &e), Err(HteError::Shape { .. })));
    }

    #[test]
    fn index_is_additive_on_grid() {
        let mut e = eps();
        e.extra_y0_basis.push((Y0Basis::Quadratic, -0.3));
        let grid = [-2.0, -1.0, 0.0, 0.5, 2.0];
        for &y0 in &grid {
            let diffs: Vec<f64> =
                grid.iter().map(|&x| e.log_odds(y0, &[x]).unwrap() - e.log_odds(0.0, &[x]).unwrap()).collect();
            for d in &diffs {
                assert_abs_diff_eq!(*d, diffs[0], epsilon = 1e-12);
            }
        }
        assert_eq!(e.k_y0(0.0), 0.0);
        assert_eq!(e.k_x(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn propensity_stays_inside_unit_interval() {
        let e = eps();
        for y0 in [-30.0, -1.0, 0.0, 4.0, 30.0] {
            for x in [-30.0, 0.0, 30.0] {
                let p = extended_propensity(y0, &[x], &e).unwrap();
                assert!(p > 0.0 && p < 1.0 || (p == 1.0 && y0 * 0.6 + x * 0.8 > 36.0));
            }
        }
    }

    #[test]
    fn oracle_matches_design_values() {
        let t = true_estimand_oracle(&GaussianModelParams::simulation_design(), 1.5, 200_000, 1).unwrap();
        assert_abs_diff_eq!(t.ate, 0.688, epsilon = 1e-12);
        assert_abs_diff_eq!(t.hte(1.0), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn hte_without_dependence_on_y0_or_x() {
        let mut p = GaussianModelParams::simulation_design();
        p.theta11 = 0.0;
        p.theta12 = 0.0;
        p.theta13 = 0.0;
        let t = true_estimand_oracle(&p, 1.5, 10, 1).unwrap();
        for y0 in [-2.0, 0.0, 1.0, 3.5] {
            assert_abs_diff_eq!(t.hte(y0), p.theta10 - y0, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_invariants_enforced() {
        assert!(UnitRecord::treated("a", vec![0.0], 1.0).validate().is_ok());
        let mut u = UnitRecord::treated("a", vec![0.0], 1.0);
        u.y0 = Some(2.0);
        assert!(u.validate().is_err());
        let mut c = UnitRecord::control_arm("c", vec![0.0], 1.0);
        c.z = Some(false);
        assert!(c.validate().is_err());
        assert!(Dataset::new(vec![UnitRecord::treated("a", vec![0.0, 1.0], 1.0)], 1, Setup::RctOneSided, None).is_err());
        assert!(Dataset::new(vec![], 1, Setup::ObsMacro, None).is_err());
    }

    #[test]
    fn beta2_frozen_at_zero_is_rejected() {
        let mut p = GaussianModelParams::simulation_design();
        p.beta2 = 0.0;
        assert!(p.validate_identified().is_err());
        p.beta2 = 0.6;
        p.sigma1 = 0.0;
        assert!(p.validate().is_err());
    }
}
