//! Posterior targets for the Gaussian model and the fitting entry point.
//!
//! Parameters are sampled on an unconstrained scale in the order of
//! [`GaussianModelParams::NAMES`], with `log σ0` and `log σ1` in place of the
//! scales (the log-Jacobian is added to the target).

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::fit_logistic;
use crate::error::{HteError, Result};
use crate::gmm::{
    aux_from_control_arm, gaussian_moments, mean_moment, quadratic_objective, two_step_weight, AuxiliaryMoments,
    GmmConfig, WeightSpec,
};
use crate::likelihood::{
    augmented_log_likelihood, gaussian_log_likelihood, treated_augmented_term, PriorSpec,
};
use crate::model::{Dataset, GaussianModelParams, UnitPattern};
use crate::numeric::QuadratureRule;
use crate::sampler::{convergence_diagnostics, run_chains, ConvergenceReport, PosteriorDraws, SamplerSettings, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TargetKind {
    /// Observed-data likelihood with missing `y0` integrated by quadrature.
    #[default]
    MarginalBayes,
    /// Missing `y0` of treated units sampled as latent variables.
    AugmentedBayes,
    /// Marginal likelihood times `exp(Q0)`.
    QuasiBayes,
}

impl std::str::FromStr for TargetKind {
    type Err = HteError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "marginal" | "marginal_bayes" => Ok(TargetKind::MarginalBayes),
            "augmented" | "augmented_bayes" => Ok(TargetKind::AugmentedBayes),
            "quasi" | "quasi_bayes" => Ok(TargetKind::QuasiBayes),
            other => Err(HteError::Usage(format!("unknown target '{other}' (marginal, augmented, quasi)"))),
        }
    }
}

const SIGMA_INDICES: [usize; 2] = [2, 7];

/// Maps natural parameters to the sampler's unconstrained vector.
pub fn to_unconstrained(psi: &GaussianModelParams) -> Vec<f64> {
    let mut v = psi.to_vec();
    for i in SIGMA_INDICES {
        v[i] = v[i].ln();
    }
    v
}

pub fn from_unconstrained(theta: &[f64]) -> GaussianModelParams {
    let mut v = theta.to_vec();
    for i in SIGMA_INDICES {
        v[i] = v[i].exp();
    }
    GaussianModelParams::from_slice(&v).expect("sampler vector has the Gaussian dimension")
}

/// Resolved GMM term: moments, reference values and a concrete weight matrix.
#[derive(Debug, Clone)]
pub struct GmmTerm {
    pub config: GmmConfig,
    pub aux: AuxiliaryMoments,
    pub weight: DMatrix<f64>,
}

impl GmmTerm {
    pub fn q0(&self, psi: &GaussianModelParams, data: &Dataset) -> Result<f64> {
        let m = gaussian_moments(psi, data, &self.config, &self.aux)?;
        Ok(quadratic_objective(&mean_moment(&m), m.len(), &self.weight))
    }
}

pub struct GaussianTarget<'a> {
    pub data: &'a Dataset,
    pub prior: PriorSpec,
    pub quad: QuadratureRule,
    pub kind: TargetKind,
    pub gmm: Option<GmmTerm>,
    pub init: GaussianModelParams,
    treated: Vec<usize>,
}

impl<'a> GaussianTarget<'a> {
    pub fn new(data: &'a Dataset, kind: TargetKind, prior: PriorSpec, gmm: Option<GmmTerm>) -> Result<Self> {
        if data.d != 1 {
            return Err(HteError::Shape { what: "Gaussian-model covariate dimension", expected: 1, actual: data.d });
        }
        if kind == TargetKind::QuasiBayes && gmm.is_none() {
            return Err(HteError::Config("QUASI_BAYES requires a GMM configuration and auxiliary moments".into()));
        }
        let init = initial_values(data)?;
        let treated = data
            .units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.pattern() == UnitPattern::Treated)
            .map(|(i, _)| i)
            .collect();
        Ok(Self { data, prior, quad: QuadratureRule::default(), kind, gmm, init, treated })
    }

    /// Overrides the starting point (natural scale).
    pub fn with_initial(mut self, psi: GaussianModelParams) -> Self {
        self.init = psi;
        self
    }

    fn log_prior_with_jacobian(&self, psi: &GaussianModelParams) -> f64 {
        self.prior.gaussian_log_prior(psi) + psi.sigma0.ln() + psi.sigma1.ln()
    }

    fn try_log_density(&self, theta: &[f64], latent: &[f64]) -> Result<f64> {
        let psi = from_unconstrained(theta);
        let lp = self.log_prior_with_jacobian(&psi);
        if !lp.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        let ll = match self.kind {
            TargetKind::AugmentedBayes => augmented_log_likelihood(&psi, latent, self.data)?.log_lik,
            _ => gaussian_log_likelihood(&psi, self.data, &self.quad)?.log_lik,
        };
        let q0 = match (&self.gmm, self.kind) {
            (Some(g), TargetKind::QuasiBayes) => g.q0(&psi, self.data)?,
            _ => 0.0,
        };
        Ok(lp + ll + q0)
    }
}

impl Target for GaussianTarget<'_> {
    fn dim(&self) -> usize {
        GaussianModelParams::DIM
    }

    fn names(&self) -> Vec<String> {
        GaussianModelParams::NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn initial(&self) -> Vec<f64> {
        to_unconstrained(&self.init)
    }

    fn log_density(&self, theta: &[f64], latent: &[f64]) -> f64 {
        self.try_log_density(theta, latent).unwrap_or(f64::NEG_INFINITY)
    }

    fn to_natural(&self, theta: &[f64]) -> Vec<f64> {
        from_unconstrained(theta).to_vec()
    }

    fn initial_latent(&self, theta: &[f64]) -> Vec<f64> {
        if self.kind != TargetKind::AugmentedBayes {
            return Vec::new();
        }
        let psi = from_unconstrained(theta);
        self.treated.iter().map(|&i| psi.mu0(self.data.units[i].x[0])).collect()
    }

    /// One random-walk Metropolis step per missing `y0`, scaled by the
    /// conditional sd of the linear-Gaussian part.
    fn update_latents(&self, theta: &[f64], latent: &mut [f64], rng: &mut ChaCha8Rng) -> (usize, usize) {
        let psi = from_unconstrained(theta);
        let precision = 1.0 / (psi.sigma0 * psi.sigma0) + (psi.theta12 * psi.theta12) / (psi.sigma1 * psi.sigma1);
        let step = 2.4 / precision.sqrt();
        let mut accepted = 0;
        for (k, &i) in self.treated.iter().enumerate() {
            let u = &self.data.units[i];
            let (y1, x) = (u.y1.expect("validated"), u.x[0]);
            let cur = latent[k];
            let cand = cur + step * crate::rng::std_normal(rng);
            let log_ratio = treated_augmented_term(y1, cand, x, &psi) - treated_augmented_term(y1, cur, x, &psi);
            if log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio {
                latent[k] = cand;
                accepted += 1;
            }
        }
        (accepted, self.treated.len())
    }
}

fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if n <= p {
        return Err(HteError::Initialization(format!("need more than {p} observations for least squares, have {n}")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let yv = nalgebra::DVector::from_column_slice(y);
    let svd = x.clone().svd(true, true);
    let coef = svd
        .solve(&yv, 1e-12)
        .map_err(|e| HteError::Initialization(format!("least squares failed: {e}")))?;
    let resid = &yv - &x * &coef;
    let sigma = (resid.norm_squared() / (n - p) as f64).sqrt();
    Ok((coef.iter().copied().collect(), sigma.max(1e-3)))
}

/// Deterministic starting values: least squares for the outcome equations
/// (the treated equation uses `x` only) and a logistic fit of `z` on `x`
/// among `r = 1` units with the `y0` coefficient started at 0.1.
pub fn initial_values(data: &Dataset) -> Result<GaussianModelParams> {
    let obs0: Vec<_> = data.units.iter().filter(|u| u.y0.is_some()).collect();
    let (c0, s0) = least_squares(
        &obs0.iter().map(|u| vec![1.0, u.x[0]]).collect::<Vec<_>>(),
        &obs0.iter().map(|u| u.y0.expect("filtered")).collect::<Vec<_>>(),
    )?;
    let treated: Vec<_> = data.iter_pattern(UnitPattern::Treated).collect();
    let (c1, s1) = least_squares(
        &treated.iter().map(|u| vec![1.0, u.x[0]]).collect::<Vec<_>>(),
        &treated.iter().map(|u| u.y1.expect("validated")).collect::<Vec<_>>(),
    )?;
    let arm: Vec<_> = data.units.iter().filter(|u| u.r).collect();
    let feats: Vec<Vec<f64>> = arm.iter().map(|u| vec![1.0, u.x[0]]).collect();
    let z: Vec<bool> = arm.iter().map(|u| u.realized_z()).collect();
    let (b0, b1) = match fit_logistic(&feats, &z) {
        Ok(fit) => (fit.coefficients[0], fit.coefficients[1]),
        Err(_) => (0.0, 0.0),
    };
    Ok(GaussianModelParams {
        theta00: c0[0],
        theta01: c0[1],
        sigma0: s0,
        theta10: c1[0],
        theta11: c1[1],
        theta12: 0.0,
        theta13: 0.0,
        sigma1: s1,
        beta0: b0,
        beta1: b1,
        beta2: 0.1,
    })
}

/// Everything needed to fit the Gaussian model.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSpec {
    pub target: TargetKind,
    pub prior: PriorSpec,
    pub sampler: SamplerSettings,
    pub gmm: Option<GmmConfig>,
    /// Overrides the dataset's own auxiliary moments.
    pub aux: Option<AuxiliaryMoments>,
}

impl Default for PosteriorSpec {
    fn default() -> Self {
        Self { target: TargetKind::MarginalBayes, prior: PriorSpec::default(), sampler: SamplerSettings::default(), gmm: None, aux: None }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub chains: Vec<PosteriorDraws>,
    pub pooled: PosteriorDraws,
    pub diagnostics: Option<ConvergenceReport>,
    pub aux: Option<AuxiliaryMoments>,
    pub weight: Option<Vec<Vec<f64>>>,
    pub initial: GaussianModelParams,
}

impl GaussianFit {
    /// Posterior means in [`GaussianModelParams::NAMES`] order.
    pub fn posterior_mean(&self) -> Vec<f64> {
        let n = self.pooled.retained() as f64;
        (0..GaussianModelParams::DIM).map(|j| self.pooled.column(j).iter().sum::<f64>() / n).collect()
    }

    pub fn draws_as_params(&self) -> Vec<GaussianModelParams> {
        self.pooled
            .parameter_draws
            .iter()
            .map(|r| GaussianModelParams::from_slice(r).expect("Gaussian layout"))
            .collect()
    }
}

/// Auxiliary moments for a fit: explicit override, then the dataset's own,
/// then estimates from the control arm.
pub fn resolve_aux(data: &Dataset, explicit: Option<&AuxiliaryMoments>) -> Result<AuxiliaryMoments> {
    if let Some(a) = explicit.or(data.aux.as_ref()) {
        a.validate(data.d)?;
        return Ok(a.clone());
    }
    aux_from_control_arm(data)
}

/// Runs all chains for `spec` on `data`; for `TWO_STEP` a pilot fit with the
/// identity weight supplies the moment covariance.
pub fn fit_gaussian(data: &Dataset, spec: &PosteriorSpec, seed: u64) -> Result<GaussianFit> {
    spec.sampler.validate()?;
    let gmm_term = match spec.target {
        TargetKind::QuasiBayes => {
            let cfg = spec.gmm.clone().unwrap_or_default();
            let aux = resolve_aux(data, spec.aux.as_ref())?;
            let k = crate::gmm::MomentReference::from_aux(&aux, cfg.include_y0_squared)?.len();
            let weight = match cfg.weight_matrix {
                WeightSpec::TwoStep => {
                    let pilot_cfg = GmmConfig { weight_matrix: WeightSpec::Identity, ..cfg.clone() };
                    let pilot = GmmTerm { config: pilot_cfg.clone(), aux: aux.clone(), weight: DMatrix::identity(k, k) };
                    let t = GaussianTarget::new(data, TargetKind::QuasiBayes, spec.prior.clone(), Some(pilot))?;
                    let pilot_settings = SamplerSettings { chains: 1, ..spec.sampler.clone() };
                    let draws = run_chains(&t, &pilot_settings, seed ^ 0x5EED_0F_F17)?;
                    let pooled = PosteriorDraws::pooled(&draws)?;
                    let n = pooled.retained() as f64;
                    let mean: Vec<f64> = (0..GaussianModelParams::DIM).map(|j| pooled.column(j).iter().sum::<f64>() / n).collect();
                    let psi = GaussianModelParams::from_slice(&mean)?;
                    two_step_weight(&gaussian_moments(&psi, data, &pilot_cfg, &aux)?)?
                }
                _ => cfg.weight(k)?,
            };
            Some(GmmTerm { config: cfg, aux, weight })
        }
        _ => None,
    };
    let aux_used = gmm_term.as_ref().map(|g| g.aux.clone());
    let weight_rows = gmm_term
        .as_ref()
        .map(|g| (0..g.weight.nrows()).map(|i| g.weight.row(i).iter().copied().collect()).collect());
    let target = GaussianTarget::new(data, spec.target, spec.prior.clone(), gmm_term)?;
    let chains = run_chains(&target, &spec.sampler, seed)?;
    let pooled = PosteriorDraws::pooled(&chains)?;
    let diagnostics = convergence_diagnostics(&chains).ok();
    Ok(GaussianFit { chains, pooled, diagnostics, aux: aux_used, weight: weight_rows, initial: target.init })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_gaussian_study, SimulationConfig};

    fn data(n: usize, seed: u64) -> Dataset {
        simulate_gaussian_study(&SimulationConfig::gaussian(n, GaussianModelParams::simulation_design(), seed)).unwrap()
    }

    #[test]
    fn unconstrained_round_trip() {
        let p = GaussianModelParams::simulation_design();
        let back = from_unconstrained(&to_unconstrained(&p));
        for (a, b) in p.to_vec().iter().zip(back.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_values_are_finite_and_identified() {
        let d = data(1000, 3);
        let init = initial_values(&d).unwrap();
        assert_eq!(init.beta2, 0.1);
        assert_eq!((init.theta12, init.theta13), (0.0, 0.0));
        assert!((init.theta00 - 1.0).abs() < 0.1 && (init.theta01 - 0.6).abs() < 0.1);
        let t = GaussianTarget::new(&d, TargetKind::MarginalBayes, PriorSpec::default(), None).unwrap();
        assert!(t.log_density(&t.initial(), &[]).is_finite());
    }

    #[test]
    fn quasi_needs_gmm() {
        let d = data(200, 1);
        assert!(GaussianTarget::new(&d, TargetKind::QuasiBayes, PriorSpec::default(), None).is_err());
    }

    #[test]
    fn augmented_density_uses_latents() {
        let d = data(300, 2);
        let t = GaussianTarget::new(&d, TargetKind::AugmentedBayes, PriorSpec::default(), None).unwrap();
        let theta = to_unconstrained(&GaussianModelParams::simulation_design());
        let lat = t.initial_latent(&theta);
        assert_eq!(lat.len(), d.count(UnitPattern::Treated));
        let a = t.log_density(&theta, &lat);
        let shifted: Vec<f64> = lat.iter().map(|v| v + 1.0).collect();
        assert!(a.is_finite() && a != t.log_density(&theta, &shifted));
    }

    #[test]
    fn target_parses() {
        assert_eq!("marginal".parse::<TargetKind>().unwrap(), TargetKind::MarginalBayes);
        assert_eq!("QUASI_BAYES".parse::<TargetKind>().unwrap(), TargetKind::QuasiBayes);
        assert!("hmc".parse::<TargetKind>().is_err());
    }
}
