//! Synthetic datasets from the Gaussian design and the censored Tobit–Gumbel design.
//!
//! Each unit's variables come from streams keyed by `(seed, unit index, tag)`;
//! units are generated in parallel and the output is independent of scheduling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censored::TobitGumbelParams;
use crate::error::{HteError, Result};
use crate::gmm::{AuxSource, AuxiliaryMoments};
use crate::model::{prob_treated, Dataset, GaussianModelParams, Setup, UnitRecord};
use crate::numeric::{sigmoid, Gumbel, QuadratureRule};
use crate::rng::{keyed_rng, tag};

pub const DEFAULT_ARM_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "camelCase")]
pub enum Dgp {
    Gaussian(GaussianModelParams),
    TobitGumbel(TobitGumbelParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n: usize,
    pub dgp: Dgp,
    pub x_sd: f64,
    pub seed: u64,
    pub setup: Setup,
    /// `P(r = 1)` for setups with a control arm / population sample.
    pub arm_probability: f64,
}

impl SimulationConfig {
    pub fn gaussian(n: usize, dgp: GaussianModelParams, seed: u64) -> Self {
        Self { n, dgp: Dgp::Gaussian(dgp), x_sd: 1.5, seed, setup: Setup::RctOneSided, arm_probability: DEFAULT_ARM_PROBABILITY }
    }

    pub fn tobit_gumbel(n: usize, dgp: TobitGumbelParams, seed: u64) -> Self {
        Self { n, dgp: Dgp::TobitGumbel(dgp), x_sd: 1.0, seed, setup: Setup::RctOneSided, arm_probability: DEFAULT_ARM_PROBABILITY }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(HteError::Config("simulation needs n >= 1".into()));
        }
        if !(self.x_sd > 0.0) {
            return Err(HteError::Config("xSd must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.arm_probability) {
            return Err(HteError::Config("armProbability must lie in [0,1]".into()));
        }
        Ok(())
    }

    fn draws_arm(&self, i: u64) -> bool {
        match self.setup {
            Setup::ObsMacro => true,
            _ => keyed_rng(self.seed, i, tag::ARM).gen::<f64>() < self.arm_probability,
        }
    }
}

fn normal(seed: u64, i: u64, t: u64) -> f64 {
    StandardNormal.sample(&mut keyed_rng(seed, i, t))
}

fn uniform_open(seed: u64, i: u64, t: u64) -> f64 {
    // (0, 1): never exactly 0, so inverse-cdf transforms stay finite.
    let u: f64 = keyed_rng(seed, i, t).gen();
    u.max(f64::MIN_POSITIVE)
}

fn make_unit(id: String, x: Vec<f64>, r: bool, z: bool, y0: f64, y1: f64) -> UnitRecord {
    match (r, z) {
        (true, true) => UnitRecord::treated(id, x, y1),
        (true, false) => UnitRecord::untreated(id, x, y0),
        (false, _) => UnitRecord::control_arm(id, x, y0),
    }
}

/// Population moments of the Gaussian design, used as macro-level input.
pub fn gaussian_population_moments(dgp: &GaussianModelParams, x_sd: f64) -> AuxiliaryMoments {
    let quad = QuadratureRule::default();
    let mean_y0 = dgp.mu0(0.0);
    let var_y0 = dgp.theta01 * dgp.theta01 * x_sd * x_sd + dgp.sigma0 * dgp.sigma0;
    AuxiliaryMoments {
        mean_y0,
        mean_x: vec![0.0],
        prob_z0: 1.0 - prob_treated(dgp, x_sd, &quad),
        moment_y0_sq: Some(var_y0 + mean_y0 * mean_y0),
        source: AuxSource::MacroGiven,
    }
}

pub fn simulate_gaussian_study(cfg: &SimulationConfig) -> Result<Dataset> {
    cfg.validate()?;
    let dgp = match &cfg.dgp {
        Dgp::Gaussian(p) => *p,
        Dgp::TobitGumbel(_) => return Err(HteError::Config("simulate_gaussian_study needs a Gaussian DGP".into())),
    };
    dgp.validate()?;
    let s = cfg.seed;
    let units: Vec<UnitRecord> = (0..cfg.n as u64)
        .into_par_iter()
        .map(|i| {
            let x = cfg.x_sd * normal(s, i, tag::COVARIATE);
            let y0 = dgp.mu0(x) + dgp.sigma0 * normal(s, i, tag::UNTREATED);
            let y1 = dgp.mu1(y0, x) + dgp.sigma1 * normal(s, i, tag::TREATED);
            let z = uniform_open(s, i, tag::ASSIGNMENT) < sigmoid(dgp.propensity_index(y0, x));
            make_unit(format!("u{i}"), vec![x], cfg.draws_arm(i), z, y0, y1)
        })
        .collect();
    let aux = (cfg.setup == Setup::ObsMacro).then(|| gaussian_population_moments(&dgp, cfg.x_sd));
    Dataset::new(units, 1, cfg.setup, aux)
}

pub fn simulate_tobit_gumbel_study(cfg: &SimulationConfig) -> Result<Dataset> {
    cfg.validate()?;
    let p = match &cfg.dgp {
        Dgp::TobitGumbel(p) => p.clone(),
        Dgp::Gaussian(_) => return Err(HteError::Config("simulate_tobit_gumbel_study needs a Tobit–Gumbel DGP".into())),
    };
    p.validate()?;
    if cfg.setup == Setup::ObsMacro {
        return Err(HteError::Config("the censored model is simulated with a control arm (RCT_ONE_SIDED or OBS_MICRO)".into()));
    }
    let d = p.dim();
    let s = cfg.seed;
    let units: Vec<UnitRecord> = (0..cfg.n as u64)
        .into_par_iter()
        .map(|i| {
            let mut xr = keyed_rng(s, i, tag::COVARIATE);
            let x: Vec<f64> = (0..d).map(|_| cfg.x_sd * crate::rng::std_normal(&mut xr)).collect();
            let g = Gumbel::new_unchecked(p.mu0(&x), p.sigma0);
            let y0s = g.quantile(uniform_open(s, i, tag::UNTREATED));
            let y1s = p.mu1(y0s, &x) + p.sigma1 * normal(s, i, tag::TREATED);
            let z = uniform_open(s, i, tag::ASSIGNMENT) < sigmoid(p.propensity_index(y0s, &x));
            make_unit(format!("u{i}"), x, cfg.draws_arm(i), z, y0s.max(0.0), y1s.max(0.0))
        })
        .collect();
    Dataset::new(units, d, cfg.setup, None)
}

/// Dispatches on the DGP family.
pub fn simulate(cfg: &SimulationConfig) -> Result<Dataset> {
    match cfg.dgp {
        Dgp::Gaussian(_) => simulate_gaussian_study(cfg),
        Dgp::TobitGumbel(_) => simulate_tobit_gumbel_study(cfg),
    }
}
