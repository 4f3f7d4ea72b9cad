//! Posterior functionals of the Gaussian model: the HTE curve, ATE/ATT/ATU,
//! odds weights and the welfare of a covariate-based treatment rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HteError, Result};
use crate::gmm::AuxiliaryMoments;
use crate::model::{Dataset, GaussianModelParams, UnitPattern};
use crate::numeric::{normal_log_density, sigmoid, LOG_FLOOR};
use crate::sampler::PosteriorDraws;

pub const DEFAULT_GRID_POINTS: usize = 101;

/// Posterior mean, sd and equal-tailed 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EstimandSummary {
    pub mean: f64,
    pub sd: f64,
    pub ci95: (f64, f64),
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl EstimandSummary {
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(HteError::Undefined("no draws to summarize".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self { mean, sd, ci95: (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975)) })
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci95.0 <= truth && truth <= self.ci95.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HteCurve {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub band95: Vec<(f64, f64)>,
    /// Grid points where every covariate weight underflowed for some draw.
    pub flagged: Vec<bool>,
}

impl HteCurve {
    /// CSV with columns `y0,mean,lo95,hi95`; flagged points are written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("y0,mean,lo95,hi95\n");
        for i in 0..self.grid.len() {
            if self.flagged[i] {
                s.push_str(&format!("{},NA,NA,NA\n", self.grid[i]));
            } else {
                s.push_str(&format!("{},{},{},{}\n", self.grid[i], self.mean[i], self.band95[i].0, self.band95[i].1));
            }
        }
        s
    }

    /// Summarizes a `draws × grid` matrix of curve values.
    pub fn from_values(grid: Vec<f64>, values: &[Vec<f64>], flagged: Vec<bool>) -> Result<Self> {
        if values.is_empty() {
            return Err(HteError::Undefined("no draws for the HTE curve".into()));
        }
        let mut mean = Vec::with_capacity(grid.len());
        let mut band = Vec::with_capacity(grid.len());
        for j in 0..grid.len() {
            if flagged[j] {
                mean.push(f64::NAN);
                band.push((f64::NAN, f64::NAN));
                continue;
            }
            let col: Vec<f64> = values.iter().map(|r| r[j]).collect();
            let s = EstimandSummary::from_samples(&col)?;
            mean.push(s.mean);
            band.push(s.ci95);
        }
        Ok(Self { grid, mean, band95: band, flagged })
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(HteError::Config("HTE grid is empty".into()));
    }
    if grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HteError::Config("HTE grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// `points` equally spaced values between the 1st and 99th percentiles of the observed `y0`.
pub fn default_grid(data: &Dataset, points: usize) -> Result<Vec<f64>> {
    let mut y0: Vec<f64> = data.units.iter().filter_map(|u| u.y0).collect();
    if y0.len() < 2 || points < 2 {
        return Err(HteError::Config("default HTE grid needs at least two observed y0 values and two points".into()));
    }
    y0.sort_by(f64::total_cmp);
    let (lo, hi) = (quantile_sorted(&y0, 0.01), quantile_sorted(&y0, 0.99));
    if !(hi > lo) {
        return Err(HteError::Config("observed y0 has no spread for an HTE grid".into()));
    }
    Ok((0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect())
}

pub fn gaussian_draws(draws: &PosteriorDraws) -> Result<Vec<GaussianModelParams>> {
    draws.parameter_draws.iter().map(|r| GaussianModelParams::from_slice(r)).collect()
}

/// `E[y1 | y0] − y0` for one parameter value, reweighting the sample covariates
/// by `p(y0 | x_i)`. `None` when all weights underflow.
pub fn hte_at(psi: &GaussianModelParams, xs: &[f64], y0: f64) -> Option<f64> {
    let lw: Vec<f64> = xs.iter().map(|&x| normal_log_density(y0, psi.mu0(x), psi.sigma0)).collect();
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > LOG_FLOOR) {
        return None;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &l) in xs.iter().zip(&lw) {
        let w = (l - max).exp();
        num += w * psi.mu1(y0, x);
        den += w;
    }
    Some(num / den - y0)
}

fn covariates(data: &Dataset) -> Result<Vec<f64>> {
    if data.d != 1 {
        return Err(HteError::Shape { what: "Gaussian-model covariate dimension", expected: 1, actual: data.d });
    }
    Ok(data.units.iter().map(|u| u.x[0]).collect())
}

/// Pointwise posterior mean and 95% band of `HTE(y0)` over `grid`.
pub fn hte_curve(draws: &PosteriorDraws, data: &Dataset, grid: &[f64]) -> Result<HteCurve> {
    hte_curve_from_params(&gaussian_draws(draws)?, data, grid)
}

pub fn hte_curve_from_params(params: &[GaussianModelParams], data: &Dataset, grid: &[f64]) -> Result<HteCurve> {
    validate_grid(grid)?;
    if params.is_empty() {
        return Err(HteError::Undefined("no draws for the HTE curve".into()));
    }
    let xs = covariates(data)?;
    if xs.is_empty() {
        return Err(HteError::Undefined("no covariates to reweight".into()));
    }
    let rows: Vec<Vec<Option<f64>>> =
        params.par_iter().map(|p| grid.iter().map(|&y0| hte_at(p, &xs, y0)).collect()).collect();
    let flagged: Vec<bool> = (0..grid.len()).map(|j| rows.iter().any(|r| r[j].is_none())).collect();
    let values: Vec<Vec<f64>> = rows.into_iter().map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect();
    HteCurve::from_values(grid.to_vec(), &values, flagged)
}

/// Model-implied `E[y1 | x] = θ10 + θ11 x + θ12 μ0(x) + θ13 (μ0(x)² + σ0²)`.
#[inline]
pub fn treated_mean_given_x(psi: &GaussianModelParams, x: f64) -> f64 {
    let m = psi.mu0(x);
    psi.theta10 + psi.theta11 * x + psi.theta12 * m + psi.theta13 * (m * m + psi.sigma0 * psi.sigma0)
}

/// Normalized odds weights `g/(1−g)` over the `r = 1, z = 0` units, in dataset order.
pub fn odds_weights(data: &Dataset, psi: &GaussianModelParams) -> Result<Vec<f64>> {
    let units: Vec<_> = data.iter_pattern(UnitPattern::Untreated).collect();
    if units.is_empty() {
        return Err(HteError::Undefined("odds weights need r=1, z=0 units".into()));
    }
    // log odds = index; normalize in log space.
    let mut lo = Vec::with_capacity(units.len());
    for u in &units {
        let t = psi.propensity_index(u.y0.expect("validated"), u.x[0]);
        if sigmoid(t) >= 1.0 {
            return Err(HteError::SingularWeight { unit: u.id.clone() });
        }
        lo.push(t);
    }
    Ok(normalize_log_weights(&lo))
}

pub fn normalize_log_weights(lw: &[f64]) -> Vec<f64> {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Per-draw values of the three averaged estimands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimandDraw {
    pub ate: f64,
    pub att: f64,
    pub atu: f64,
}

/// ATE, ATT and ATU for one parameter value.
///
/// - `ATE = (1/N) Σ E[y1 | x_i] − E[y0]`, with `E[y0]` from `aux` or else
///   model-implied over the sample covariates.
/// - `ATT = mean(y1 | z=1) − E[y0 | z=1]`, the latter from `treated_y0`
///   (augmented latents) when given, else odds-weighted untreated outcomes.
/// - `ATU = mean over r=1, z=0 units of μ1(y0_i, x_i) − mean(y0 | z=0)`.
pub fn estimands_at(
    psi: &GaussianModelParams,
    data: &Dataset,
    aux: Option<&AuxiliaryMoments>,
    treated_y0: Option<&[f64]>,
) -> Result<EstimandDraw> {
    let xs = covariates(data)?;
    if xs.is_empty() {
        return Err(HteError::Undefined("empty dataset".into()));
    }
    let n = xs.len() as f64;
    let ey1 = xs.iter().map(|&x| treated_mean_given_x(psi, x)).sum::<f64>() / n;
    let ey0 = match aux {
        Some(a) => a.mean_y0,
        None => xs.iter().map(|&x| psi.mu0(x)).sum::<f64>() / n,
    };

    let y1_treated: Vec<f64> = data.iter_pattern(UnitPattern::Treated).map(|u| u.y1.expect("validated")).collect();
    if y1_treated.is_empty() {
        return Err(HteError::Undefined("ATT needs at least one treated (r=1, z=1) unit".into()));
    }
    let untreated: Vec<_> = data.iter_pattern(UnitPattern::Untreated).collect();
    if untreated.is_empty() {
        return Err(HteError::Undefined("ATU needs at least one r=1, z=0 unit".into()));
    }
    let mean_y1_t = y1_treated.iter().sum::<f64>() / y1_treated.len() as f64;
    let ey0_t = match treated_y0 {
        Some(lat) if lat.len() == y1_treated.len() => lat.iter().sum::<f64>() / lat.len() as f64,
        Some(lat) => {
            return Err(HteError::Shape { what: "treated latent y0", expected: y1_treated.len(), actual: lat.len() })
        }
        None => {
            let w = odds_weights(data, psi)?;
            untreated.iter().zip(&w).map(|(u, w)| w * u.y0.expect("validated")).sum()
        }
    };
    let m = untreated.len() as f64;
    let mu1_u = untreated.iter().map(|u| psi.mu1(u.y0.expect("validated"), u.x[0])).sum::<f64>() / m;
    let y0_u = untreated.iter().map(|u| u.y0.expect("validated")).sum::<f64>() / m;
    Ok(EstimandDraw { ate: ey1 - ey0, att: mean_y1_t - ey0_t, atu: mu1_u - y0_u })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PosteriorEstimands {
    pub ate: EstimandSummary,
    pub att: EstimandSummary,
    pub atu: EstimandSummary,
}

/// Summaries of ATE/ATT/ATU over the retained draws. Latent draws, when
/// stored, supply `E[y0 | z=1]` for ATT.
pub fn posterior_estimands(draws: &PosteriorDraws, data: &Dataset, aux: Option<&AuxiliaryMoments>) -> Result<PosteriorEstimands> {
    let params = gaussian_draws(draws)?;
    if params.is_empty() {
        return Err(HteError::Undefined("no draws".into()));
    }
    let n_treated = data.count(UnitPattern::Treated);
    let latents = draws.latent_draws.as_ref().filter(|l| l.first().is_some_and(|r| r.len() == n_treated));
    let per: Vec<EstimandDraw> = params
        .par_iter()
        .enumerate()
        .map(|(k, p)| estimands_at(p, data, aux, latents.map(|l| l[k].as_slice())))
        .collect::<Result<_>>()?;
    let col = |f: fn(&EstimandDraw) -> f64| per.iter().map(f).collect::<Vec<_>>();
    Ok(PosteriorEstimands {
        ate: EstimandSummary::from_samples(&col(|e| e.ate))?,
        att: EstimandSummary::from_samples(&col(|e| e.att))?,
        atu: EstimandSummary::from_samples(&col(|e| e.atu))?,
    })
}

/// Welfare of treating exactly the units whose covariates satisfy `decision`, for one draw.
pub fn welfare_at(psi: &GaussianModelParams, data: &Dataset, decision: &(dyn Fn(&[f64]) -> bool + Sync)) -> Result<f64> {
    let xs = covariates(data)?;
    if xs.is_empty() {
        return Err(HteError::Undefined("empty dataset".into()));
    }
    let total: f64 = data
        .units
        .iter()
        .map(|u| if decision(&u.x) { treated_mean_given_x(psi, u.x[0]) } else { psi.mu0(u.x[0]) })
        .sum();
    Ok(total / xs.len() as f64)
}

pub fn policy_welfare(
    decision: &(dyn Fn(&[f64]) -> bool + Sync),
    draws: &PosteriorDraws,
    data: &Dataset,
) -> Result<EstimandSummary> {
    let params = gaussian_draws(draws)?;
    let vals: Vec<f64> = params.par_iter().map(|p| welfare_at(p, data, decision)).collect::<Result<_>>()?;
    EstimandSummary::from_samples(&vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Setup, UnitRecord};
    use approx::assert_abs_diff_eq;

    pub(crate) fn frozen(psi: GaussianModelParams, n: usize) -> PosteriorDraws {
        PosteriorDraws {
            names: GaussianModelParams::NAMES.iter().map(|s| s.to_string()).collect(),
            parameter_draws: vec![psi.to_vec(); n],
            unconstrained_draws: vec![psi.to_vec(); n],
            latent_draws: None,
            warmup: 0,
            total: n,
            chain_id: 0,
            acceptance_rates: Vec::new(),
            seed: 0,
        }
    }

    fn small() -> Dataset {
        Dataset::new(
            vec![
                UnitRecord::treated("a", vec![0.3], 2.0),
                UnitRecord::untreated("b", vec![-0.4], 0.5),
                UnitRecord::untreated("c", vec![1.0], 1.5),
                UnitRecord::control_arm("d", vec![0.1], 1.1),
            ],
            1,
            Setup::RctOneSided,
            None,
        )
        .unwrap()
    }

    #[test]
    fn summary_and_quantiles() {
        let s = EstimandSummary::from_samples(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert_abs_diff_eq!(s.ci95.0, 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(s.ci95.1, 4.9, epsilon = 1e-12);
        assert!(s.ci95.0 <= s.ci95.1);
        assert!(EstimandSummary::from_samples(&[]).is_err());
    }

    #[test]
    fn curve_without_x_dependence_is_exact() {
        let mut p = GaussianModelParams::simulation_design();
        p.theta11 = 0.0;
        let grid = [-1.0, 0.0, 0.5, 2.0];
        let c = hte_curve(&frozen(p, 3), &small(), &grid).unwrap();
        for (k, &y0) in grid.iter().enumerate() {
            let exact = p.theta10 + p.theta12 * y0 + p.theta13 * y0 * y0 - y0;
            assert_abs_diff_eq!(c.mean[k], exact, epsilon = 1e-12);
            assert!(c.band95[k].0 <= c.band95[k].1);
        }
    }

    #[test]
    fn far_grid_point_is_flagged() {
        let p = GaussianModelParams::simulation_design();
        let c = hte_curve(&frozen(p, 2), &small(), &[0.0, 1.0e3]).unwrap();
        assert_eq!(c.flagged, vec![false, true]);
        assert!(c.to_csv().lines().nth(2).unwrap().ends_with("NA,NA,NA"));
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[0.0, 0.0]).is_err());
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[0.0, 1.0]).is_ok());
    }

    #[test]
    fn odds_weight_examples() {
        // Propensity index chosen so g = 0.8 and 0.2 at the two untreated units (β1 = 0, β2 = 1).
        let mut p = GaussianModelParams::simulation_design();
        p.beta0 = 0.0;
        p.beta1 = 0.0;
        p.beta2 = 1.0;
        let y_hi = (0.8f64 / 0.2).ln();
        let y_lo = (0.2f64 / 0.8).ln();
        let d = Dataset::new(
            vec![UnitRecord::untreated("a", vec![0.0], y_hi), UnitRecord::untreated("b", vec![0.0], y_lo)],
            1,
            Setup::ObsMicro,
            None,
        )
        .unwrap();
        let w = odds_weights(&d, &p).unwrap();
        assert_abs_diff_eq!(w[0], 16.0 / 17.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0 / 17.0, epsilon = 1e-12);

        p.beta2 = 0.0;
        let w = odds_weights(&d, &p).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn constant_treated_mean_gives_exact_ate() {
        let mut p = GaussianModelParams::simulation_design();
        p.theta11 = 0.0;
        p.theta12 = 0.0;
        p.theta13 = 0.0;
        let aux = AuxiliaryMoments { mean_y0: 0.7, mean_x: vec![0.0], prob_z0: 0.5, moment_y0_sq: None, source: Default::default() };
        let e = estimands_at(&p, &small(), Some(&aux), None).unwrap();
        assert_abs_diff_eq!(e.ate, p.theta10 - 0.7, epsilon = 1e-14);
    }

    #[test]
    fn att_undefined_without_treated() {
        let d = Dataset::new(vec![UnitRecord::untreated("b", vec![0.0], 0.5)], 1, Setup::ObsMicro, None).unwrap();
        let r = estimands_at(&GaussianModelParams::simulation_design(), &d, None, None);
        assert!(matches!(r, Err(HteError::Undefined(_))));
    }

    #[test]
    fn welfare_extremes_differ_by_ate() {
        let p = GaussianModelParams::simulation_design();
        let d = small();
        let draws = frozen(p, 4);
        let full = policy_welfare(&|_| true, &draws, &d).unwrap();
        let empty = policy_welfare(&|_| false, &draws, &d).unwrap();
        let ate = estimands_at(&p, &d, None, None).unwrap().ate;
        assert_abs_diff_eq!(full.mean - empty.mean, ate, epsilon = 1e-10);
        let mean_mu0 = d.units.iter().map(|u| p.mu0(u.x[0])).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(empty.mean, mean_mu0, epsilon = 1e-12);
    }
}
