//! Moment conditions on the untreated outcome and the GMM objective that
//! injects them into the quasi-posterior.
//!
//! With `p0(y0, x) = 1 − p(z=1|y0,x)`, the moment function is
//!
//! ```text
//! m0 = ( 1/p0 − 1/P(z=0),  (x − E[x]) / p0,  (y0 − E[y0]) / p0  [, (y0² − E[y0²]) / p0] )
//! ```
//!
//! which has mean zero over the `z = 0` population at the true parameters.
//! The objective is `Q0 = −(N0/2) m̄' W0 m̄` with `m̄` averaged over the
//! treatment-arm untreated units (`r = 1, z = 0`). `N0` is the number of
//! those units; scaling by the control-arm size instead would only rescale
//! the weight matrix.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HteError, Result};
use crate::model::{Dataset, GaussianModelParams, UnitPattern};
use crate::numeric::{pairwise_sum, sigmoid};

pub const PROPENSITY_CLAMP: f64 = 1e-12;
pub const TWO_STEP_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuxSource {
    #[default]
    MacroGiven,
    EstimatedFromControlArm,
}

/// Known (or control-arm-estimated) moments of the untreated outcome and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AuxiliaryMoments {
    pub mean_y0: f64,
    pub mean_x: Vec<f64>,
    pub prob_z0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_y0_sq: Option<f64>,
    #[serde(default)]
    pub source: AuxSource,
}

impl AuxiliaryMoments {
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.prob_z0 > 0.0 && self.prob_z0 < 1.0) {
            return Err(HteError::Config(format!("probZ0 must lie in (0,1), got {}", self.prob_z0)));
        }
        if self.mean_x.len() != d {
            return Err(HteError::Shape { what: "meanX", expected: d, actual: self.mean_x.len() });
        }
        if !self.mean_y0.is_finite() || self.mean_x.iter().any(|v| !v.is_finite()) {
            return Err(HteError::Config("auxiliary moments must be finite".into()));
        }
        Ok(())
    }

    /// Parses the JSON document form (`meanY0`, `meanX`, `probZ0`, optional `momentY0Sq`).
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        for key in ["meanY0", "meanX", "probZ0"] {
            if v.get(key).is_none() {
                return Err(HteError::Usage(format!("auxiliary moments missing required key '{key}'")));
            }
        }
        Ok(serde_json::from_value(v)?)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WeightSpec {
    #[default]
    Identity,
    /// Inverse empirical moment covariance at a pilot estimate.
    TwoStep,
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MomentSubsample {
    /// `r = 1, z = 0` units.
    #[default]
    TreatmentArmUntreated,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GmmConfig {
    #[serde(default)]
    pub weight_matrix: WeightSpec,
    #[serde(default)]
    pub moment_subsample: MomentSubsample,
    /// Adds the `E[y0²]` moment (needs `momentY0Sq` in the auxiliary moments).
    #[serde(default)]
    pub include_y0_squared: bool,
}

impl GmmConfig {
    /// The weight matrix for `k` moments. `TWO_STEP` must be resolved first.
    pub fn weight(&self, k: usize) -> Result<DMatrix<f64>> {
        match &self.weight_matrix {
            WeightSpec::Identity => Ok(DMatrix::identity(k, k)),
            WeightSpec::TwoStep => Err(HteError::Config(
                "TWO_STEP weight matrix must be resolved from a pilot fit before evaluating the objective".into(),
            )),
            WeightSpec::Explicit(rows) => {
                let m = matrix_from_rows(rows)?;
                if m.nrows() != k {
                    return Err(HteError::Shape { what: "GMM weight matrix", expected: k, actual: m.nrows() });
                }
                validate_psd(&m)?;
                Ok(m)
            }
        }
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(HteError::Config("weight matrix must be square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn validate_psd(m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(HteError::Config("weight matrix must be symmetric".into()));
            }
        }
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(HteError::Config("weight matrix must be positive semidefinite".into()));
    }
    Ok(())
}

thread_local! {
    static CLAMP_HITS: Cell<u64> = const { Cell::new(0) };
}

/// Number of propensity clamps applied on this thread since the last reset.
pub fn clamp_hits() -> u64 {
    CLAMP_HITS.with(|c| c.get())
}

pub fn reset_clamp_hits() {
    CLAMP_HITS.with(|c| c.set(0));
}

/// Reference values the moment function centers on.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReference<'a> {
    pub mean_x: &'a [f64],
    pub prob_z0: f64,
    pub mean_y0: f64,
    pub moment_y0_sq: Option<f64>,
}

impl<'a> MomentReference<'a> {
    pub fn from_aux(aux: &'a AuxiliaryMoments, include_y0_squared: bool) -> Result<Self> {
        let moment_y0_sq = if include_y0_squared {
            Some(aux.moment_y0_sq.ok_or_else(|| {
                HteError::Usage("the quadratic y0 moment requires auxiliary key 'momentY0Sq'".into())
            })?)
        } else {
            None
        };
        Ok(Self { mean_x: &aux.mean_x, prob_z0: aux.prob_z0, mean_y0: aux.mean_y0, moment_y0_sq })
    }

    pub fn len(&self) -> usize {
        self.mean_x.len() + 2 + usize::from(self.moment_y0_sq.is_some())
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Moment vector given the treatment propensity `p1 = p(z=1|y0,x)`; writes into `out`.
pub fn moment_from_propensity(
    p1: f64,
    y0: f64,
    x: &[f64],
    reference: &MomentReference<'_>,
    unit: &str,
    out: &mut [f64],
) -> Result<()> {
    if x.len() != reference.mean_x.len() {
        return Err(HteError::Shape { what: "moment covariates", expected: reference.mean_x.len(), actual: x.len() });
    }
    if out.len() != reference.len() {
        return Err(HteError::Shape { what: "moment output", expected: reference.len(), actual: out.len() });
    }
    if !(p1 < 1.0) {
        return Err(HteError::SingularWeight { unit: unit.to_string() });
    }
    let mut p0 = 1.0 - p1;
    if p0 < PROPENSITY_CLAMP || p0 > 1.0 - PROPENSITY_CLAMP {
        p0 = p0.clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP);
        CLAMP_HITS.with(|c| c.set(c.get() + 1));
    }
    let inv = 1.0 / p0;
    let d = x.len();
    out[0] = inv - 1.0 / reference.prob_z0;
    for k in 0..d {
        out[1 + k] = (x[k] - reference.mean_x[k]) * inv;
    }
    out[1 + d] = (y0 - reference.mean_y0) * inv;
    if let Some(m2) = reference.moment_y0_sq {
        out[2 + d] = (y0 * y0 - m2) * inv;
    }
    Ok(())
}

/// Moment vector of the Gaussian model, length `d + 2`.
pub fn moment_vector(y0: f64, x: &[f64], psi: &GaussianModelParams, aux: &AuxiliaryMoments) -> Result<Vec<f64>> {
    let reference = MomentReference::from_aux(aux, false)?;
    gaussian_moment(y0, x, psi, &reference, "<unnamed>")
}

pub(crate) fn gaussian_moment(
    y0: f64,
    x: &[f64],
    psi: &GaussianModelParams,
    reference: &MomentReference<'_>,
    unit: &str,
) -> Result<Vec<f64>> {
    if x.len() != 1 {
        return Err(HteError::Shape { what: "Gaussian-model covariates", expected: 1, actual: x.len() });
    }
    let p1 = sigmoid(psi.propensity_index(y0, x[0]));
    let mut out = vec![0.0; reference.len()];
    moment_from_propensity(p1, y0, x, reference, unit, &mut out)?;
    Ok(out)
}

/// `−(n0/2) m̄' W m̄`.
pub fn quadratic_objective(mbar: &[f64], n0: usize, w: &DMatrix<f64>) -> f64 {
    let m = DVector::from_column_slice(mbar);
    -(n0 as f64) / 2.0 * (m.transpose() * w * &m)[(0, 0)]
}

/// Units entering the empirical moment average.
pub fn moment_subsample<'a>(data: &'a Dataset, _rule: MomentSubsample) -> Vec<&'a crate::model::UnitRecord> {
    data.iter_pattern(UnitPattern::Untreated).collect()
}

/// Per-unit moment vectors of the Gaussian model over the configured subsample.
pub fn gaussian_moments(
    psi: &GaussianModelParams,
    data: &Dataset,
    cfg: &GmmConfig,
    aux: &AuxiliaryMoments,
) -> Result<Vec<Vec<f64>>> {
    let reference = MomentReference::from_aux(aux, cfg.include_y0_squared)?;
    let units = moment_subsample(data, cfg.moment_subsample);
    if units.is_empty() {
        return Err(HteError::Config("moment subsample (r=1, z=0 units) is empty".into()));
    }
    units
        .iter()
        .map(|u| gaussian_moment(u.y0.expect("validated untreated unit"), &u.x, psi, &reference, &u.id))
        .collect()
}

/// Column-wise pairwise mean of per-unit moment vectors.
pub fn mean_moment(moments: &[Vec<f64>]) -> Vec<f64> {
    let k = moments.first().map_or(0, Vec::len);
    let n = moments.len() as f64;
    (0..k)
        .map(|j| {
            let col: Vec<f64> = moments.iter().map(|m| m[j]).collect();
            pairwise_sum(&col) / n
        })
        .collect()
}

/// `Q0(ψ) = −(N0/2) m̄' W0 m̄` for the Gaussian model.
pub fn gmm_objective(psi: &GaussianModelParams, data: &Dataset, cfg: &GmmConfig, aux: &AuxiliaryMoments) -> Result<f64> {
    let moments = gaussian_moments(psi, data, cfg, aux)?;
    let mbar = mean_moment(&moments);
    let w = cfg.weight(mbar.len())?;
    Ok(quadratic_objective(&mbar, moments.len(), &w))
}

/// Two-step weight: inverse of the empirical moment covariance plus a small ridge.
pub fn two_step_weight(moments: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let k = moments.first().map_or(0, Vec::len);
    let n = moments.len();
    if n < 2 {
        return Err(HteError::Config("two-step weight needs at least two moment observations".into()));
    }
    let mbar = mean_moment(moments);
    let mut s = DMatrix::<f64>::zeros(k, k);
    for m in moments {
        for i in 0..k {
            for j in 0..k {
                s[(i, j)] += (m[i] - mbar[i]) * (m[j] - mbar[j]);
            }
        }
    }
    s /= n as f64;
    for i in 0..k {
        s[(i, i)] += TWO_STEP_RIDGE;
    }
    s.try_inverse()
        .ok_or_else(|| HteError::Numerical { context: "two-step weight".into(), detail: "moment covariance is singular".into() })
}

/// Estimates the auxiliary moments from the control arm (`r = 0`) and the
/// untreated share of the treatment arm.
pub fn aux_from_control_arm(data: &Dataset) -> Result<AuxiliaryMoments> {
    let controls: Vec<_> = data.iter_pattern(UnitPattern::ControlArm).collect();
    if controls.is_empty() {
        return Err(HteError::Usage(
            "no r=0 units: auxiliary moments must be supplied as MACRO_GIVEN input".into(),
        ));
    }
    let n = controls.len() as f64;
    let y0: Vec<f64> = controls.iter().map(|u| u.y0.expect("validated")).collect();
    let y0sq: Vec<f64> = y0.iter().map(|v| v * v).collect();
    let mean_x = (0..data.d)
        .map(|k| pairwise_sum(&controls.iter().map(|u| u.x[k]).collect::<Vec<_>>()) / n)
        .collect();
    let arm: Vec<_> = data.units.iter().filter(|u| u.r).collect();
    if arm.is_empty() {
        return Err(HteError::Data("no r=1 units to estimate P(z=0)".into()));
    }
    let prob_z0 = arm.iter().filter(|u| u.z == Some(false)).count() as f64 / arm.len() as f64;
    Ok(AuxiliaryMoments {
        mean_y0: pairwise_sum(&y0) / n,
        mean_x,
        prob_z0,
        moment_y0_sq: Some(pairwise_sum(&y0sq) / n),
        source: AuxSource::EstimatedFromControlArm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Setup, UnitRecord};
    use approx::assert_abs_diff_eq;

    fn aux(prob_z0: f64) -> AuxiliaryMoments {
        AuxiliaryMoments { mean_y0: 1.0, mean_x: vec![0.0], prob_z0, moment_y0_sq: None, source: AuxSource::MacroGiven }
    }

    #[test]
    fn moment_vector_examples() {
        let psi = GaussianModelParams::simulation_design();
        let m = moment_vector(1.0, &[0.0], &psi, &aux(0.5)).unwrap();
        assert_eq!(m.len(), 3);
        // 1/(1 − logistic(−0.6)) − 2
        let expected = 1.0 / (1.0 - sigmoid(-0.6)) - 2.0;
        assert_abs_diff_eq!(m[0], expected, epsilon = 1e-14);
        assert_abs_diff_eq!(m[0], -0.451_188, epsilon = 1e-6);
        assert_eq!(m[1], 0.0);
        assert_eq!(m[2], 0.0);

        // Centered at the reference: p(z=0|y0,x) equal to probZ0.
        let p0 = 1.0 - sigmoid(psi.propensity_index(1.0, 0.0));
        let m = moment_vector(1.0, &[0.0], &psi, &aux(p0)).unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn singular_propensity_names_the_unit() {
        let reference = MomentReference { mean_x: &[0.0], prob_z0: 0.5, mean_y0: 0.0, moment_y0_sq: None };
        let mut out = [0.0; 3];
        let err = moment_from_propensity(1.0, 0.0, &[0.0], &reference, "u17", &mut out).unwrap_err();
        assert!(err.to_string().contains("u17"));
        reset_clamp_hits();
        moment_from_propensity(1.0 - 1e-14, 0.0, &[0.0], &reference, "u18", &mut out).unwrap();
        assert_eq!(clamp_hits(), 1);
        assert_abs_diff_eq!(out[0], 1e12 - 2.0, epsilon = 1e-3);
    }

    #[test]
    fn objective_quadratic_form() {
        let w = DMatrix::identity(3, 3);
        assert_abs_diff_eq!(quadratic_objective(&[0.1, 0.0, -0.2], 2, &w), -0.05, epsilon = 1e-15);
        assert_eq!(quadratic_objective(&[0.0; 3], 10, &w), 0.0);
    }

    #[test]
    fn weight_validation() {
        let cfg = GmmConfig { weight_matrix: WeightSpec::Explicit(vec![vec![1.0, 2.0], vec![2.0, 1.0]]), ..Default::default() };
        assert!(cfg.weight(2).is_err()); // indefinite
        let cfg = GmmConfig { weight_matrix: WeightSpec::Explicit(vec![vec![1.0, 0.5], vec![0.0, 1.0]]), ..Default::default() };
        assert!(cfg.weight(2).is_err()); // asymmetric
        let cfg = GmmConfig { weight_matrix: WeightSpec::TwoStep, ..Default::default() };
        assert!(cfg.weight(2).is_err());
    }

    #[test]
    fn empty_subsample_is_config_error() {
        let data = Dataset::new(vec![UnitRecord::treated("t", vec![0.0], 1.0)], 1, Setup::ObsMicro, None).unwrap();
        let r = gmm_objective(&GaussianModelParams::simulation_design(), &data, &GmmConfig::default(), &aux(0.5));
        assert!(matches!(r, Err(HteError::Config(_))));
    }

    #[test]
    fn aux_from_control_arm_examples() {
        let units = vec![
            UnitRecord::control_arm("c1", vec![0.0], 1.0),
            UnitRecord::control_arm("c2", vec![2.0], 3.0),
            UnitRecord::treated("t1", vec![0.0], 5.0),
            UnitRecord::untreated("u1", vec![0.0], 0.0),
            UnitRecord::untreated("u2", vec![0.0], 0.0),
            UnitRecord::treated("t2", vec![0.0], 5.0),
        ];
        let data = Dataset::new(units, 1, Setup::RctOneSided, None).unwrap();
        let a = aux_from_control_arm(&data).unwrap();
        assert_eq!(a.mean_y0, 2.0);
        assert_eq!(a.mean_x, vec![1.0]);
        assert_eq!(a.prob_z0, 0.5);
        assert_eq!(a.source, AuxSource::EstimatedFromControlArm);

        let none = Dataset::new(vec![UnitRecord::treated("t", vec![0.0], 1.0)], 1, Setup::ObsMicro, None).unwrap();
        assert!(matches!(aux_from_control_arm(&none), Err(HteError::Usage(_))));
    }

    #[test]
    fn aux_json_requires_keys() {
        let ok = AuxiliaryMoments::from_json(r#"{"meanY0": 1.0, "meanX": [0.0], "probZ0": 0.6}"#).unwrap();
        assert_eq!(ok.prob_z0, 0.6);
        let err = AuxiliaryMoments::from_json(r#"{"meanY0": 1.0, "meanX": [0.0]}"#).unwrap_err();
        assert!(err.to_string().contains("probZ0"));
        assert!(AuxiliaryMoments::from_json(r#"{"meanY0": 1, "meanX": [0], "probZ0": 0.5, "bogus": 1}"#).is_err());
    }
}
