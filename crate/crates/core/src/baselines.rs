//! Comparison estimators: simple mean difference, IPWE under strong
//! ignorability, the Wald (LATE) ratio and the propensity c-statistic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HteError, Result};
use crate::model::{Dataset, Setup, UnitRecord};
use crate::numeric::sigmoid;

pub const IPW_CLAMP: (f64, f64) = (0.01, 0.99);
const Z975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BaselineResult {
    pub estimate: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    /// Propensities clamped into [`IPW_CLAMP`] (IPWE only).
    #[serde(default)]
    pub clamped: usize,
}

impl BaselineResult {
    fn new(estimate: f64, se: f64) -> Self {
        Self { estimate, se, ci95: (estimate - Z975 * se, estimate + Z975 * se), clamped: 0 }
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var)
}

fn two_sample(a: &[f64], b: &[f64]) -> Result<BaselineResult> {
    if a.is_empty() || b.is_empty() {
        return Err(HteError::Undefined("mean difference needs both groups nonempty".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    Ok(BaselineResult::new(ma - mb, (va / a.len() as f64 + vb / b.len() as f64).sqrt()))
}

/// Simple mean difference.
///
/// With a randomized control arm (`RCT_ONE_SIDED` and both arms present)
/// this contrasts realized outcomes between the offer arm and the control
/// arm. Otherwise it contrasts treated `y1` against untreated `y0`, counting
/// `r = 0` units as untreated.
pub fn mean_difference(data: &Dataset) -> Result<BaselineResult> {
    let has_control_arm = data.units.iter().any(|u| !u.r);
    let has_offer_arm = data.units.iter().any(|u| u.r);
    if data.setup == Setup::RctOneSided && has_control_arm && has_offer_arm {
        let (a, b): (Vec<&UnitRecord>, Vec<&UnitRecord>) = data.units.iter().partition(|u| u.r);
        let ya: Vec<f64> = a.iter().map(|u| u.realized_outcome()).collect();
        let yb: Vec<f64> = b.iter().map(|u| u.realized_outcome()).collect();
        return two_sample(&ya, &yb);
    }
    let (t, c): (Vec<&UnitRecord>, Vec<&UnitRecord>) = data.units.iter().partition(|u| u.realized_z());
    let y1: Vec<f64> = t.iter().map(|u| u.realized_outcome()).collect();
    let y0: Vec<f64> = c.iter().map(|u| u.realized_outcome()).collect();
    two_sample(&y1, &y0)
}

/// Feature map for the covariate-only propensity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PsBasis {
    Linear,
    /// Intercept, each covariate and its square.
    #[default]
    Quadratic,
}

impl PsBasis {
    pub fn features(self, x: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(1 + 2 * x.len());
        f.push(1.0);
        f.extend_from_slice(x);
        if self == PsBasis::Quadratic {
            f.extend(x.iter().map(|v| v * v));
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticFit {
    pub fn predict(&self, features: &[f64]) -> f64 {
        sigmoid(features.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }
}

/// Newton–Raphson maximum likelihood for `P(z=1) = logistic(f'γ)`.
/// Stops when the gradient sup-norm drops below 1e-8 or after 100 steps.
pub fn fit_logistic(features: &[Vec<f64>], z: &[bool]) -> Result<LogisticFit> {
    let n = features.len();
    if n == 0 || n != z.len() {
        return Err(HteError::Shape { what: "logistic fit rows", expected: features.len(), actual: z.len() });
    }
    let p = features[0].len();
    let x = DMatrix::from_fn(n, p, |i, j| features[i][j]);
    let y = DVector::from_fn(n, |i, _| f64::from(u8::from(z[i])));
    let mut g = DVector::<f64>::zeros(p);
    for it in 1..=100 {
        let eta = &x * &g;
        let mu = eta.map(sigmoid);
        let grad = x.transpose() * (&y - &mu);
        if grad.amax() < 1e-8 {
            return Ok(LogisticFit { coefficients: g.iter().copied().collect(), iterations: it - 1, converged: true });
        }
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i]);
        let h = x.transpose() * xw;
        let step = h
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or_else(|| HteError::Numerical { context: "logistic fit".into(), detail: "singular Hessian".into() })?;
        g += step;
        let big = g.amax();
        if big > 30.0 || !big.is_finite() {
            return Err(HteError::Separation(big));
        }
    }
    let eta = &x * &g;
    let grad = x.transpose() * (&y - eta.map(sigmoid));
    Ok(LogisticFit { coefficients: g.iter().copied().collect(), iterations: 100, converged: grad.amax() < 1e-8 })
}

/// Units used by the covariate-only propensity model: those with observed `z` (`r = 1`).
fn assignment_units(data: &Dataset) -> Vec<&UnitRecord> {
    data.units.iter().filter(|u| u.r).collect()
}

/// Fitted covariate-only propensities and realized `z` over the `r = 1` units.
pub fn propensity_scores(data: &Dataset, basis: PsBasis) -> Result<(Vec<f64>, Vec<bool>, LogisticFit)> {
    let units = assignment_units(data);
    let feats: Vec<Vec<f64>> = units.iter().map(|u| basis.features(&u.x)).collect();
    let z: Vec<bool> = units.iter().map(|u| u.realized_z()).collect();
    let fit = fit_logistic(&feats, &z)?;
    let scores = feats.iter().map(|f| fit.predict(f)).collect();
    Ok((scores, z, fit))
}

/// Horvitz–Thompson ATE with supplied propensities for the `r = 1` units
/// (dataset order); bypasses the propensity fit.
pub fn ipwe_ate_with_propensity(data: &Dataset, propensity: &[f64]) -> Result<BaselineResult> {
    let units = assignment_units(data);
    if units.len() != propensity.len() {
        return Err(HteError::Shape { what: "propensities (one per r=1 unit)", expected: units.len(), actual: propensity.len() });
    }
    let mut clamped = 0;
    let terms: Vec<f64> = units
        .iter()
        .zip(propensity)
        .map(|(u, &e)| {
            let ec = e.clamp(IPW_CLAMP.0, IPW_CLAMP.1);
            if ec != e {
                clamped += 1;
            }
            let y = u.realized_outcome();
            if u.realized_z() {
                y / ec
            } else {
                -y / (1.0 - ec)
            }
        })
        .collect();
    if terms.is_empty() {
        return Err(HteError::Undefined("IPWE needs units with observed assignment".into()));
    }
    let (m, v) = mean_var(&terms);
    let mut r = BaselineResult::new(m, (v / terms.len() as f64).sqrt());
    r.clamped = clamped;
    Ok(r)
}

/// IPWE with a logistic propensity on `basis(x)` fit over the `r = 1` units.
pub fn ipwe_ate(data: &Dataset, basis: PsBasis) -> Result<BaselineResult> {
    let (scores, _, _) = propensity_scores(data, basis)?;
    ipwe_ate_with_propensity(data, &scores)
}

/// Wald ratio of arm differences in realized outcome and treatment take-up.
pub fn wald_late(data: &Dataset) -> Result<BaselineResult> {
    let arm = |flag: bool| -> Vec<(f64, f64)> {
        data.units
            .iter()
            .filter(|u| u.r == flag)
            .map(|u| (u.realized_outcome(), f64::from(u8::from(u.realized_z()))))
            .collect()
    };
    let (a, b) = (arm(true), arm(false));
    if a.is_empty() || b.is_empty() {
        return Err(HteError::Undefined("Wald estimator needs both arms nonempty".into()));
    }
    let stats = |v: &[(f64, f64)]| {
        let n = v.len() as f64;
        let my = v.iter().map(|p| p.0).sum::<f64>() / n;
        let mz = v.iter().map(|p| p.1).sum::<f64>() / n;
        let d = (n - 1.0).max(1.0);
        let vy = v.iter().map(|p| (p.0 - my).powi(2)).sum::<f64>() / d;
        let vz = v.iter().map(|p| (p.1 - mz).powi(2)).sum::<f64>() / d;
        let cyz = v.iter().map(|p| (p.0 - my) * (p.1 - mz)).sum::<f64>() / d;
        (my, mz, vy / n, vz / n, cyz / n)
    };
    let (ya, za, vya, vza, ca) = stats(&a);
    let (yb, zb, vyb, vzb, cb) = stats(&b);
    let num = ya - yb;
    let den = za - zb;
    if den.abs() < 1e-12 {
        return Err(HteError::WeakInstrument);
    }
    let late = num / den;
    let var = (vya + vyb - 2.0 * late * (ca + cb) + late * late * (vza + vzb)) / (den * den);
    Ok(BaselineResult::new(late, var.max(0.0).sqrt()))
}

/// Area under the ROC curve by the rank-sum formulation, ties counted one-half.
pub fn c_statistic(scores: &[f64], z: &[bool]) -> Result<f64> {
    if scores.len() != z.len() {
        return Err(HteError::Shape { what: "c-statistic labels", expected: scores.len(), actual: z.len() });
    }
    let n1 = z.iter().filter(|&&b| b).count();
    let n0 = z.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(HteError::Undefined("c-statistic needs both classes present".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * idx[i..=j].iter().filter(|&&k| z[k]).count() as f64;
        i = j + 1;
    }
    let (n1f, n0f) = (n1 as f64, n0 as f64);
    Ok((rank_sum - n1f * (n1f + 1.0) / 2.0) / (n1f * n0f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn obs(units: Vec<UnitRecord>) -> Dataset {
        Dataset::new(units, 1, Setup::ObsMicro, None).unwrap()
    }

    #[test]
    fn mean_difference_examples() {
        let d = obs(vec![
            UnitRecord::treated("a", vec![0.0], 2.0),
            UnitRecord::treated("b", vec![0.0], 4.0),
            UnitRecord::untreated("c", vec![0.0], 1.0),
            UnitRecord::untreated("d", vec![0.0], 3.0),
        ]);
        assert_abs_diff_eq!(mean_difference(&d).unwrap().estimate, 1.0, epsilon = 1e-15);
        let same = obs(vec![
            UnitRecord::treated("a", vec![0.0], 2.0),
            UnitRecord::untreated("b", vec![0.0], 2.0),
        ]);
        assert_eq!(mean_difference(&same).unwrap().estimate, 0.0);
        let one = obs(vec![UnitRecord::treated("a", vec![0.0], 2.0)]);
        assert!(mean_difference(&one).is_err());
    }

    #[test]
    fn ipwe_hand_example_with_known_propensity() {
        let d = obs(vec![
            UnitRecord::treated("a", vec![0.0], 2.0),
            UnitRecord::treated("b", vec![0.0], 4.0),
            UnitRecord::untreated("c", vec![0.0], 1.0),
            UnitRecord::untreated("d", vec![0.0], 3.0),
        ]);
        let r = ipwe_ate_with_propensity(&d, &[0.5; 4]).unwrap();
        assert_abs_diff_eq!(r.estimate, 1.0, epsilon = 1e-15);
        assert_eq!(r.clamped, 0);
        assert!(r.se >= 0.0);
    }

    #[test]
    fn ipwe_with_true_constant_propensity_equals_mean_difference_when_balanced() {
        // Equal group sizes: HT weights 1/(n/2 · 0.5 · 2) cancel exactly.
        let units: Vec<UnitRecord> = (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    UnitRecord::treated(format!("t{i}"), vec![i as f64], i as f64 * 0.7)
                } else {
                    UnitRecord::untreated(format!("c{i}"), vec![i as f64], i as f64 * 0.3)
                }
            })
            .collect();
        let d = obs(units);
        let a = ipwe_ate_with_propensity(&d, &[0.5; 10]).unwrap().estimate;
        let b = mean_difference(&d).unwrap().estimate;
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn wald_examples() {
        // r=1 arm: outcomes (4, 2) with compliance (1, 0): mean 3, take-up 0.5; r=0 mean 2.
        let d = Dataset::new(
            vec![
                UnitRecord::treated("a", vec![0.0], 4.0),
                UnitRecord::untreated("b", vec![0.0], 2.0),
                UnitRecord::control_arm("c", vec![0.0], 1.0),
                UnitRecord::control_arm("d", vec![0.0], 3.0),
            ],
            1,
            Setup::RctOneSided,
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(wald_late(&d).unwrap().estimate, 2.0, epsilon = 1e-15);

        let perfect = Dataset::new(
            vec![
                UnitRecord::treated("a", vec![0.0], 4.0),
                UnitRecord::treated("b", vec![0.0], 2.0),
                UnitRecord::control_arm("c", vec![0.0], 1.0),
                UnitRecord::control_arm("d", vec![0.0], 2.0),
            ],
            1,
            Setup::RctOneSided,
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(
            wald_late(&perfect).unwrap().estimate,
            mean_difference(&perfect).unwrap().estimate,
            epsilon = 1e-15
        );

        let weak = Dataset::new(
            vec![UnitRecord::untreated("a", vec![0.0], 4.0), UnitRecord::control_arm("c", vec![0.0], 1.0)],
            1,
            Setup::RctOneSided,
            None,
        )
        .unwrap();
        assert!(matches!(wald_late(&weak), Err(HteError::WeakInstrument)));
    }

    #[test]
    fn c_statistic_examples() {
        assert_eq!(c_statistic(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(c_statistic(&[0.4; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(c_statistic(&[0.1, 0.2], &[true, true]).is_err());
        let s = [0.3, 0.1, 0.7, 0.45, 0.2, 0.9];
        let z = [true, false, true, false, true, false];
        let a = c_statistic(&s, &z).unwrap();
        let t: Vec<f64> = s.iter().map(|v: &f64| v.powi(3).exp()).collect();
        assert_eq!(a, c_statistic(&t, &z).unwrap());
    }

    #[test]
    fn logistic_fit_recovers_coefficients_and_detects_separation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..5000).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let z: Vec<bool> = xs.iter().map(|&x| rng.gen::<f64>() < sigmoid(-0.5 + 1.2 * x)).collect();
        let f: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let fit = fit_logistic(&f, &z).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] + 0.5).abs() < 0.15 && (fit.coefficients[1] - 1.2).abs() < 0.15);

        let sep_f: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64 - 9.5]).collect();
        let sep_z: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        assert!(matches!(fit_logistic(&sep_f, &sep_z), Err(HteError::Separation(_))));
    }
}
