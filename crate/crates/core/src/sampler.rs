//! Gradient-free adaptive Metropolis-within-Gibbs.
//!
//! Each iteration runs, in order:
//! 1. the model's latent sweep (augmented outcomes), if any;
//! 2. one Gaussian random-walk update per scalar parameter, step sizes
//!    adapted by Robbins–Monro on the log scale toward 0.44 acceptance;
//! 3. a joint random-walk update whose proposal covariance is learned from
//!    the warmup draws (scaled toward 0.234 acceptance).
//!
//! All adaptation stops at the end of warmup; retained draws come from a
//! fixed Metropolis kernel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{HteError, Result};
use crate::rng::chain_rng;

/// A log density over an unconstrained parameter vector, optionally with
/// latent variables that the model updates itself.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn names(&self) -> Vec<String>;

    /// Deterministic starting point on the unconstrained scale.
    fn initial(&self) -> Vec<f64>;

    /// Unnormalized log density; `-inf` outside the support.
    fn log_density(&self, theta: &[f64], latent: &[f64]) -> f64;

    /// Maps an unconstrained vector to the reported parameterization.
    fn to_natural(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn initial_latent(&self, _theta: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    /// Updates latents given `theta`; returns (accepted, proposed).
    fn update_latents(&self, _theta: &[f64], _latent: &mut [f64], _rng: &mut ChaCha8Rng) -> (usize, usize) {
        (0, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub iterations: usize,
    pub warmup: usize,
    pub chains: usize,
    pub initial_step: f64,
    pub scalar_target_acceptance: f64,
    pub joint_target_acceptance: f64,
    pub joint_block: bool,
    /// Adaptive joint proposals per iteration.
    pub joint_steps: usize,
    pub adapt: bool,
    pub store_latents: bool,
    /// Holds parameters at their initial values and only sweeps latents.
    pub freeze_parameters: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            iterations: 3000,
            warmup: 1000,
            chains: 2,
            initial_step: 0.1,
            scalar_target_acceptance: 0.44,
            joint_target_acceptance: 0.234,
            joint_block: true,
            joint_steps: 10,
            adapt: true,
            store_latents: false,
            freeze_parameters: false,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.warmup >= self.iterations {
            return Err(HteError::Config(format!(
                "need 0 <= warmup < iterations, got warmup={} iterations={}",
                self.warmup, self.iterations
            )));
        }
        if self.chains == 0 {
            return Err(HteError::Config("need at least one chain".into()));
        }
        if self.joint_block && self.joint_steps == 0 {
            return Err(HteError::Config("jointSteps must be at least 1 when jointBlock is on".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(HteError::Config("initialStep must be positive".into()));
        }
        Ok(())
    }
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    /// Rows are retained iterations, columns follow `names` (natural scale).
    pub parameter_draws: Vec<Vec<f64>>,
    /// Unconstrained-scale rows aligned with `parameter_draws`.
    pub unconstrained_draws: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_draws: Option<Vec<Vec<f64>>>,
    pub warmup: usize,
    pub total: usize,
    pub chain_id: u64,
    pub acceptance_rates: Vec<(String, f64)>,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn retained(&self) -> usize {
        self.parameter_draws.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.parameter_draws.iter().map(|r| r[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }

    /// Concatenates chains with the same parameter layout.
    pub fn pooled(chains: &[PosteriorDraws]) -> Result<PosteriorDraws> {
        let first = chains.first().ok_or_else(|| HteError::Diagnostic("no chains to pool".into()))?;
        let mut out = first.clone();
        for c in &chains[1..] {
            if c.names != first.names {
                return Err(HteError::Diagnostic("cannot pool chains with different parameters".into()));
            }
            out.parameter_draws.extend(c.parameter_draws.iter().cloned());
            out.unconstrained_draws.extend(c.unconstrained_draws.iter().cloned());
            if let (Some(a), Some(b)) = (out.latent_draws.as_mut(), c.latent_draws.as_ref()) {
                a.extend(b.iter().cloned());
            }
        }
        out.total = out.parameter_draws.len() + out.warmup;
        Ok(out)
    }
}

/// Quasi-posterior acceptance factor `min{1, exp(q_cand − q_old)}`.
///
/// In the sampler the GMM term enters the target additively in log space, so
/// a full Metropolis step accepts with `min{1, exp(Δ log-lik + Δ log-prior + ΔQ0)}`.
pub fn quasi_accept_probability(q0_candidate: f64, q0_old: f64) -> f64 {
    (q0_candidate - q0_old).min(0.0).exp()
}

#[inline]
fn metropolis_accept(log_ratio: f64, rng: &mut ChaCha8Rng) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio
}

/// Running mean/covariance (Welford) for the joint proposal.
struct RunningCov {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<Vec<f64>>,
}

impl RunningCov {
    fn new(d: usize) -> Self {
        Self { n: 0, mean: vec![0.0; d], m2: vec![vec![0.0; d]; d] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let d = x.len();
        let delta: Vec<f64> = (0..d).map(|i| x[i] - self.mean[i]).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / self.n as f64;
        }
        for i in 0..d {
            for j in 0..d {
                self.m2[i][j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    /// Lower Cholesky factor of the regularized covariance.
    fn cholesky(&self) -> Option<nalgebra::DMatrix<f64>> {
        if self.n < 2 * self.mean.len() + 2 {
            return None;
        }
        let d = self.mean.len();
        let mut c = nalgebra::DMatrix::from_fn(d, d, |i, j| self.m2[i][j] / (self.n - 1) as f64);
        for i in 0..d {
            c[(i, i)] += 1e-10 + 1e-6 * c[(i, i)].abs();
        }
        c.cholesky().map(|ch| ch.l())
    }
}

const MAX_INIT_RETRIES: usize = 100;

fn initialize<T: Target + ?Sized>(target: &T, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let base = target.initial();
    if base.len() != target.dim() {
        return Err(HteError::Shape { what: "initial parameter vector", expected: target.dim(), actual: base.len() });
    }
    let mut theta = base.clone();
    for attempt in 0..=MAX_INIT_RETRIES {
        if attempt > 0 {
            let scale = 0.1 * attempt as f64 / 10.0 + 0.05;
            theta = base.iter().map(|b| b + scale * crate::rng::std_normal(rng)).collect();
        }
        if theta.iter().all(|v| v.is_finite()) {
            let latent = target.initial_latent(&theta);
            let lp = target.log_density(&theta, &latent);
            if lp.is_finite() {
                return Ok((theta, latent, lp));
            }
        }
    }
    Err(HteError::Initialization(format!(
        "target log density is not finite at the initial point after {MAX_INIT_RETRIES} jittered retries"
    )))
}

/// Runs one chain of `settings.iterations` (including `settings.warmup`) iterations.
pub fn run_chain<T: Target + ?Sized>(target: &T, settings: &SamplerSettings, seed: u64, chain_id: u64) -> Result<PosteriorDraws> {
    settings.validate()?;
    let mut rng = chain_rng(seed, chain_id);
    let d = target.dim();
    let (mut theta, mut latent, mut lp) = initialize(target, &mut rng)?;

    let mut log_step = vec![settings.initial_step.ln(); d];
    let mut joint_log_scale = (2.38f64 / (d.max(1) as f64).sqrt()).ln();
    let mut cov = RunningCov::new(d);
    let mut chol: Option<nalgebra::DMatrix<f64>> = None;
    let cov_start = settings.warmup / 4;
    let joint_start = settings.warmup / 2;

    let mut scalar_acc = vec![0usize; d];
    let (mut joint_acc, mut joint_prop) = (0usize, 0usize);
    let (mut latent_acc, mut latent_prop) = (0usize, 0usize);
    let retained_n = settings.iterations - settings.warmup;
    let mut draws = Vec::with_capacity(retained_n);
    let mut raw = Vec::with_capacity(retained_n);
    let mut latent_draws = settings.store_latents.then(|| Vec::with_capacity(retained_n));

    for it in 0..settings.iterations {
        let warm = it < settings.warmup;
        let adapting = warm && settings.adapt;
        let gain = 1.0 / ((it + 1) as f64).powf(0.6);

        if !latent.is_empty() {
            let (a, p) = target.update_latents(&theta, &mut latent, &mut rng);
            lp = target.log_density(&theta, &latent);
            if !warm {
                latent_acc += a;
                latent_prop += p;
            }
        }

        if !settings.freeze_parameters {
            for i in 0..d {
                let old = theta[i];
                theta[i] = old + log_step[i].exp() * crate::rng::std_normal(&mut rng);
                let cand = target.log_density(&theta, &latent);
                let accepted = metropolis_accept(cand - lp, &mut rng);
                if accepted {
                    lp = cand;
                } else {
                    theta[i] = old;
                }
                if adapting {
                    let a = if accepted { 1.0 } else { 0.0 };
                    log_step[i] += gain * (a - settings.scalar_target_acceptance);
                }
                if !warm && accepted {
                    scalar_acc[i] += 1;
                }
            }

            if settings.joint_block {
                if adapting && it >= cov_start {
                    cov.push(&theta);
                    if it >= joint_start && (it - joint_start) % 50 == 0 {
                        if let Some(l) = cov.cholesky() {
                            chol = Some(l);
                        }
                    }
                }
                if let Some(l) = chol.as_ref() {
                    for _ in 0..settings.joint_steps {
                        let zv = nalgebra::DVector::from_fn(d, |_, _| crate::rng::std_normal(&mut rng));
                        let step = l * zv * joint_log_scale.exp();
                        let cand_theta: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
                        let cand = target.log_density(&cand_theta, &latent);
                        let accepted = metropolis_accept(cand - lp, &mut rng);
                        if accepted {
                            theta = cand_theta;
                            lp = cand;
                        }
                        if adapting {
                            let a = if accepted { 1.0 } else { 0.0 };
                            joint_log_scale += gain * (a - settings.joint_target_acceptance);
                        }
                        if !warm {
                            joint_prop += 1;
                            joint_acc += usize::from(accepted);
                        }
                    }
                }
            }
        }

        if !warm {
            if !lp.is_finite() {
                return Err(HteError::Numerical {
                    context: "run_chain".into(),
                    detail: format!("retained state has non-finite log density at iteration {it}"),
                });
            }
            draws.push(target.to_natural(&theta));
            raw.push(theta.clone());
            if let Some(ld) = latent_draws.as_mut() {
                ld.push(latent.clone());
            }
        }
    }

    let names = target.names();
    let denom = retained_n as f64;
    let mut acceptance_rates: Vec<(String, f64)> =
        names.iter().zip(&scalar_acc).map(|(n, &a)| (n.clone(), a as f64 / denom)).collect();
    if joint_prop > 0 {
        acceptance_rates.push(("joint".into(), joint_acc as f64 / joint_prop as f64));
    }
    if latent_prop > 0 {
        acceptance_rates.push(("latent".into(), latent_acc as f64 / latent_prop as f64));
    }
    Ok(PosteriorDraws {
        names,
        parameter_draws: draws,
        unconstrained_draws: raw,
        latent_draws,
        warmup: settings.warmup,
        total: settings.iterations,
        chain_id,
        acceptance_rates,
        seed,
    })
}

/// Runs `settings.chains` chains in parallel; output order is by chain id.
pub fn run_chains<T: Target + ?Sized>(target: &T, settings: &SamplerSettings, seed: u64) -> Result<Vec<PosteriorDraws>> {
    use rayon::prelude::*;
    (0..settings.chains as u64)
        .into_par_iter()
        .map(|c| run_chain(target, settings, seed, c))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConvergenceReport {
    pub names: Vec<String>,
    pub rhat_per_param: Vec<f64>,
    pub ess_per_param: Vec<f64>,
}

pub const MIN_DIAGNOSTIC_DRAWS: usize = 100;

/// Split-R̂ per parameter. `NaN` when the parameter is constant across all draws.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let mid = c.len() / 2;
            [&c[..mid], &c[c.len() - mid..]]
        })
        .collect();
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { f64::NAN } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Normal scores of pooled fractional ranks (average ranks for ties).
fn rank_normalize(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, xs)| xs.iter().enumerate().map(move |(i, &v)| (v, c, i)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = std.inverse_cdf((rank - 0.375) / (s + 0.25));
        for k in i..=j {
            out[all[k].1][all[k].2] = z;
        }
        i = j + 1;
    }
    out
}

fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..n)
        .map(|lag| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

/// Multi-chain ESS (Geyer initial monotone sequence) on split, rank-normalized chains.
pub fn rank_normalized_ess(chains: &[&[f64]]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let mid = c.len() / 2;
            [&c[..mid], &c[c.len() - mid..]]
        })
        .collect();
    let z = rank_normalize(&halves);
    let m = z.len();
    let n = z[0].len();
    let acov: Vec<Vec<f64>> = z.iter().map(|c| autocovariance(c)).collect();
    let means: Vec<f64> = z.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let w = acov.iter().map(|a| a[0] * n as f64 / (n as f64 - 1.0)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 {
        let g = means.iter().sum::<f64>() / m as f64;
        means.iter().map(|mu| (mu - g).powi(2)).sum::<f64>() / (m as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |t: usize| -> f64 {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };
    // Pair sums Γ_k = ρ_{2k} + ρ_{2k+1}, truncated at the first negative and made monotone.
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        if pair > prev {
            pair = prev;
        }
        prev = pair;
        sum += pair;
        t += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / ((m * n) as f64).log10());
    (m * n) as f64 / tau
}

pub fn convergence_diagnostics(chains: &[PosteriorDraws]) -> Result<ConvergenceReport> {
    let first = chains.first().ok_or_else(|| HteError::Diagnostic("need at least one chain".into()))?;
    for c in chains {
        if c.retained() < MIN_DIAGNOSTIC_DRAWS {
            return Err(HteError::Diagnostic(format!(
                "chain {} has {} retained draws; at least {MIN_DIAGNOSTIC_DRAWS} required",
                c.chain_id,
                c.retained()
            )));
        }
        if c.names != first.names {
            return Err(HteError::Diagnostic("chains disagree on parameter layout".into()));
        }
    }
    let min_len = chains.iter().map(PosteriorDraws::retained).min().expect("nonempty");
    let mut rhat = Vec::new();
    let mut ess = Vec::new();
    for j in 0..first.names.len() {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(j)[..min_len].to_vec()).collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        rhat.push(split_rhat(&refs));
        ess.push(rank_normalized_ess(&refs));
    }
    Ok(ConvergenceReport { names: first.names.clone(), rhat_per_param: rhat, ess_per_param: ess })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    pub(crate) struct StdNormal;

    impl Target for StdNormal {
        fn dim(&self) -> usize {
            1
        }
        fn names(&self) -> Vec<String> {
            vec!["mu".into()]
        }
        fn initial(&self) -> Vec<f64> {
            vec![0.5]
        }
        fn log_density(&self, t: &[f64], _: &[f64]) -> f64 {
            -0.5 * t[0] * t[0]
        }
    }

    struct Impossible;

    impl Target for Impossible {
        fn dim(&self) -> usize {
            1
        }
        fn names(&self) -> Vec<String> {
            vec!["a".into()]
        }
        fn initial(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn log_density(&self, _: &[f64], _: &[f64]) -> f64 {
            f64::NEG_INFINITY
        }
    }

    #[test]
    fn quasi_accept_examples() {
        assert_eq!(quasi_accept_probability(-3.0, -3.0), 1.0);
        assert_abs_diff_eq!(quasi_accept_probability(-1.7, -1.0), 0.496_585_303_791_409_5, epsilon = 1e-12);
        assert_eq!(quasi_accept_probability(0.0, -5.0), 1.0);
    }

    #[test]
    fn same_seed_same_draws() {
        let s = SamplerSettings { iterations: 500, warmup: 100, ..Default::default() };
        let a = run_chain(&StdNormal, &s, 42, 0).unwrap();
        let b = run_chain(&StdNormal, &s, 42, 0).unwrap();
        assert_eq!(a.parameter_draws, b.parameter_draws);
        assert_eq!(a.retained(), 400);
        assert!(a.acceptance_rates.iter().all(|(_, r)| (0.0..=1.0).contains(r)));
        let c = run_chain(&StdNormal, &s, 42, 1).unwrap();
        assert_ne!(a.parameter_draws, c.parameter_draws);
    }

    #[test]
    fn impossible_target_fails_initialization() {
        let s = SamplerSettings { iterations: 10, warmup: 5, ..Default::default() };
        assert!(matches!(run_chain(&Impossible, &s, 1, 0), Err(HteError::Initialization(_))));
    }

    #[test]
    fn settings_validation() {
        assert!(SamplerSettings { iterations: 10, warmup: 10, ..Default::default() }.validate().is_err());
        assert!(SamplerSettings { chains: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn rhat_identical_chains() {
        // Chains whose halves coincide: no between-half variance at all.
        let block: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let chain: Vec<f64> = block.iter().chain(block.iter()).copied().collect();
        let r = split_rhat(&[&chain, &chain]);
        assert!(r <= 1.0 + 1e-10, "{r}");

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let iid: Vec<f64> = (0..2000).map(|_| crate::rng::std_normal(&mut rng)).collect();
        let r = split_rhat(&[&iid, &iid]);
        assert!(r < 1.01, "{r}");
    }

    #[test]
    fn rhat_detects_frozen_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let moving: Vec<f64> = (0..1000).map(|_| crate::rng::std_normal(&mut rng)).collect();
        let frozen = vec![3.0; 1000];
        assert!(split_rhat(&[&frozen, &moving]) > 1.2);
    }

    #[test]
    fn ess_of_iid_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let iid: Vec<f64> = (0..10_000).map(|_| crate::rng::std_normal(&mut rng)).collect();
        let ess = rank_normalized_ess(&[&iid]);
        assert!((ess - 10_000.0).abs() < 1_500.0, "{ess}");
    }

    #[test]
    fn ess_drops_under_autocorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = 0.0;
        let ar: Vec<f64> = (0..10_000)
            .map(|_| {
                x = 0.9 * x + crate::rng::std_normal(&mut rng);
                x
            })
            .collect();
        // AR(1) with φ = 0.9: τ = (1+φ)/(1−φ) = 19.
        let ess = rank_normalized_ess(&[&ar]);
        assert!(ess > 300.0 && ess < 900.0, "{ess}");
    }

    #[test]
    fn diagnostics_need_enough_draws() {
        let s = SamplerSettings { iterations: 150, warmup: 100, ..Default::default() };
        let a = run_chain(&StdNormal, &s, 1, 0).unwrap();
        assert!(matches!(convergence_diagnostics(&[a]), Err(HteError::Diagnostic(_))));
        assert!(convergence_diagnostics(&[]).is_err());
    }

    #[test]
    fn standard_normal_target_moments() {
        let s = SamplerSettings { iterations: 52_000, warmup: 2_000, ..Default::default() };
        let d = run_chain(&StdNormal, &s, 2024, 0).unwrap();
        let x = d.column(0);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
