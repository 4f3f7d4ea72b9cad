//! Fit pipelines behind the CLI and the replication harness.
//!
//! `replicate` runs simulate→fit→summarize for seeds `base+1..=base+R`. Each
//! replication is reduced to a [`ReplicationRecord`]; [`summarize`] turns the
//! records into a [`ReplicationSummary`], so the summary recomputed from
//! persisted records is identical to the in-memory one.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{c_statistic, ipwe_ate, mean_difference, propensity_scores, wald_late, BaselineResult};
use crate::censored::{censored_ate_at, censored_hte_curve, fit_censored, GumbelRule, TobitGumbelParams};
use crate::config::{ModelKind, RunConfig, SCHEMA_VERSION};
use crate::error::{HteError, Result};
use crate::estimands::{default_grid, hte_curve, posterior_estimands, EstimandSummary, HteCurve, PosteriorEstimands};
use crate::io::write_json;
use crate::model::{true_estimand_oracle, Dataset, GaussianModelParams};
use crate::posterior::{fit_gaussian, PosteriorSpec};
use crate::rng::{derive_seed, std_normal};
use crate::sampler::{ConvergenceReport, PosteriorDraws};
use crate::simulate::{simulate, Dgp};

/// Cap on posterior draws used for the censored ATE (thinned evenly).
const CENSORED_ATE_DRAWS: usize = 400;
/// Covariate draws for the censored true-ATE oracle.
const CENSORED_TRUTH_UNITS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParameterSummary {
    pub name: String,
    #[serde(flatten)]
    pub summary: EstimandSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainAcceptance {
    pub chain_id: u64,
    pub rates: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Diagnostics {
    pub schema_version: u32,
    pub iterations: usize,
    pub warmup: usize,
    pub chains: usize,
    pub convergence: Option<ConvergenceReport>,
    pub acceptance: Vec<ChainAcceptance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Baselines {
    pub mean_difference: Option<BaselineResult>,
    pub ipwe: Option<BaselineResult>,
    pub late: Option<BaselineResult>,
    pub c_statistic: Option<f64>,
}

impl Baselines {
    pub fn compute(data: &Dataset, cfg: &RunConfig) -> Self {
        let basis = cfg.estimands.propensity_basis;
        Self {
            mean_difference: mean_difference(data).ok(),
            ipwe: ipwe_ate(data, basis).ok(),
            late: wald_late(data).ok(),
            c_statistic: propensity_scores(data, basis).and_then(|(s, z, _)| c_statistic(&s, &z)).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EstimandsDoc {
    pub schema_version: u32,
    pub model: ModelKind,
    /// ATE/ATT/ATU (Gaussian model).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PosteriorEstimands>,
    /// `E[y1] − E[y0]` of the observed, censored outcomes (Tobit–Gumbel model).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub censored_ate: Option<EstimandSummary>,
    /// `HTE(0) = E[y1 | y0 = 0]` (Tobit–Gumbel model).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hte_at_zero: Option<EstimandSummary>,
    pub baselines: Baselines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParamsDoc {
    pub schema_version: u32,
    pub model: ModelKind,
    pub target: crate::posterior::TargetKind,
    pub seed: u64,
    pub parameters: Vec<ParameterSummary>,
}

/// Everything `estimate` writes.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutput {
    pub params: ParamsDoc,
    pub estimands: EstimandsDoc,
    pub curve: HteCurve,
    pub diagnostics: Diagnostics,
}

impl EstimateOutput {
    pub const FILES: [&'static str; 4] = ["params.json", "estimands.json", "hte_curve.csv", "diagnostics.json"];

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&self.params, &dir.join(Self::FILES[0]))?;
        write_json(&self.estimands, &dir.join(Self::FILES[1]))?;
        std::fs::write(dir.join(Self::FILES[2]), self.curve.to_csv())?;
        write_json(&self.diagnostics, &dir.join(Self::FILES[3]))?;
        Ok(())
    }
}

pub fn parameter_summaries(draws: &PosteriorDraws) -> Result<Vec<ParameterSummary>> {
    (0..draws.names.len())
        .map(|j| Ok(ParameterSummary { name: draws.names[j].clone(), summary: EstimandSummary::from_samples(&draws.column(j))? }))
        .collect()
}

fn diagnostics_doc(cfg: &RunConfig, chains: &[PosteriorDraws], convergence: Option<ConvergenceReport>) -> Diagnostics {
    Diagnostics {
        schema_version: SCHEMA_VERSION,
        iterations: cfg.sampler.iterations,
        warmup: cfg.sampler.warmup,
        chains: chains.len(),
        convergence,
        acceptance: chains.iter().map(|c| ChainAcceptance { chain_id: c.chain_id, rates: c.acceptance_rates.clone() }).collect(),
    }
}

fn resolve_grid(cfg: &RunConfig, data: &Dataset, positive_only: bool) -> Result<Vec<f64>> {
    let grid = match &cfg.estimands.grid {
        Some(g) => g.clone(),
        None => default_grid(data, cfg.estimands.grid_points)?,
    };
    if !positive_only {
        return Ok(grid);
    }
    let g: Vec<f64> = grid.into_iter().filter(|&v| v > 0.0).collect();
    if g.is_empty() {
        return Err(HteError::Config("no positive HTE grid points for the censored model".into()));
    }
    Ok(g)
}

fn thinned(draws: &[TobitGumbelParams], cap: usize) -> Vec<&TobitGumbelParams> {
    let step = draws.len().div_ceil(cap).max(1);
    draws.iter().step_by(step).collect()
}

fn censored_ate_summary(draws: &[TobitGumbelParams], data: &Dataset) -> Result<EstimandSummary> {
    let xs: Vec<&[f64]> = data.units.iter().map(|u| u.x.as_slice()).collect();
    let rule = GumbelRule::default();
    let values: Vec<f64> = thinned(draws, CENSORED_ATE_DRAWS).par_iter().map(|p| censored_ate_at(p, &xs, &rule)).collect();
    EstimandSummary::from_samples(&values)
}

/// Fits `cfg.model` / `cfg.target` to `data` and assembles all outputs.
pub fn run_estimate(data: &Dataset, cfg: &RunConfig, seed: u64) -> Result<EstimateOutput> {
    cfg.validate()?;
    let baselines = Baselines::compute(data, cfg);
    match cfg.model {
        ModelKind::Gaussian => {
            let spec = PosteriorSpec {
                target: cfg.target,
                prior: cfg.prior.clone(),
                sampler: cfg.sampler.clone(),
                gmm: Some(cfg.gmm.clone()),
                aux: cfg.data.aux.clone(),
            };
            let fit = fit_gaussian(data, &spec, seed)?;
            let curve = hte_curve(&fit.pooled, data, &resolve_grid(cfg, data, false)?)?;
            Ok(EstimateOutput {
                params: ParamsDoc {
                    schema_version: SCHEMA_VERSION,
                    model: cfg.model,
                    target: cfg.target,
                    seed,
                    parameters: parameter_summaries(&fit.pooled)?,
                },
                estimands: EstimandsDoc {
                    schema_version: SCHEMA_VERSION,
                    model: cfg.model,
                    posterior: Some(posterior_estimands(&fit.pooled, data, fit.aux.as_ref())?),
                    censored_ate: None,
                    hte_at_zero: None,
                    baselines,
                },
                curve,
                diagnostics: diagnostics_doc(cfg, &fit.chains, fit.diagnostics.clone()),
            })
        }
        ModelKind::TobitGumbel => {
            let fit = fit_censored(data, &cfg.prior, &cfg.sampler, &cfg.gmm, seed)?;
            let c = censored_hte_curve(&fit.pooled, data, &resolve_grid(cfg, data, true)?)?;
            Ok(EstimateOutput {
                params: ParamsDoc {
                    schema_version: SCHEMA_VERSION,
                    model: cfg.model,
                    target: cfg.target,
                    seed,
                    parameters: parameter_summaries(&fit.pooled)?,
                },
                estimands: EstimandsDoc {
                    schema_version: SCHEMA_VERSION,
                    model: cfg.model,
                    posterior: None,
                    censored_ate: Some(censored_ate_summary(&fit.draws_as_params()?, data)?),
                    hte_at_zero: Some(c.atom),
                    baselines,
                },
                curve: c.curve,
                diagnostics: diagnostics_doc(cfg, &fit.chains, fit.diagnostics.clone()),
            })
        }
    }
}

/// One estimator's interval estimate in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub ci95: (f64, f64),
}

impl From<&EstimandSummary> for IntervalEstimate {
    fn from(s: &EstimandSummary) -> Self {
        Self { estimate: s.mean, ci95: s.ci95 }
    }
}

impl From<&BaselineResult> for IntervalEstimate {
    fn from(b: &BaselineResult) -> Self {
        Self { estimate: b.estimate, ci95: b.ci95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NamedEstimate {
    pub name: String,
    #[serde(flatten)]
    pub value: IntervalEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "camelCase")]
pub enum ReplicationOutcome {
    #[serde(rename_all = "camelCase")]
    Ok {
        parameters: Vec<NamedEstimate>,
        estimators: Vec<NamedEstimate>,
        c_statistic: Option<f64>,
        max_rhat: Option<f64>,
    },
    #[serde(rename_all = "camelCase")]
    Failed { kind: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub outcome: ReplicationOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Truth {
    pub parameters: Vec<(String, f64)>,
    pub ate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SummaryRow {
    pub name: String,
    pub true_value: f64,
    /// Mean over replications of the point estimate (posterior mean).
    pub mean: f64,
    pub sd: f64,
    pub coverage_percent: f64,
    pub mse: f64,
    /// Replications contributing to this row.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FailureRow {
    pub replication: usize,
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplicationSummary {
    pub schema_version: u32,
    pub replications: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub failures: Vec<FailureRow>,
    pub parameters: Vec<SummaryRow>,
    pub estimators: Vec<SummaryRow>,
    pub mean_c_statistic: Option<f64>,
    pub truth: Truth,
}

impl ReplicationSummary {
    pub fn parameter(&self, name: &str) -> Option<&SummaryRow> {
        self.parameters.iter().find(|r| r.name == name)
    }

    pub fn estimator(&self, name: &str) -> Option<&SummaryRow> {
        self.estimators.iter().find(|r| r.name == name)
    }
}

pub const ESTIMATOR_PROPOSED: &str = "proposed";
pub const ESTIMATOR_MEAN_DIFF: &str = "meanDiff";
pub const ESTIMATOR_IPWE: &str = "ipwe";
pub const ESTIMATOR_LATE: &str = "late";

/// True parameters and ATE of the configured design.
pub fn design_truth(cfg: &RunConfig) -> Result<Truth> {
    let sim = cfg.dgp.simulation_config(cfg.model, 0);
    match &sim.dgp {
        Dgp::Gaussian(p) => {
            let oracle = true_estimand_oracle(p, sim.x_sd, 0, 0)?;
            Ok(Truth {
                parameters: GaussianModelParams::NAMES.iter().map(|s| s.to_string()).zip(p.to_vec()).collect(),
                ate: oracle.ate,
            })
        }
        Dgp::TobitGumbel(p) => {
            p.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.replication.base_seed, &[0x7A7E]));
            let xs: Vec<Vec<f64>> =
                (0..CENSORED_TRUTH_UNITS).map(|_| (0..p.dim()).map(|_| sim.x_sd * std_normal(&mut rng)).collect()).collect();
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            Ok(Truth {
                parameters: TobitGumbelParams::names(p.dim()).into_iter().zip(p.to_vec()).collect(),
                ate: censored_ate_at(p, &refs, &GumbelRule::default()),
            })
        }
    }
}

fn named(name: &str, v: IntervalEstimate) -> NamedEstimate {
    NamedEstimate { name: name.to_string(), value: v }
}

fn run_replication(cfg: &RunConfig, seed: u64) -> Result<ReplicationOutcome> {
    let data = simulate(&cfg.dgp.simulation_config(cfg.model, seed))?;
    let baselines = Baselines::compute(&data, cfg);
    let (pooled, diagnostics, proposed) = match cfg.model {
        ModelKind::Gaussian => {
            let spec = PosteriorSpec {
                target: cfg.target,
                prior: cfg.prior.clone(),
                sampler: cfg.sampler.clone(),
                gmm: Some(cfg.gmm.clone()),
                aux: cfg.data.aux.clone(),
            };
            let fit = fit_gaussian(&data, &spec, seed)?;
            let ate = posterior_estimands(&fit.pooled, &data, fit.aux.as_ref())?.ate;
            (fit.pooled, fit.diagnostics, ate)
        }
        ModelKind::TobitGumbel => {
            let fit = fit_censored(&data, &cfg.prior, &cfg.sampler, &cfg.gmm, seed)?;
            let ate = censored_ate_summary(&fit.draws_as_params()?, &data)?;
            (fit.pooled, fit.diagnostics, ate)
        }
    };
    let parameters = parameter_summaries(&pooled)?
        .into_iter()
        .map(|p| named(&p.name, IntervalEstimate::from(&p.summary)))
        .collect();
    let mut estimators = vec![named(ESTIMATOR_PROPOSED, IntervalEstimate::from(&proposed))];
    for (name, b) in [(ESTIMATOR_MEAN_DIFF, &baselines.mean_difference), (ESTIMATOR_IPWE, &baselines.ipwe), (ESTIMATOR_LATE, &baselines.late)] {
        if let Some(b) = b {
            estimators.push(named(name, IntervalEstimate::from(b)));
        }
    }
    let max_rhat = diagnostics.map(|d| d.rhat_per_param.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    Ok(ReplicationOutcome::Ok { parameters, estimators, c_statistic: baselines.c_statistic, max_rhat })
}

fn row(name: &str, truth: f64, values: &[IntervalEstimate]) -> SummaryRow {
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().map(|v| v.estimate).sum::<f64>() / nf;
    let sd = if n > 1 { (values.iter().map(|v| (v.estimate - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt() } else { 0.0 };
    let covered = values.iter().filter(|v| v.ci95.0 <= truth && truth <= v.ci95.1).count();
    SummaryRow {
        name: name.to_string(),
        true_value: truth,
        mean,
        sd,
        coverage_percent: 100.0 * covered as f64 / nf,
        mse: values.iter().map(|v| (v.estimate - truth).powi(2)).sum::<f64>() / nf,
        n,
    }
}

/// Aggregates replication records; a pure function of its inputs.
pub fn summarize(records: &[ReplicationRecord], truth: &Truth) -> ReplicationSummary {
    let mut records: Vec<&ReplicationRecord> = records.iter().collect();
    records.sort_by_key(|r| r.replication);
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for r in &records {
        match &r.outcome {
            ReplicationOutcome::Ok { parameters, estimators, c_statistic, .. } => ok.push((parameters, estimators, c_statistic)),
            ReplicationOutcome::Failed { kind, message } => failures.push(FailureRow {
                replication: r.replication,
                seed: r.seed,
                kind: kind.clone(),
                message: message.clone(),
            }),
        }
    }
    let collect = |list: &dyn Fn(usize) -> Option<IntervalEstimate>| -> Vec<IntervalEstimate> { (0..ok.len()).filter_map(list).collect() };
    let find = |v: &Vec<NamedEstimate>, name: &str| v.iter().find(|e| e.name == name).map(|e| e.value);
    let parameters = truth
        .parameters
        .iter()
        .filter_map(|(name, t)| {
            let vals = collect(&|k| find(ok[k].0, name));
            (!vals.is_empty()).then(|| row(name, *t, &vals))
        })
        .collect();
    let estimators = [ESTIMATOR_PROPOSED, ESTIMATOR_MEAN_DIFF, ESTIMATOR_IPWE, ESTIMATOR_LATE]
        .iter()
        .filter_map(|name| {
            let vals = collect(&|k| find(ok[k].1, name));
            (!vals.is_empty()).then(|| row(name, truth.ate, &vals))
        })
        .collect();
    let cs: Vec<f64> = ok.iter().filter_map(|o| *o.2).collect();
    ReplicationSummary {
        schema_version: SCHEMA_VERSION,
        replications: records.len(),
        succeeded: ok.len(),
        failed: failures.len(),
        failures,
        parameters,
        estimators,
        mean_c_statistic: (!cs.is_empty()).then(|| cs.iter().sum::<f64>() / cs.len() as f64),
        truth: truth.clone(),
    }
}

pub fn artifact_path(dir: &Path, replication: usize) -> PathBuf {
    dir.join("replications").join(format!("rep_{replication:04}.json"))
}

/// Runs all replications on a pool of `threads` workers (rayon's default when `None`).
///
/// With `out`, each record is written to `out/replications/` and the summary
/// to `out/summary.json`.
pub fn replicate(cfg: &RunConfig, threads: Option<usize>, out: Option<&Path>) -> Result<(ReplicationSummary, Vec<ReplicationRecord>)> {
    cfg.validate()?;
    let truth = design_truth(cfg)?;
    let base = cfg.replication.base_seed;
    let run = || -> Vec<ReplicationRecord> {
        (1..=cfg.replication.replications)
            .into_par_iter()
            .map(|i| {
                let seed = base.wrapping_add(i as u64);
                let outcome = run_replication(cfg, seed)
                    .unwrap_or_else(|e| ReplicationOutcome::Failed { kind: e.kind().to_string(), message: e.to_string() });
                ReplicationRecord { replication: i, seed, outcome }
            })
            .collect()
    };
    let records = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| HteError::Config(format!("cannot build a {t}-thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let summary = summarize(&records, &truth);
    if let Some(dir) = out {
        if cfg.replication.write_artifacts {
            std::fs::create_dir_all(dir.join("replications"))?;
            for r in &records {
                write_json(r, &artifact_path(dir, r.replication))?;
            }
            write_json(&truth, &dir.join("truth.json"))?;
        }
        write_json(&summary, &dir.join("summary.json"))?;
    }
    Ok((summary, records))
}

/// Recomputes the summary from artifacts written by [`replicate`].
pub fn summary_from_artifacts(dir: &Path) -> Result<ReplicationSummary> {
    let truth: Truth = serde_json::from_str(&std::fs::read_to_string(dir.join("truth.json"))?)?;
    let mut records = Vec::new();
    for entry in std::fs::read_dir(dir.join("replications"))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            records.push(serde_json::from_str::<ReplicationRecord>(&std::fs::read_to_string(&path)?)?);
        }
    }
    Ok(summarize(&records, &truth))
}
