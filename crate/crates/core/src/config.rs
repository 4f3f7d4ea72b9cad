//! Versioned JSON run configuration. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::PsBasis;
use crate::censored::TobitGumbelParams;
use crate::error::{HteError, Result};
use crate::gmm::{AuxiliaryMoments, GmmConfig};
use crate::likelihood::PriorSpec;
use crate::model::{GaussianModelParams, Setup};
use crate::posterior::TargetKind;
use crate::sampler::SamplerSettings;
use crate::simulate::{Dgp, SimulationConfig, DEFAULT_ARM_PROBABILITY};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_REPLICATIONS: usize = 50;
pub const DEFAULT_N: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ModelKind {
    #[default]
    Gaussian,
    TobitGumbel,
}

impl std::str::FromStr for ModelKind {
    type Err = HteError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "gaussian" => Ok(ModelKind::Gaussian),
            "tobitgumbel" | "censored" | "tobit" => Ok(ModelKind::TobitGumbel),
            other => Err(HteError::Usage(format!("unknown model '{other}' (gaussian, tobit-gumbel)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct DgpSection {
    pub n: usize,
    /// Covariate sd; defaults to 1.5 (Gaussian) or 1.0 (Tobit–Gumbel).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_sd: Option<f64>,
    pub setup: Setup,
    pub arm_probability: f64,
    /// Generating values; the built-in simulation designs when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianModelParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tobit_gumbel: Option<TobitGumbelParams>,
}

impl Default for DgpSection {
    fn default() -> Self {
        Self {
            n: DEFAULT_N,
            x_sd: None,
            setup: Setup::RctOneSided,
            arm_probability: DEFAULT_ARM_PROBABILITY,
            gaussian: None,
            tobit_gumbel: None,
        }
    }
}

impl DgpSection {
    pub fn simulation_config(&self, model: ModelKind, seed: u64) -> SimulationConfig {
        let mut cfg = match model {
            ModelKind::Gaussian => {
                SimulationConfig::gaussian(self.n, self.gaussian.unwrap_or_else(GaussianModelParams::simulation_design), seed)
            }
            ModelKind::TobitGumbel => SimulationConfig::tobit_gumbel(
                self.n,
                self.tobit_gumbel.clone().unwrap_or_else(TobitGumbelParams::simulation_design),
                seed,
            ),
        };
        if let Some(s) = self.x_sd {
            cfg.x_sd = s;
        }
        cfg.setup = self.setup;
        cfg.arm_probability = self.arm_probability;
        cfg
    }

    pub fn truth(&self, model: ModelKind) -> Dgp {
        self.simulation_config(model, 0).dgp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct EstimandsSection {
    pub grid_points: usize,
    /// Explicit HTE grid; overrides `gridPoints`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub propensity_basis: PsBasis,
}

impl Default for EstimandsSection {
    fn default() -> Self {
        Self { grid_points: crate::estimands::DEFAULT_GRID_POINTS, grid: None, propensity_basis: PsBasis::Quadratic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub setup: Setup,
    /// Outcomes censored at zero; negative values are rejected.
    pub censored: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxiliaryMoments>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { path: None, setup: Setup::RctOneSided, censored: false, aux: None, aux_path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ReplicationSection {
    pub replications: usize,
    pub base_seed: u64,
    /// Persist one JSON artifact per replication under `--out`.
    pub write_artifacts: bool,
}

impl Default for ReplicationSection {
    fn default() -> Self {
        Self { replications: DEFAULT_REPLICATIONS, base_seed: 0, write_artifacts: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct IdentifySection {
    pub x_points: usize,
    pub y0_points: usize,
    /// Grids span the mean ± this many standard deviations of x and y0.
    pub span_sd: f64,
    pub tolerance: f64,
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self { x_points: 15, y0_points: 15, span_sd: 3.0, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelKind,
    pub target: TargetKind,
    pub dgp: DgpSection,
    pub sampler: SamplerSettings,
    pub prior: PriorSpec,
    pub gmm: GmmConfig,
    pub estimands: EstimandsSection,
    pub data: DataSection,
    pub replication: ReplicationSection,
    pub identify: IdentifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: ModelKind::Gaussian,
            target: TargetKind::MarginalBayes,
            dgp: DgpSection::default(),
            sampler: SamplerSettings::default(),
            prior: PriorSpec::default(),
            gmm: GmmConfig::default(),
            estimands: EstimandsSection::default(),
            data: DataSection::default(),
            replication: ReplicationSection::default(),
            identify: IdentifySection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HteError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HteError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let mut cfg = Self::from_json(&text)?;
        // Relative data paths resolve against the config file's directory.
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.data.path, &mut cfg.data.aux_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HteError::Config(format!(
                "unsupported schemaVersion {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.sampler.validate()?;
        if self.dgp.n == 0 {
            return Err(HteError::Config("dgp.n must be at least 1".into()));
        }
        if self.replication.replications == 0 {
            return Err(HteError::Config("replication.replications must be at least 1".into()));
        }
        if self.model == ModelKind::TobitGumbel && self.target != TargetKind::QuasiBayes {
            return Err(HteError::Config("the tobitGumbel model is fit only with the QUASI_BAYES target".into()));
        }
        if !(self.identify.span_sd > 0.0) {
            return Err(HteError::Config("identify.spanSd must be positive".into()));
        }
        if let Some(p) = &self.dgp.gaussian {
            p.validate()?;
        }
        if let Some(p) = &self.dgp.tobit_gumbel {
            p.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(cfg.replication.replications, 50);
        assert_eq!(cfg.dgp.n, 1000);
    }

    #[test]
    fn minimal_document_uses_defaults() {
        let cfg = RunConfig::from_json(r#"{"schemaVersion": 1, "sampler": {"iterations": 50, "warmup": 10}}"#).unwrap();
        assert_eq!(cfg.sampler.iterations, 50);
        assert_eq!(cfg.sampler.chains, 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            r#"{"schemaVersion": 1, "bogus": 1}"#,
            r#"{"schemaVersion": 1, "sampler": {"iters": 5}}"#,
            r#"{"schemaVersion": 1, "gmm": {"weight": "IDENTITY"}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(text), Err(HteError::Config(_))), "{text}");
        }
    }

    #[test]
    fn wrong_version_and_target_rejected() {
        assert!(RunConfig::from_json(r#"{"schemaVersion": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schemaVersion": 1, "model": "tobitGumbel"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schemaVersion": 1, "model": "tobitGumbel", "target": "QUASI_BAYES"}"#).is_ok());
    }
}
