//! Declarative experiment configuration, read from TOML.
//!
//! Only `kind` and `[mesh]` are required (the `iact` kind needs no mesh);
//! MCMC kinds also need `mcmc.seed`.

use std::path::{Path, PathBuf};

use mlspde_core::darcy::ForwardSetup;
use mlspde_core::grid::MeshSpec;
use mlspde_core::sampler::{SolverKind, SpdeConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VerifyCovariance,
    #[serde(alias = "sample")]
    SamplePrior,
    SampleHier,
    Decompose,
    Timing,
    McmcSl,
    McmcMl,
    Iact,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::VerifyCovariance => "verify-covariance",
            Self::SamplePrior => "sample-prior",
            Self::SampleHier => "sample-hier",
            Self::Decompose => "decompose",
            Self::Timing => "timing",
            Self::McmcSl => "mcmc-sl",
            Self::McmcMl => "mcmc-ml",
            Self::Iact => "iact",
        }
    }

    pub fn is_mcmc(self) -> bool {
        matches!(self, Self::McmcSl | Self::McmcMl)
    }
}

/// SPDE parameters as `(kappa, g)` or as Matérn `(lambda, sigma2)`.
/// Neither given means `lambda = 0.3`, `sigma2 = 0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpdeSection {
    pub kappa: Option<f64>,
    pub g: Option<f64>,
    pub lambda: Option<f64>,
    pub sigma2: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverKind,
}

impl Default for SpdeSection {
    fn default() -> Self {
        Self { kappa: None, g: None, lambda: None, sigma2: None, tol: 1e-10, max_iter: 20_000, solver: SolverKind::Auto }
    }
}

impl SpdeSection {
    pub fn resolve(&self, dim: usize) -> Result<SpdeConfig> {
        let base = match (self.kappa, self.g, self.lambda, self.sigma2) {
            (Some(kappa), Some(g), None, None) => SpdeConfig::new(kappa, g),
            (None, None, lambda, sigma2) => SpdeConfig::from_matern(sigma2.unwrap_or(0.5), lambda.unwrap_or(0.3), dim)?,
            _ => {
                return Err(LabError::Config(
                    "spde: give either both kappa and g, or lambda/sigma2, not a mix".into(),
                ))
            }
        };
        let cfg = SpdeConfig { tol: self.tol, max_iter: self.max_iter, ..base }.with_solver(self.solver);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostModel {
    /// Work units of the forward model (deterministic).
    #[default]
    Model,
    /// Measured wall time per evaluation in the pilot runs.
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSection {
    pub seed: Option<u64>,
    /// Seed of the synthetic data; defaults to `seed + 1`.
    pub data_seed: Option<u64>,
    /// Existing observation JSON instead of synthetic data.
    pub observation: Option<PathBuf>,
    /// Constant likelihood: chains sample the prior.
    pub flat: bool,
    /// pCN step size as `β²`.
    pub beta2: f64,
    /// Steps discarded before a pilot run is recorded.
    pub pilot_burn_in: usize,
    pub pilot_steps: usize,
    pub epsilon: f64,
    pub cost_model: CostModel,
    /// Lower bound on post-burn-in steps of every main run.
    pub min_steps: usize,
    /// Upper bound on post-burn-in steps of every main run.
    pub max_steps: usize,
    /// Level of the `mcmc-sl` chain.
    pub level: usize,
    /// Sokal window constant.
    pub window_c: f64,
}

impl Default for McmcSection {
    fn default() -> Self {
        Self {
            seed: None,
            data_seed: None,
            observation: None,
            flat: false,
            beta2: 0.3,
            pilot_burn_in: 200,
            pilot_steps: 2000,
            epsilon: 0.05,
            cost_model: CostModel::Model,
            min_steps: 0,
            max_steps: 200_000,
            level: 0,
            window_c: 5.0,
        }
    }
}

impl McmcSection {
    pub fn beta(&self) -> f64 {
        self.beta2.sqrt()
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| LabError::Config("mcmc.seed is required for MCMC experiments".into()))
    }

    pub fn data_seed(&self) -> Result<u64> {
        Ok(self.data_seed.unwrap_or(self.seed()?.wrapping_add(1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub samples: usize,
    pub seed: u64,
    /// Target level (finest level of a hierarchical draw).
    pub level: usize,
    /// Field dumps written per level.
    pub dumps: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self { samples: 1000, seed: 0, level: 0, dumps: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub samples: usize,
    pub seed: u64,
    /// Pass threshold on the max SE multiple.
    pub threshold: f64,
    /// Negative control: scale Π by this factor (1 = correct).
    pub pi_scale: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { samples: 200_000, seed: 0, threshold: 5.0, pi_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSection {
    pub samples: usize,
    pub seed: u64,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self { samples: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IactSection {
    pub input: Option<PathBuf>,
    pub column: String,
    pub burn_in: usize,
    pub window_c: f64,
}

impl Default for IactSection {
    fn default() -> Self {
        Self { input: None, column: "Q".into(), burn_in: 0, window_c: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub mesh: Option<MeshSpec>,
    #[serde(default)]
    pub spde: SpdeSection,
    #[serde(default)]
    pub forward: ForwardSetup,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub timing: TimingSection,
    #[serde(default)]
    pub iact: IactSection,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A config with defaults everywhere except `kind` and `mesh`.
    pub fn new(kind: ExperimentKind, mesh: Option<MeshSpec>) -> Self {
        Self {
            kind,
            mesh,
            spde: SpdeSection::default(),
            forward: ForwardSetup::default(),
            mcmc: McmcSection::default(),
            sampling: SamplingSection::default(),
            verify: VerifySection::default(),
            timing: TimingSection::default(),
            iact: IactSection::default(),
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative input paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [cfg.mcmc.observation.as_mut(), cfg.iact.input.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != ExperimentKind::Iact {
            self.mesh()?.validate()?;
            self.spde(self.mesh()?.dim)?;
        }
        if self.kind.is_mcmc() {
            self.mcmc.seed()?;
            if !(self.mcmc.beta2 > 0.0 && self.mcmc.beta2 <= 1.0) {
                return Err(LabError::Config(format!("mcmc.beta2 must lie in (0, 1], got {}", self.mcmc.beta2)));
            }
            if !(self.mcmc.epsilon > 0.0) {
                return Err(LabError::Config(format!("mcmc.epsilon must be positive, got {}", self.mcmc.epsilon)));
            }
            if self.mcmc.pilot_steps < 8 {
                return Err(LabError::Config("mcmc.pilot_steps must be at least 8".into()));
            }
            if self.mcmc.min_steps > self.mcmc.max_steps {
                return Err(LabError::Config("mcmc.min_steps exceeds mcmc.max_steps".into()));
            }
            self.forward.validate()?;
        }
        if self.kind == ExperimentKind::Iact && self.iact.input.is_none() {
            return Err(LabError::Config("iact.input is required for the iact experiment".into()));
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<&MeshSpec> {
        self.mesh.as_ref().ok_or_else(|| LabError::Config(format!("[mesh] is required for {}", self.kind.name())))
    }

    pub fn spde(&self, dim: usize) -> Result<SpdeConfig> {
        self.spde.resolve(dim)
    }

    /// SHA-256 of the canonical JSON form, so formatting and comments do
    /// not change the hash.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}
