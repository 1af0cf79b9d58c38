//! Experiment drivers. Each writes its artifacts through [`Outputs`] and
//! returns a [`Report`]; [`run`] adds the manifest.

mod iact;
mod mcmc;
mod sample;
mod timing;
mod verify;

use std::path::{Path, PathBuf};

use mlspde_core::grid::build_hierarchy;
use mlspde_core::sampler::FieldSampler;
use mlspde_core::spaces::{Discretization, SpaceOptions};

pub use iact::run_iact;
pub use mcmc::{run_mcmc_sl, run_mlmcmc};
pub use sample::{run_decompose, run_sample_hier, run_sample_prior};
pub use timing::run_timing;
pub use verify::run_verify_covariance;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::manifest::{Outcome, Outputs, RunManifest};
use crate::report::Report;

/// Default output root when neither `--out` nor `output` is given.
pub const OUT_ENV: &str = "MLSPDE_OUT";

/// `--out`, then the config's `output`, then `$MLSPDE_OUT/<kind>`, then
/// `mlspde-out/<kind>`.
pub fn output_dir(cfg: &ExperimentConfig, cli: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output {
        return p.clone();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("mlspde-out"));
    root.join(cfg.kind.name())
}

pub(crate) fn build_discretization(cfg: &ExperimentConfig) -> Result<Discretization> {
    Ok(Discretization::new(build_hierarchy(cfg.mesh()?)?, SpaceOptions::default())?)
}

pub(crate) fn build_sampler(cfg: &ExperimentConfig) -> Result<FieldSampler> {
    Ok(FieldSampler::new(build_discretization(cfg)?, cfg.spde(cfg.mesh()?.dim)?)?)
}

pub fn run_experiment(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Report> {
    match cfg.kind {
        ExperimentKind::VerifyCovariance => run_verify_covariance(cfg, out),
        ExperimentKind::SamplePrior => run_sample_prior(cfg, out),
        ExperimentKind::SampleHier => run_sample_hier(cfg, out),
        ExperimentKind::Decompose => run_decompose(cfg, out),
        ExperimentKind::Timing => run_timing(cfg, out),
        ExperimentKind::McmcSl => run_mcmc_sl(cfg, out),
        ExperimentKind::McmcMl => run_mlmcmc(cfg, out),
        ExperimentKind::Iact => run_iact(cfg, out),
    }
}

/// Runs one experiment in `dir`. The manifest is written even when the
/// experiment fails, listing whatever was produced up to that point.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<(Report, RunManifest)> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let mut out = Outputs::create(dir)?;
    out.write_text("config.toml", &cfg.to_toml()?)?;
    match run_experiment(cfg, &mut out) {
        Ok(report) => {
            if cfg.kind == ExperimentKind::Timing {
                out.mark_volatile("summary.json");
            }
            out.write_json("summary.json", &report)?;
            let outcome = if report.passed() { Outcome::Passed } else { Outcome::Failed { failures: report.failures() } };
            let summary = serde_json::to_value(&report.metrics)?;
            let manifest = out.finish(cfg.kind.name(), &hash, outcome, summary)?;
            Ok((report, manifest))
        }
        Err(e) => {
            let outcome = Outcome::Error { message: e.to_string() };
            out.finish(cfg.kind.name(), &hash, outcome, serde_json::Value::Null)?;
            Err(e)
        }
    }
}
