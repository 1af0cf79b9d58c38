use mlspde_core::noise::{hierarchical_noise, single_level_noise, two_level_combine, RngStreams};
use mlspde_core::sampler::{DenseOracle, FieldSampler};
use mlspde_core::spaces::Discretization;
use mlspde_core::spaces::TransferPair;
use mlspde_core::stats::{covariance_se, max_se_multiple, Covariance};
use nalgebra::{DMatrix, DVector};

use super::{build_discretization, build_sampler};
use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::manifest::Outputs;
use crate::report::{Check, Report};

struct Stat {
    name: String,
    level: usize,
    multiple: f64,
}

fn compare(name: &str, level: usize, cov: &Covariance, target: &DMatrix<f64>) -> Stat {
    let se = covariance_se(target, cov.count());
    Stat { name: name.to_string(), level, multiple: max_se_multiple(&cov.estimate(), target, &se) }
}

/// Transfers with Π scaled by `scale`; `scale = 1` returns the real ones.
fn transfers(disc: &Discretization, scale: f64) -> Result<Vec<TransferPair>> {
    let t = disc.transfers();
    if scale == 1.0 {
        return Ok(t.to_vec());
    }
    t.iter()
        .map(|pair| {
            let mut pi = pair.pi().clone();
            pi.values_mut().iter_mut().for_each(|v| *v *= scale);
            Ok(TransferPair::from_parts(pair.fine_level(), pair.p().clone(), pi)?)
        })
        .collect()
}

/// Noise on level 0 from the coarsest level down, through `pairs`.
fn hierarchical_through(disc: &Discretization, pairs: &[TransferPair], streams: &mut RngStreams) -> Result<Vec<f64>> {
    let top = disc.coarsest_level();
    let mut b = single_level_noise(disc.ops(top), streams).b;
    for l in (0..top).rev() {
        let ops = disc.ops(l);
        let (xi, _) = streams.sample_standard_normal(l, ops.num_elements());
        let w: Vec<f64> = ops.w_sqrt().iter().zip(&xi).map(|(s, x)| s * x).collect();
        b = two_level_combine(&pairs[l], &b, &w)?;
    }
    Ok(b)
}

/// Empirical covariances of single-level, two-level and multilevel noise
/// against `W_0`, and of single-level and hierarchical fields against the
/// dense `A^{-1} W A^{-1}` (dimensions 2 and 3).
pub fn run_verify_covariance(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Report> {
    let v = &cfg.verify;
    if v.samples < 2 {
        return Err(LabError::Config("verify.samples must be at least 2".into()));
    }
    let disc = &build_discretization(cfg)?;
    let ops0 = disc.ops(0);
    let n0 = ops0.num_elements();
    let w0 = DMatrix::from_diagonal(&DVector::from_column_slice(ops0.w()));
    let levels = disc.num_levels();
    let pairs = transfers(disc, v.pi_scale)?;
    // Fields need RT0, which has no 1D version.
    let fields: Option<(FieldSampler, DenseOracle)> = match ops0.rt() {
        Some(_) => {
            let sampler = build_sampler(cfg)?;
            let oracle = DenseOracle::new(ops0, sampler.config())?;
            Some((sampler, oracle))
        }
        None => None,
    };
    let base = RngStreams::new(v.seed);
    let mut stats = Vec::new();

    let mut streams = base.substream(1);
    let mut cov = Covariance::new(n0);
    for _ in 0..v.samples {
        cov.push(&single_level_noise(ops0, &mut streams).b);
    }
    stats.push(compare("noise-single-level", 0, &cov, &w0));

    if levels > 1 {
        let mut streams = base.substream(2);
        let mut cov = Covariance::new(n0);
        for _ in 0..v.samples {
            let bc = single_level_noise(disc.ops(1), &mut streams).b;
            let (xi, _) = streams.sample_standard_normal(0, n0);
            let w: Vec<f64> = ops0.w_sqrt().iter().zip(&xi).map(|(s, x)| s * x).collect();
            cov.push(&two_level_combine(&pairs[0], &bc, &w)?);
        }
        stats.push(compare("noise-two-level", 0, &cov, &w0));

        let mut streams = base.substream(3);
        let mut cov = Covariance::new(n0);
        for _ in 0..v.samples {
            let b = if v.pi_scale == 1.0 {
                hierarchical_noise(disc.all_ops(), disc.transfers(), &mut streams, 0)?.pop().expect("level 0").b
            } else {
                hierarchical_through(disc, &pairs, &mut streams)?
            };
            cov.push(&b);
        }
        stats.push(compare("noise-multilevel", 0, &cov, &w0));
    }

    if let Some((sampler, oracle)) = &fields {
        let c = oracle.covariance();
        let mut streams = base.substream(4);
        let mut cov = Covariance::new(n0);
        for _ in 0..v.samples {
            cov.push(&sampler.sample_prior(0, &mut streams)?.u);
        }
        stats.push(compare("field-single-level", 0, &cov, &c));
        if levels > 1 && v.pi_scale == 1.0 {
            let mut streams = base.substream(5);
            let mut cov = Covariance::new(n0);
            for _ in 0..v.samples {
                cov.push(&sampler.sample_hierarchical_at(0, &mut streams)?.u);
            }
            stats.push(compare("field-hierarchical", 0, &cov, &c));
        }
    }

    out.write_csv("covariance_checks.csv", |w| {
        w.write_record(["check", "level", "samples", "max_se_multiple", "threshold"])?;
        for s in &stats {
            w.write_record([
                s.name.clone(),
                s.level.to_string(),
                v.samples.to_string(),
                format!("{:.16e}", s.multiple),
                v.threshold.to_string(),
            ])?;
        }
        Ok(())
    })?;

    let mut report = Report::new(cfg.kind.name());
    report.metric("samples", v.samples);
    report.metric("pi_scale", v.pi_scale);
    report.metric("elements", n0);
    for s in &stats {
        report.metric(&format!("{}.max_se_multiple", s.name), s.multiple);
        report.check(Check::below(&s.name, s.multiple, v.threshold));
    }
    Ok(report)
}
