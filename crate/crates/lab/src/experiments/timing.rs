use std::time::Instant;

use mlspde_core::darcy::{DarcyModel, ForwardModel};
use mlspde_core::noise::RngStreams;

use super::build_sampler;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::manifest::Outputs;
use crate::report::{Check, Report};

struct LevelTiming {
    level: usize,
    elements: usize,
    sample_s: f64,
    forward_s: Option<f64>,
    sum_u: f64,
    sum_q: f64,
}

/// Mean wall time of one prior sample and one forward solve per level.
/// Timings land under `timing/` and are excluded from determinism checks.
pub fn run_timing(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Report> {
    let t = &cfg.timing;
    let sampler = build_sampler(cfg)?;
    let spec = cfg.mesh()?;
    // Darcy needs RT0, which has no 1D version.
    let models = if spec.dim >= 2 { Some(DarcyModel::for_hierarchy(spec, &cfg.forward)?) } else { None };
    let mut rows = Vec::new();
    let mut streams = RngStreams::new(t.seed);
    for level in 0..sampler.num_levels() {
        let elements = sampler.discretization().mesh(level).num_elements();
        if t.samples == 0 {
            continue;
        }
        let mut sample_s = 0.0;
        let mut forward_s = 0.0;
        let (mut sum_u, mut sum_q) = (0.0, 0.0);
        for _ in 0..t.samples {
            let start = Instant::now();
            let r = sampler.sample_prior(level, &mut streams)?;
            sample_s += start.elapsed().as_secs_f64();
            sum_u += r.u.iter().sum::<f64>();
            if let Some(m) = &models {
                let start = Instant::now();
                sum_q += m[level].evaluate(&r.u)?.qoi;
                forward_s += start.elapsed().as_secs_f64();
            }
        }
        let n = t.samples as f64;
        rows.push(LevelTiming {
            level,
            elements,
            sample_s: sample_s / n,
            forward_s: models.as_ref().map(|_| forward_s / n),
            sum_u,
            sum_q,
        });
    }
    out.write_csv("timing/levels.csv", |w| {
        w.write_record(["level", "elements", "samples", "sample_seconds", "forward_seconds"])?;
        for r in &rows {
            w.write_record([
                r.level.to_string(),
                r.elements.to_string(),
                t.samples.to_string(),
                format!("{:.6e}", r.sample_s),
                r.forward_s.map(|s| format!("{s:.6e}")).unwrap_or_default(),
            ])?;
        }
        Ok(())
    })?;
    // Checksums of the timed realizations, identical across reruns.
    out.write_csv("samples.csv", |w| {
        w.write_record(["level", "samples", "sum_u", "sum_q"])?;
        for r in &rows {
            w.write_record([r.level.to_string(), t.samples.to_string(), format!("{:.16e}", r.sum_u), format!("{:.16e}", r.sum_q)])?;
        }
        Ok(())
    })?;
    for r in &rows {
        out.record_time(format!("level{}.sample", r.level), r.sample_s);
        if let Some(f) = r.forward_s {
            out.record_time(format!("level{}.forward", r.level), f);
        }
    }
    let mut report = Report::new(cfg.kind.name());
    report.metric("samples", t.samples);
    report.metric("levels", sampler.num_levels());
    for w in rows.windows(2) {
        report.metric(&format!("level{}.fine_to_coarse_ratio", w[0].level), w[0].sample_s / w[1].sample_s);
    }
    if rows.len() > 1 {
        let cheaper = rows.windows(2).all(|w| w[1].sample_s < w[0].sample_s);
        let detail = rows.iter().map(|r| format!("L{}={:.3e}s", r.level, r.sample_s)).collect::<Vec<_>>().join(" ");
        report.check(Check::new("coarser levels sample faster", cheaper, detail));
    }
    Ok(report)
}
