use mlspde_core::grid::LevelMesh;
use mlspde_core::noise::RngStreams;
use mlspde_core::sampler::{write_field, FieldDump, FieldRealization};

use super::build_sampler;
use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::manifest::Outputs;
use crate::report::{Check, Report};

/// Allowed relative deviation of the mean physical-cell variance from σ².
pub const VARIANCE_TOL: f64 = 0.15;

/// Per-element mean and variance (Welford).
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self { n: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn variance(&self, i: usize) -> f64 {
        self.m2[i] / (self.n - 1) as f64
    }
}

struct VarianceSummary {
    mean_ratio: f64,
    min_ratio: f64,
    max_ratio: f64,
}

/// Writes per-physical-cell statistics and summarizes `var / σ²`.
fn variance_table(out: &mut Outputs, rel: &str, mesh: &LevelMesh, m: &Moments, sigma2: f64) -> Result<VarianceSummary> {
    let cells = mesh.physical_elements();
    let ratios: Vec<f64> = cells.iter().map(|&e| m.variance(e) / sigma2).collect();
    out.write_csv(rel, |w| {
        let mut header = vec!["element".to_string()];
        header.extend(["x", "y", "z"].iter().take(mesh.dim()).map(|s| s.to_string()));
        header.extend(["mean", "variance", "ratio"].map(String::from));
        w.write_record(&header)?;
        for (&e, r) in cells.iter().zip(&ratios) {
            let mut row = vec![e.to_string()];
            row.extend(mesh.cell_center(e).iter().map(|c| format!("{c:.16e}")));
            row.extend([format!("{:.16e}", m.mean[e]), format!("{:.16e}", m.variance(e)), format!("{r:.16e}")]);
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    Ok(VarianceSummary {
        mean_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

fn dump(out: &mut Outputs, rel: &str, mesh: &LevelMesh, r: &FieldRealization) -> Result<()> {
    let d = FieldDump { level: r.level, cells: mesh.cells_per_dir().to_vec(), values: r.u.clone() };
    let mut buf = Vec::new();
    write_field(&d, &mut buf)?;
    out.write_bytes(rel, &buf)?;
    Ok(())
}

fn check_samples(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.sampling.samples < 2 {
        return Err(LabError::Config("sampling.samples must be at least 2".into()));
    }
    Ok(())
}

/// Single-level prior samples on `sampling.level`, with the empirical
/// variance of every physical cell against the Matérn marginal variance.
pub fn run_sample_prior(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Report> {
    check_samples(cfg)?;
    let s = &cfg.sampling;
    let sampler = build_sampler(cfg)?;
    if s.level >= sampler.num_levels() {
        return Err(LabError::Config(format!("sampling.level {} exceeds the hierarchy", s.level)));
    }
    let mesh = sampler.discretization().mesh(s.level);
    let dim = mesh.dim();
    let sigma2 = sampler.config().marginal_variance(dim)?;
    let mut streams = RngStreams::new(s.seed);
    let mut m = Moments::new(mesh.num_elements());
    for i in 0..s.samples {
        let r = sampler.sample_prior(s.level, &mut streams)?;
        if i < s.dumps {
            dump(out, &format!("fields/level{}_{i:04}.txt", s.level), mesh, &r)?;
        }
        m.push(&r.u);
    }
    let v = variance_table(out, &format!("variance_level{}.csv", s.level), mesh, &m, sigma2)?;
    let mut report = Report::new(cfg.kind.name());
    report.metric("samples", s.samples);
    report.metric("level", s.level);
    report.metric("sigma2", sigma2);
    report.metric("mean_variance_ratio", v.mean_ratio);
    report.metric("min_variance_ratio", v.min_ratio);
    report.metric("max_variance_ratio", v.max_ratio);
    report.metric("max_abs_deviation", (v.max_ratio - 1.0).abs().max((1.0 - v.min_ratio).abs()));
    report.check(Check::at_most("mean physical-cell variance within 15% of sigma2", (v.mean_ratio - 1.0).abs(), VARIANCE_TOL));
    Ok(report)
}

/// Hierarchical draws: one field per level from `L` down to
/// `sampling.level` per draw, checking `P^T b_ℓ = b_{ℓ+1}` on every draw.
pub fn run_sample_hier(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Report> {
    check_samples(cfg)?;
    let s = &cfg.sampling;
    let sampler = build_sampler(cfg)?;
    let disc = sampler.discretization();
    if s.level >= sampler.num_levels() {
        return Err(LabError::Config(format!("sampling.level {} exceeds the hierarchy", s.level)));
    }
    let sigma2 = sampler.config().marginal_variance(disc.mesh(0).dim())?;
    let levels: Vec<usize> = (s.level..sampler.num_levels()).rev().collect();
    let mut moments: Vec<Moments> = levels.iter().map(|&l| Moments::new(disc.mesh(l).num_elements())).collect();
    let mut streams = RngStreams::new(s.seed);
    let mut consistency: f64 = 0.0;
    for i in 0..s.samples {
        let fields = sampler.sample_hierarchical(s.level, &mut streams)?;
        for (j, r) in fields.iter().enumerate() {
            if i < s.dumps {
                dump(out, &format!("fields/level{}_{i:04}.txt", r.level), disc.mesh(r.level), r)?;
            }
            moments[j].push(&r.u);
            if j > 0 {
                let pt = disc.transfer(r.level).p_transpose(&r.noise.b)?;
                let coarse = &fields[j - 1].noise.b;
                let err = pt.iter().zip(coarse).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                consistency = consistency.max(err);
            }
        }
    }
    let mut report = Report::new(cfg.kind.name());
    report.metric("samples", s.samples);
    report.metric("sigma2", sigma2);
    for (j, &l) in levels.iter().enumerate() {
        let v = variance_table(out, &format!("variance_level{l}.csv"), disc.mesh(l), &moments[j], sigma2)?;
        report.metric(&format!("level{l}.mean_variance_ratio"), v.mean_ratio);
    }
    report.metric("max_coarse_consistency_error", consistency);
    report.check(Check::at_most("P^T b_l = b_(l+1) on every draw", consistency, 1e-12));
    Ok(report)
}

/// Splits hierarchical fields into per-level components and checks that
/// the components add up to the field.
pub fn run_decompose(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Report> {
    let s = &cfg.sampling;
    let sampler = build_sampler(cfg)?;
    let disc = sampler.discretization();
    if s.level >= sampler.num_levels() {
        return Err(LabError::Config(format!("sampling.level {} exceeds the hierarchy", s.level)));
    }
    let mesh = disc.mesh(s.level);
    let mut streams = RngStreams::new(s.seed);
    let mut max_rel: f64 = 0.0;
    let draws = s.samples.max(1);
    let mut energy = vec![0.0; sampler.num_levels()];
    for i in 0..draws {
        let field = sampler.sample_hierarchical_at(s.level, &mut streams)?;
        let parts = sampler.decompose(&field)?;
        let mut sum = vec![0.0; field.u.len()];
        for p in &parts {
            for (a, b) in sum.iter_mut().zip(&p.u) {
                *a += b;
            }
            energy[p.source_level] += p.u.iter().map(|x| x * x).sum::<f64>() / draws as f64;
        }
        let scale = field.u.iter().map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let err = sum.iter().zip(&field.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        max_rel = max_rel.max(err);
        if i < s.dumps {
            dump(out, &format!("components/draw{i:04}_field.txt"), mesh, &field)?;
            for p in &parts {
                let r = FieldRealization { u: p.u.clone(), ..field.clone() };
                dump(out, &format!("components/draw{i:04}_from_level{}.txt", p.source_level), mesh, &r)?;
            }
        }
    }
    out.write_csv("component_energy.csv", |w| {
        w.write_record(["source_level", "mean_squared_norm"])?;
        for (l, e) in energy.iter().enumerate().skip(s.level) {
            w.write_record([l.to_string(), format!("{e:.16e}")])?;
        }
        Ok(())
    })?;
    let mut report = Report::new(cfg.kind.name());
    report.metric("draws", draws);
    report.metric("max_relative_reconstruction_error", max_rel);
    report.check(Check::at_most("components sum to the field", max_rel, 1e-8));
    Ok(report)
}
