//! Single-level and multilevel pCN MCMC for the Darcy inverse problem.
//!
//! Stream layout under the master `mcmc.seed`: Q pilots use substream
//! `100 + ℓ`, the coarse chain of the `Y_ℓ` pilot `200 + ℓ` and its fine
//! chain `300 + ℓ`. Main runs continue the pilot chains, so no state is
//! thrown away and reruns are bit-identical.

use std::fs;

use mlspde_core::chain::{
    iact_with, max_samples, ml_estimate, plan_allocation_with_rates, sample_mean, sample_variance, write_chain_csv,
    ChainRecord, IactEstimate, LevelSeries, MlEstimate, MlmcmcPlan, Posterior, SingleLevelChain, Target,
    TwoLevelChain,
};
use mlspde_core::darcy::{make_synthetic_data, DarcyModel, Observation};
use mlspde_core::noise::RngStreams;
use mlspde_core::sampler::FieldSampler;
use serde::Serialize;

use super::build_sampler;
use crate::config::{CostModel, ExperimentConfig};
use crate::error::{LabError, Result};
use crate::manifest::Outputs;
use crate::report::{Check, Report};

const Q_PILOT: u64 = 100;
const Y_PILOT_COARSE: u64 = 200;
const Y_PILOT_FINE: u64 = 300;

struct Problem {
    sampler: FieldSampler,
    targets: Vec<Posterior<DarcyModel>>,
}

impl Problem {
    fn target(&self, level: usize) -> &dyn Target {
        &self.targets[level]
    }
}

/// Loads or synthesizes the observation and builds one posterior per level.
fn build_problem(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Problem> {
    let spec = cfg.mesh()?;
    let m = &cfg.mcmc;
    let sampler = build_sampler(cfg)?;
    if m.flat {
        let targets = DarcyModel::for_hierarchy(spec, &cfg.forward)?.into_iter().map(Posterior::flat).collect();
        return Ok(Problem { sampler, targets });
    }
    let (obs, forward) = match &m.observation {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
            let obs = Observation::from_json(&text)?;
            let mut forward = cfg.forward.clone();
            forward.points = obs.points.clone();
            forward.sigma_eta2 = obs.sigma_eta2;
            (obs, forward)
        }
        None => {
            let (obs, _) = make_synthetic_data(spec, &cfg.spde(spec.dim)?, &cfg.forward, m.data_seed()?)?;
            (obs, cfg.forward.clone())
        }
    };
    out.write_text("observation.json", &(obs.to_json()? + "\n"))?;
    let targets = DarcyModel::for_hierarchy(spec, &forward)?
        .into_iter()
        .map(|model| Posterior::new(model, &obs))
        .collect::<mlspde_core::Result<Vec<_>>>()?;
    Ok(Problem { sampler, targets })
}

fn tau(series: &[f64], c: f64, what: &str) -> Result<IactEstimate> {
    iact_with(series, c).map_err(|e| LabError::Config(format!("{what}: {e}; increase mcmc.pilot_steps")))
}

fn write_chain(out: &mut Outputs, rel: &str, rec: &ChainRecord) -> Result<()> {
    let mut buf = Vec::new();
    write_chain_csv(rec, &mut buf)?;
    out.write_bytes(rel, &buf)?;
    Ok(())
}

/// Steps a main run records after its burn-in.
fn main_steps(cfg: &ExperimentConfig, planned: usize) -> usize {
    planned.max(cfg.mcmc.min_steps).min(cfg.mcmc.max_steps)
}

fn level_cost(cfg: &ExperimentConfig, target: &dyn Target, seconds_per_step: f64) -> f64 {
    match cfg.mcmc.cost_model {
        CostModel::Model => target.cost_units(),
        CostModel::Time => seconds_per_step,
    }
}

#[derive(Debug, Clone, Serialize)]
struct PilotStats {
    level: usize,
    series: &'static str,
    acceptance: f64,
    mean: f64,
    variance: f64,
    iact: IactEstimate,
    cost: f64,
}

fn pilot_stats(
    level: usize,
    series_name: &'static str,
    rec: &ChainRecord,
    series: &[f64],
    c: f64,
    cost: f64,
) -> Result<PilotStats> {
    Ok(PilotStats {
        level,
        series: series_name,
        acceptance: rec.acceptance_rate(),
        mean: sample_mean(series),
        variance: sample_variance(series)?,
        iact: tau(series, c, &format!("{series_name} pilot on level {level}"))?,
        cost,
    })
}

/// One chain at `mcmc.level`: pilot, single-level plan for `ε`, main run.
pub fn run_mcmc_sl(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Report> {
    let m = &cfg.mcmc;
    let problem = build_problem(cfg, out)?;
    let level = m.level;
    if level >= problem.sampler.num_levels() {
        return Err(LabError::Config(format!("mcmc.level {level} exceeds the hierarchy")));
    }
    let base = RngStreams::new(m.seed()?);
    let target = problem.target(level);
    let mut chain = SingleLevelChain::new(&problem.sampler, target, m.beta(), base.substream(Q_PILOT + level as u64))?;
    chain.burn_in(m.pilot_burn_in)?;
    let pilot = chain.run(m.pilot_steps, |_| {})?;
    let cost = level_cost(cfg, target, chain.seconds_per_step());
    let stats = pilot_stats(level, "Q", &pilot, &pilot.q, m.window_c, cost)?;
    out.record_time(format!("level{level}.seconds_per_step"), chain.seconds_per_step());

    let plan = plan_allocation_with_rates(&[stats.variance], &[cost], &[stats.iact.rate()], &[], m.epsilon)?;
    let lp = &plan.levels[0];
    let steps = lp.burn_in + main_steps(cfg, lp.n_total);
    let mut rec = pilot;
    rec.append(chain.run(steps.saturating_sub(rec.len()), |_| {})?)?;
    rec.burn_in = lp.burn_in;
    rec.subsample = lp.iact;
    write_chain(out, &format!("chains/level{level}.csv"), &rec)?;
    out.write_json("plan.json", &plan)?;
    out.write_json("pilots.json", &[&stats])?;

    let samples = max_samples(rec.len(), lp.iact, lp.burn_in);
    let est = ml_estimate(&[LevelSeries { series: &rec.q, subsample: lp.iact, burn_in: lp.burn_in, samples }])?;
    out.write_json("estimate.json", &est)?;
    let post = &rec.q[lp.burn_in..];
    let main_tau = iact_with(post, m.window_c).ok();

    let mut report = Report::new(cfg.kind.name());
    report.metric("level", level);
    report.metric("estimate", est.value);
    report.metric("std_error", est.std_error);
    report.metric("samples", samples);
    report.metric("planned_samples", lp.samples);
    report.metric("acceptance", rec.acceptance_rate());
    report.metric("pilot_tau", stats.iact.tau);
    if let Some(t) = main_tau {
        report.metric("main_tau", t.tau);
    }
    report.metric("variance", sample_variance(post)?);
    report.check(Check::new(
        "enough samples for an error estimate",
        samples >= 2,
        format!("{samples} subsampled values at rate {}", lp.iact),
    ));
    report.check(Check::at_most("cached states match recomputation", chain.audit()?, 1e-12));
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
struct MainStats {
    level: usize,
    /// `Y` for `ℓ < L`, `Q` for the coarsest level.
    series: &'static str,
    steps: usize,
    burn_in: usize,
    subsample: usize,
    samples: usize,
    planned_samples: usize,
    acceptance: f64,
    coarse_acceptance: Option<f64>,
    variance_q: f64,
    variance_y: Option<f64>,
    iact: Option<IactEstimate>,
}

#[derive(Debug, Clone, Serialize)]
struct CostComparison {
    epsilon: f64,
    multilevel_cost: f64,
    single_level_cost: f64,
    ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
struct MlSummary<'a> {
    plan: &'a MlmcmcPlan,
    estimate: &'a MlEstimate,
    cost: &'a CostComparison,
}

/// Pilots on every level, the multilevel plan, main runs, the multilevel
/// estimate and the diagnostic tables.
pub fn run_mlmcmc(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Report> {
    let m = &cfg.mcmc;
    let problem = build_problem(cfg, out)?;
    let sampler = &problem.sampler;
    let levels = sampler.num_levels();
    if levels < 2 {
        return Err(LabError::Config("mcmc-ml needs at least two levels".into()));
    }
    let top = levels - 1;
    let base = RngStreams::new(m.seed()?);
    let c = m.window_c;

    let mut q_chains = Vec::with_capacity(levels);
    let mut q_stats = Vec::with_capacity(levels);
    let mut q_recs = Vec::with_capacity(levels);
    for l in 0..levels {
        let target = problem.target(l);
        let mut chain = SingleLevelChain::new(sampler, target, m.beta(), base.substream(Q_PILOT + l as u64))?;
        chain.burn_in(m.pilot_burn_in)?;
        let rec = chain.run(m.pilot_steps, |_| {})?;
        if l < top {
            // The coarsest pilot is the start of its main run.
            write_chain(out, &format!("chains/pilot_q_level{l}.csv"), &rec)?;
        }
        out.record_time(format!("level{l}.q_seconds_per_step"), chain.seconds_per_step());
        let cost = level_cost(cfg, target, chain.seconds_per_step());
        q_stats.push(pilot_stats(l, "Q", &rec, &rec.q, c, cost)?);
        q_chains.push(chain);
        q_recs.push(rec);
    }
    let q_rates: Vec<usize> = q_stats.iter().map(|s| s.iact.rate()).collect();

    let mut y_chains = Vec::with_capacity(top);
    let mut y_stats = Vec::with_capacity(top);
    let mut y_recs = Vec::with_capacity(top);
    for l in 0..top {
        let coarse = q_chains[l + 1].fork(base.substream(Y_PILOT_COARSE + l as u64));
        let mut chain = TwoLevelChain::with_coarse_chain(
            sampler,
            problem.target(l),
            coarse,
            q_rates[l + 1],
            base.substream(Y_PILOT_FINE + l as u64),
        )?;
        chain.burn_in(m.pilot_burn_in)?;
        let rec = chain.run(m.pilot_steps, |_, _| {})?;
        out.record_time(format!("level{l}.y_seconds_per_step"), chain.seconds_per_step());
        y_stats.push(pilot_stats(l, "Y", &rec, rec.estimator_series(), c, q_stats[l].cost)?);
        y_chains.push(chain);
        y_recs.push(rec);
    }

    let mut variance: Vec<f64> = y_stats.iter().map(|s| s.variance).collect();
    variance.push(q_stats[top].variance);
    let cost: Vec<f64> = q_stats.iter().map(|s| s.cost).collect();
    let mut iact: Vec<usize> = y_stats.iter().map(|s| s.iact.rate()).collect();
    iact.push(q_rates[top]);
    let plan = plan_allocation_with_rates(&variance, &cost, &iact, &q_rates[1..], m.epsilon)?;
    out.write_json("plan.json", &plan)?;
    let pilots: Vec<&PilotStats> = q_stats.iter().chain(&y_stats).collect();
    out.write_json("pilots.json", &pilots)?;

    // Main runs extend the pilot records of the same chains, coarsest
    // first; each chain file is flushed as soon as it is complete.
    let mut records: Vec<ChainRecord> = Vec::with_capacity(levels);
    let mut main: Vec<MainStats> = Vec::with_capacity(levels);
    let mut coarse_top = q_chains.pop().expect("at least two levels");
    let mut y_chains: Vec<Option<TwoLevelChain>> = y_chains.into_iter().map(Some).collect();
    for l in (0..levels).rev() {
        let lp = &plan.levels[l];
        let steps = lp.burn_in + main_steps(cfg, lp.n_total);
        let (mut rec, coarse_acc) = if l == top {
            let mut rec = q_recs.pop().expect("one pilot per level");
            rec.append(coarse_top.run(steps.saturating_sub(rec.len()), |_| {})?)?;
            (rec, None)
        } else {
            let chain = y_chains[l].as_mut().expect("each level runs once");
            let mut rec = std::mem::take(&mut y_recs[l]);
            rec.append(chain.run(steps.saturating_sub(rec.len()), |_, _| {})?)?;
            let acc = match (rec.coarse_accepted, rec.coarse_steps) {
                (Some(a), Some(n)) if n > 0 => Some(a as f64 / n as f64),
                _ => None,
            };
            (rec, acc)
        };
        rec.burn_in = lp.burn_in;
        rec.subsample = lp.iact;
        write_chain(out, &format!("chains/level{l}.csv"), &rec)?;
        let series = rec.estimator_series();
        let post = &series[lp.burn_in.min(series.len())..];
        let q_post = &rec.q[lp.burn_in.min(rec.q.len())..];
        main.push(MainStats {
            level: l,
            series: if l == top { "Q" } else { "Y" },
            steps: rec.len(),
            burn_in: lp.burn_in,
            subsample: lp.iact,
            samples: max_samples(rec.len(), lp.iact, lp.burn_in),
            planned_samples: lp.samples,
            acceptance: rec.acceptance_rate(),
            coarse_acceptance: coarse_acc,
            variance_q: sample_variance(q_post)?,
            variance_y: if l == top { None } else { Some(sample_variance(post)?) },
            iact: iact_with(post, c).ok(),
        });
        records.push(rec);
    }
    records.reverse();
    main.reverse();

    let series: Vec<LevelSeries> = records
        .iter()
        .zip(&main)
        .map(|(r, s)| LevelSeries { series: r.estimator_series(), subsample: s.subsample, burn_in: s.burn_in, samples: s.samples })
        .collect();
    let est = ml_estimate(&series)?;
    out.write_json("estimate.json", &est)?;

    let q0 = &q_stats[0];
    let sl_cost = 2.0 * q0.variance / (m.epsilon * m.epsilon) * q0.iact.rate() as f64 * q0.cost;
    let comparison = CostComparison {
        epsilon: m.epsilon,
        multilevel_cost: plan.total_cost,
        single_level_cost: sl_cost,
        ratio: plan.total_cost / sl_cost,
    };
    write_tables(out, &main, &q_stats, &y_stats, &comparison)?;
    out.write_json("result.json", &MlSummary { plan: &plan, estimate: &est, cost: &comparison })?;

    let mut report = Report::new(cfg.kind.name());
    report.metric("estimate", est.value);
    report.metric("std_error", est.std_error);
    report.metric("cost_ratio", comparison.ratio);
    for s in &main {
        let l = s.level;
        report.metric(&format!("level{l}.acceptance"), s.acceptance);
        report.metric(&format!("level{l}.samples"), s.samples);
        report.metric(&format!("level{l}.planned_samples"), s.planned_samples);
        report.metric(&format!("level{l}.variance_q"), s.variance_q);
        if let Some(v) = s.variance_y {
            report.metric(&format!("level{l}.variance_y"), v);
        }
        if let Some(t) = s.iact {
            report.metric(&format!("level{l}.tau"), t.tau);
        }
    }
    report.check(Check::new(
        "every level has at least two subsampled values",
        main.iter().all(|s| s.samples >= 2),
        main.iter().map(|s| format!("L{}={}", s.level, s.samples)).collect::<Vec<_>>().join(" "),
    ));
    let audit = y_chains.iter().flatten().map(|c| c.audit()).chain(std::iter::once(coarse_top.audit())).try_fold(0.0f64, |a, r| r.map(|v| a.max(v)))?;
    report.check(Check::at_most("cached states match recomputation", audit, 1e-12));
    if !m.flat {
        property_checks(&mut report, &main)?;
    }
    Ok(report)
}

/// Qualitative behavior of the multilevel sampler with an informative
/// likelihood. Under a flat likelihood every proposal is accepted and the
/// orderings below carry no information, so they are skipped.
fn property_checks(report: &mut Report, main: &[MainStats]) -> Result<()> {
    let top = main.len() - 1;
    let acc: Vec<f64> = main.iter().map(|s| s.acceptance).collect();
    report.check(Check::new(
        "acceptance increases from coarse to fine",
        acc.windows(2).all(|w| w[0] > w[1]),
        acc.iter().enumerate().map(|(l, a)| format!("L{l}={a:.3}")).collect::<Vec<_>>().join(" "),
    ));
    let vy: Vec<f64> = main[..top].iter().map(|s| s.variance_y.expect("Y level")).collect();
    let y_below_q = main[..top].iter().zip(&vy).all(|(s, v)| *v < s.variance_q);
    report.check(Check::new(
        "V[Y_l] < V[Q_l]",
        y_below_q,
        main[..top].iter().zip(&vy).map(|(s, v)| format!("L{}: {v:.3e} vs {:.3e}", s.level, s.variance_q)).collect::<Vec<_>>().join("; "),
    ));
    report.check(Check::new(
        "V[Y_l] decreases toward the finest level",
        vy.windows(2).all(|w| w[0] < w[1]),
        vy.iter().enumerate().map(|(l, v)| format!("L{l}={v:.3e}")).collect::<Vec<_>>().join(" "),
    ));
    let rate = |s: &MainStats| {
        s.iact.ok_or_else(|| LabError::Config(format!("no IACT window on level {}; increase mcmc.min_steps", s.level)))
    };
    let t_top = rate(&main[top])?.rate() as f64;
    let ty = main[..top].iter().map(|s| rate(s).map(|t| t.rate())).collect::<Result<Vec<_>>>()?;
    report.check(Check::new(
        "t(Y_l) <= t(Q_L)/2",
        ty.iter().all(|&t| t as f64 <= t_top / 2.0),
        format!("t(Q_L)={t_top} t(Y)={ty:?}"),
    ));
    Ok(())
}

fn write_tables(
    out: &mut Outputs,
    main: &[MainStats],
    q_pilots: &[PilotStats],
    y_pilots: &[PilotStats],
    cost: &CostComparison,
) -> Result<()> {
    let f = |x: f64| format!("{x:.16e}");
    let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
    out.write_csv("acceptance.csv", |w| {
        w.write_record(["level", "series", "acceptance", "coarse_acceptance", "pilot_q_acceptance"])?;
        for (s, q) in main.iter().zip(q_pilots) {
            w.write_record([s.level.to_string(), s.series.to_string(), f(s.acceptance), opt(s.coarse_acceptance), f(q.acceptance)])?;
        }
        Ok(())
    })?;
    out.write_csv("iact.csv", |w| {
        w.write_record(["level", "series", "run", "tau", "window", "rate", "len"])?;
        for p in q_pilots.iter().chain(y_pilots) {
            let t = &p.iact;
            w.write_record([p.level.to_string(), p.series.to_string(), "pilot".into(), f(t.tau), t.window.to_string(), t.rate().to_string(), t.len.to_string()])?;
        }
        for s in main {
            let (tau, window, rate, len) = match &s.iact {
                Some(t) => (f(t.tau), t.window.to_string(), t.rate().to_string(), t.len.to_string()),
                None => Default::default(),
            };
            w.write_record([s.level.to_string(), s.series.to_string(), "main".into(), tau, window, rate, len])?;
        }
        Ok(())
    })?;
    out.write_csv("variance.csv", |w| {
        w.write_record(["level", "variance_q", "variance_y", "pilot_variance_q", "pilot_variance_y"])?;
        for (l, s) in main.iter().enumerate() {
            let py = y_pilots.get(l).map(|p| p.variance);
            w.write_record([s.level.to_string(), f(s.variance_q), opt(s.variance_y), f(q_pilots[l].variance), opt(py)])?;
        }
        Ok(())
    })?;
    out.write_csv("cost.csv", |w| {
        w.write_record(["epsilon", "multilevel_cost", "single_level_cost", "ratio"])?;
        w.write_record([f(cost.epsilon), f(cost.multilevel_cost), f(cost.single_level_cost), f(cost.ratio)])?;
        Ok(())
    })?;
    Ok(())
}
