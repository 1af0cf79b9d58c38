//! pCN Metropolis–Hastings on one level and the two-level kernel behind the
//! multilevel estimator.
//!
//! A proposal mixes both `u` and its noise `b`, so every state keeps a
//! consistent `(u, b)` pair. pCN leaves the prior invariant, hence acceptance
//! only involves likelihood ratios.

mod diagnostics;
mod output;
mod plan;

use std::time::Instant;

pub use diagnostics::{autocorrelation, iact, iact_with, sample_mean, sample_variance, subsample_rate, IactEstimate, SOKAL_C};
pub use output::{read_series_csv, write_chain_csv};
pub use plan::{
    max_samples, ml_estimate, plan_allocation, plan_allocation_with_rates, LevelPlan, LevelSeries, MlEstimate, MlmcmcPlan,
};

use crate::darcy::{ForwardModel, Observation};
use crate::error::{Error, Result};
use crate::noise::{two_level_combine, Channel, NoiseVector, RngStreams, TraceEntry, XiSource};
use crate::sampler::{FieldRealization, FieldSampler};

/// Log-likelihood and quantity of interest of one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_like: f64,
    pub qoi: f64,
}

/// Posterior ingredients on one level, as seen by a chain.
pub trait Target: Send + Sync {
    fn level(&self) -> usize;

    fn evaluate(&self, u: &[f64]) -> Result<Evaluation>;

    /// Model work units of one evaluation.
    fn cost_units(&self) -> f64 {
        1.0
    }
}

/// Gaussian data misfit through a forward model. With `flat` the
/// likelihood is constant and only the QoI is computed.
#[derive(Debug, Clone)]
pub struct Posterior<M> {
    model: M,
    p_obs: Vec<f64>,
    sigma_eta2: f64,
    flat: bool,
}

impl<M: ForwardModel> Posterior<M> {
    pub fn new(model: M, obs: &Observation) -> Result<Self> {
        if !(obs.sigma_eta2 > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_eta2 must be positive, got {}", obs.sigma_eta2)));
        }
        Ok(Self { model, p_obs: obs.p_obs.clone(), sigma_eta2: obs.sigma_eta2, flat: false })
    }

    pub fn flat(model: M) -> Self {
        Self { model, p_obs: Vec::new(), sigma_eta2: 1.0, flat: true }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }
}

impl<M: ForwardModel + Send + Sync> Target for Posterior<M> {
    fn level(&self) -> usize {
        self.model.level()
    }

    fn evaluate(&self, u: &[f64]) -> Result<Evaluation> {
        let out = self.model.evaluate(u)?;
        let log_like = if self.flat { 0.0 } else { crate::darcy::log_likelihood(&self.p_obs, &out.predicted, self.sigma_eta2)? };
        Ok(Evaluation { log_like, qoi: out.qoi })
    }

    fn cost_units(&self) -> f64 {
        self.model.cost_units()
    }
}

/// Target from a closure, for stubs and analytic test problems.
pub struct FnTarget<F> {
    level: usize,
    cost: f64,
    f: F,
}

impl<F> FnTarget<F>
where
    F: Fn(&[f64]) -> Result<Evaluation> + Send + Sync,
{
    pub fn new(level: usize, f: F) -> Self {
        Self { level, cost: 1.0, f }
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost = cost;
        self
    }
}

impl<F> Target for FnTarget<F>
where
    F: Fn(&[f64]) -> Result<Evaluation> + Send + Sync,
{
    fn level(&self) -> usize {
        self.level
    }

    fn evaluate(&self, u: &[f64]) -> Result<Evaluation> {
        (self.f)(u)
    }

    fn cost_units(&self) -> f64 {
        self.cost
    }
}

/// Test hook: `ForceAccept` skips the Metropolis test but still consumes
/// the uniform draw, so streams stay aligned with a normal run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcceptRule {
    #[default]
    Metropolis,
    ForceAccept,
}

/// How the two-level kernel forms its proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TwoLevelMode {
    /// The coarse part of the proposal is the new coarse chain state and the
    /// complement is pCN-updated. The acceptance ratio uses the coarse
    /// likelihood cached with the current fine state, which makes the
    /// kernel an exact independence-type Metropolis–Hastings step.
    #[default]
    CoarseReplace,
    /// pCN with a conditional draw `ψ_ℓ | u_{ℓ+1}` and the acceptance ratio
    /// taken over the coarse states at steps `(j-1)t` and `jt`.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub field: FieldRealization,
    pub log_like: f64,
    pub qoi: f64,
    /// Coarse log-likelihood of the coarse part, for two-level chains.
    pub coarse_log_like: Option<f64>,
}

impl ChainState {
    pub fn new(field: FieldRealization, eval: Evaluation) -> Self {
        Self { field, log_like: eval.log_like, qoi: eval.qoi, coarse_log_like: None }
    }
}

pub fn validate_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!("pCN step size must lie in (0, 1], got {beta}")));
    }
    Ok(())
}

/// `√(1-β²) u + β ψ`, applied to the field and its noise alike.
pub fn pcn_propose(current: &FieldRealization, psi: &FieldRealization, beta: f64) -> Result<FieldRealization> {
    validate_beta(beta)?;
    FieldRealization::combine((1.0 - beta * beta).sqrt(), current, beta, psi)
}

fn sanitize(eval: Evaluation) -> Evaluation {
    let log_like = if eval.log_like.is_nan() { f64::NEG_INFINITY } else { eval.log_like };
    Evaluation { log_like, ..eval }
}

/// Accept when `ln U ≤ log α` with `U` uniform in (0, 1]; a NaN ratio rejects.
pub fn metropolis_accept(log_ratio: f64, uniform: f64, rule: AcceptRule) -> bool {
    match rule {
        AcceptRule::ForceAccept => true,
        AcceptRule::Metropolis => uniform.ln() <= log_ratio,
    }
}

/// One single-level pCN Metropolis–Hastings step with a fresh prior draw.
pub fn mh_step_single(
    sampler: &FieldSampler,
    target: &dyn Target,
    state: &ChainState,
    beta: f64,
    rule: AcceptRule,
    streams: &mut RngStreams,
) -> Result<(ChainState, bool)> {
    let level = state.field.level;
    check_target(target, level)?;
    let psi = sampler.sample_prior(level, streams)?;
    let prop = pcn_propose(&state.field, &psi, beta)?;
    let eval = sanitize(target.evaluate(&prop.u)?);
    let u = streams.uniform(level, Channel::Accept);
    if metropolis_accept(eval.log_like - state.log_like, u, rule) {
        Ok((ChainState::new(prop, eval), true))
    } else {
        Ok((state.clone(), false))
    }
}

fn check_target(target: &dyn Target, level: usize) -> Result<()> {
    if target.level() != level {
        return Err(Error::LevelMismatch(format!("target on level {}, state on level {level}", target.level())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub accepted: bool,
    pub qoi: f64,
    pub log_like: f64,
}

/// A single-level pCN chain with its own random streams.
pub struct SingleLevelChain<'a> {
    sampler: &'a FieldSampler,
    target: &'a dyn Target,
    beta: f64,
    rule: AcceptRule,
    state: ChainState,
    streams: RngStreams,
    steps: usize,
    accepted: usize,
    seconds: f64,
}

impl<'a> SingleLevelChain<'a> {
    /// Starts from a prior draw.
    pub fn new(sampler: &'a FieldSampler, target: &'a dyn Target, beta: f64, mut streams: RngStreams) -> Result<Self> {
        validate_beta(beta)?;
        let level = target.level();
        if level >= sampler.num_levels() {
            return Err(Error::LevelMismatch(format!("level {level} not in a {}-level sampler", sampler.num_levels())));
        }
        let field = sampler.sample_prior(level, &mut streams)?;
        let eval = sanitize(target.evaluate(&field.u)?);
        Ok(Self::from_state(sampler, target, beta, ChainState::new(field, eval), streams))
    }

    pub fn from_state(
        sampler: &'a FieldSampler,
        target: &'a dyn Target,
        beta: f64,
        state: ChainState,
        streams: RngStreams,
    ) -> Self {
        Self { sampler, target, beta, rule: AcceptRule::Metropolis, state, streams, steps: 0, accepted: 0, seconds: 0.0 }
    }

    pub fn with_rule(mut self, rule: AcceptRule) -> Self {
        self.rule = rule;
        self
    }

    /// Same kernel and current state, new streams and zeroed counters.
    pub fn fork(&self, streams: RngStreams) -> Self {
        Self::from_state(self.sampler, self.target, self.beta, self.state.clone(), streams).with_rule(self.rule)
    }

    pub fn level(&self) -> usize {
        self.state.field.level
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.steps as f64
    }

    /// Mean wall time per step (one sample plus one forward solve).
    pub fn seconds_per_step(&self) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        self.seconds / self.steps as f64
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let start = Instant::now();
        let (next, accepted) = mh_step_single(self.sampler, self.target, &self.state, self.beta, self.rule, &mut self.streams)?;
        self.seconds += start.elapsed().as_secs_f64();
        self.state = next;
        self.steps += 1;
        self.accepted += accepted as usize;
        Ok(StepRecord { accepted, qoi: self.state.qoi, log_like: self.state.log_like })
    }

    /// Runs `steps` steps and records them; `observe` sees every state.
    pub fn run(&mut self, steps: usize, mut observe: impl FnMut(&ChainState)) -> Result<ChainRecord> {
        let mut rec = ChainRecord::new(self.level(), self.beta);
        for _ in 0..steps {
            let s = self.step()?;
            rec.push(s.qoi, s.log_like, s.accepted);
            observe(&self.state);
        }
        Ok(rec)
    }

    /// Discards `steps` steps.
    pub fn burn_in(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    /// Largest absolute difference between cached and recomputed values.
    pub fn audit(&self) -> Result<f64> {
        audit_state(self.target, &self.state)
    }
}

fn audit_state(target: &dyn Target, state: &ChainState) -> Result<f64> {
    let e = sanitize(target.evaluate(&state.field.u)?);
    let dl = if e.log_like == state.log_like { 0.0 } else { (e.log_like - state.log_like).abs() };
    Ok(dl.max((e.qoi - state.qoi).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelStep {
    pub accepted: bool,
    pub fine_qoi: f64,
    pub fine_log_like: f64,
    pub coarse_qoi: f64,
    /// `Q_ℓ(u_ℓ^{(j)}) - Q_{ℓ+1}(u_{ℓ+1}^{(j t)})`
    pub y: f64,
}

/// The fine chain of one `Ŷ_ℓ` estimate, owning its private coarse chain.
pub struct TwoLevelChain<'a> {
    sampler: &'a FieldSampler,
    target: &'a dyn Target,
    coarse: SingleLevelChain<'a>,
    beta: f64,
    coarse_rate: usize,
    mode: TwoLevelMode,
    rule: AcceptRule,
    state: ChainState,
    streams: RngStreams,
    steps: usize,
    accepted: usize,
    seconds: f64,
}

impl<'a> TwoLevelChain<'a> {
    /// The coarse chain gets substream 1 of `streams` and is burned in for
    /// `coarse_burn_in` steps; the fine chain starts from a conditional
    /// draw on the resulting coarse state.
    pub fn new(
        sampler: &'a FieldSampler,
        fine: &'a dyn Target,
        coarse: &'a dyn Target,
        beta: f64,
        coarse_rate: usize,
        coarse_burn_in: usize,
        streams: RngStreams,
    ) -> Result<Self> {
        validate_beta(beta)?;
        if coarse_rate == 0 {
            return Err(Error::InvalidParameter("coarse subsample rate must be at least 1".into()));
        }
        if coarse.level() != fine.level() + 1 {
            return Err(Error::LevelMismatch(format!(
                "coarse target on level {}, fine target on level {}",
                coarse.level(),
                fine.level()
            )));
        }
        let mut coarse_chain = SingleLevelChain::new(sampler, coarse, beta, streams.substream(1))?;
        coarse_chain.burn_in(coarse_burn_in)?;
        Self::with_coarse_chain(sampler, fine, coarse_chain, coarse_rate, streams)
    }

    /// Takes over an existing (burned-in) coarse chain, e.g. a fork of a
    /// pilot chain. The fine chain uses the coarse chain's `β`.
    pub fn with_coarse_chain(
        sampler: &'a FieldSampler,
        fine: &'a dyn Target,
        coarse_chain: SingleLevelChain<'a>,
        coarse_rate: usize,
        mut streams: RngStreams,
    ) -> Result<Self> {
        if coarse_rate == 0 {
            return Err(Error::InvalidParameter("coarse subsample rate must be at least 1".into()));
        }
        if coarse_chain.level() != fine.level() + 1 {
            return Err(Error::LevelMismatch(format!(
                "coarse chain on level {}, fine target on level {}",
                coarse_chain.level(),
                fine.level()
            )));
        }
        let c = coarse_chain.state();
        let field = sampler.sample_conditional(&c.field, &mut streams)?;
        let eval = sanitize(fine.evaluate(&field.u)?);
        let state = ChainState { coarse_log_like: Some(c.log_like), ..ChainState::new(field, eval) };
        let beta = coarse_chain.beta();
        Ok(Self {
            sampler,
            target: fine,
            coarse: coarse_chain,
            beta,
            coarse_rate,
            mode: TwoLevelMode::default(),
            rule: AcceptRule::Metropolis,
            state,
            streams,
            steps: 0,
            accepted: 0,
            seconds: 0.0,
        })
    }

    pub fn with_mode(mut self, mode: TwoLevelMode) -> Self {
        self.mode = mode;
        self
    }

    /// Applies to the fine kernel only.
    pub fn with_rule(mut self, rule: AcceptRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn level(&self) -> usize {
        self.state.field.level
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn coarse_rate(&self) -> usize {
        self.coarse_rate
    }

    pub fn mode(&self) -> TwoLevelMode {
        self.mode
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn coarse_chain(&self) -> &SingleLevelChain<'a> {
        &self.coarse
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.steps as f64
    }

    /// Mean wall time of the fine part of a step.
    pub fn seconds_per_step(&self) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        self.seconds / self.steps as f64
    }

    pub fn step(&mut self) -> Result<TwoLevelStep> {
        let level = self.level();
        // Coarse state u_{ℓ+1}^{((j-1)t)}, then advance to u_{ℓ+1}^{(jt)}.
        let prev_coarse_ll = self.coarse.state().log_like;
        for _ in 0..self.coarse_rate {
            self.coarse.step()?;
        }
        let start = Instant::now();
        let c = self.coarse.state();
        let prop = match self.mode {
            TwoLevelMode::CoarseReplace => {
                let ops = self.sampler.discretization().ops(level);
                let (xi, key) = self.streams.sample_standard_normal(level, ops.num_elements());
                let a = (1.0 - self.beta * self.beta).sqrt();
                let mix: Vec<f64> = self.state.field.noise.b.iter().zip(ops.w_sqrt()).zip(&xi).map(|((b, s), x)| a * b + self.beta * s * x).collect();
                let b = two_level_combine(self.sampler.discretization().transfer(level), &c.field.noise.b, &mix)?;
                let mut noise = NoiseVector::combination(level, b);
                noise.seed_trace.push(TraceEntry { level, xi: XiSource::Stream(key) });
                self.sampler.solve(noise)?
            }
            TwoLevelMode::Literal => {
                let psi = self.sampler.sample_conditional(&c.field, &mut self.streams)?;
                pcn_propose(&self.state.field, &psi, self.beta)?
            }
        };
        let eval = sanitize(self.target.evaluate(&prop.u)?);
        let current_coarse_ll = match self.mode {
            TwoLevelMode::CoarseReplace => self.state.coarse_log_like.unwrap_or(prev_coarse_ll),
            TwoLevelMode::Literal => prev_coarse_ll,
        };
        let log_ratio = eval.log_like - self.state.log_like + current_coarse_ll - c.log_like;
        let u = self.streams.uniform(level, Channel::Accept);
        let accepted = metropolis_accept(log_ratio, u, self.rule);
        if accepted {
            self.state = ChainState { coarse_log_like: Some(c.log_like), ..ChainState::new(prop, eval) };
        }
        self.seconds += start.elapsed().as_secs_f64();
        self.steps += 1;
        self.accepted += accepted as usize;
        let coarse_qoi = c.qoi;
        Ok(TwoLevelStep {
            accepted,
            fine_qoi: self.state.qoi,
            fine_log_like: self.state.log_like,
            coarse_qoi,
            y: self.state.qoi - coarse_qoi,
        })
    }

    pub fn run(&mut self, steps: usize, mut observe: impl FnMut(&ChainState, &ChainState)) -> Result<ChainRecord> {
        let mut rec = ChainRecord::new(self.level(), self.beta);
        rec.coarse_q = Some(Vec::with_capacity(steps));
        rec.y = Some(Vec::with_capacity(steps));
        let coarse_before = self.coarse.accepted;
        for _ in 0..steps {
            let s = self.step()?;
            rec.push(s.fine_qoi, s.fine_log_like, s.accepted);
            rec.coarse_q.as_mut().expect("set above").push(s.coarse_qoi);
            rec.y.as_mut().expect("set above").push(s.y);
            observe(&self.state, self.coarse.state());
        }
        rec.coarse_accepted = Some(self.coarse.accepted - coarse_before);
        rec.coarse_steps = Some(steps * self.coarse_rate);
        Ok(rec)
    }

    pub fn burn_in(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn audit(&self) -> Result<f64> {
        Ok(audit_state(self.target, &self.state)?.max(self.coarse.audit()?))
    }
}

/// Per-step history of one chain. For two-level chains `coarse_q` and `y`
/// hold `Q_{ℓ+1}` at the matching coarse step and the difference `Y_ℓ`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainRecord {
    pub level: usize,
    pub beta: f64,
    pub q: Vec<f64>,
    pub log_like: Vec<f64>,
    pub accepted: Vec<bool>,
    pub coarse_q: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub coarse_accepted: Option<usize>,
    pub coarse_steps: Option<usize>,
    pub burn_in: usize,
    pub subsample: usize,
}

impl ChainRecord {
    pub fn new(level: usize, beta: f64) -> Self {
        Self { level, beta, subsample: 1, ..Default::default() }
    }

    pub fn push(&mut self, q: f64, log_like: f64, accepted: bool) {
        self.q.push(q);
        self.log_like.push(log_like);
        self.accepted.push(accepted);
    }

    /// Appends a later segment of the same chain.
    pub fn append(&mut self, later: ChainRecord) -> Result<()> {
        if later.level != self.level || self.coarse_q.is_some() != later.coarse_q.is_some() {
            return Err(Error::LevelMismatch(format!(
                "appending a level-{} record to a level-{} record of another kind",
                later.level, self.level
            )));
        }
        self.q.extend(later.q);
        self.log_like.extend(later.log_like);
        self.accepted.extend(later.accepted);
        let cat = |a: &mut Option<Vec<f64>>, b: Option<Vec<f64>>| {
            if let (Some(a), Some(b)) = (a.as_mut(), b) {
                a.extend(b);
            }
        };
        cat(&mut self.coarse_q, later.coarse_q);
        cat(&mut self.y, later.y);
        let add = |a: Option<usize>, b: Option<usize>| a.zip(b).map(|(a, b)| a + b);
        self.coarse_accepted = add(self.coarse_accepted, later.coarse_accepted);
        self.coarse_steps = add(self.coarse_steps, later.coarse_steps);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// The series that enters the estimator: `Y_ℓ` if present, else `Q_ℓ`.
    pub fn estimator_series(&self) -> &[f64] {
        self.y.as_deref().unwrap_or(&self.q)
    }
}
