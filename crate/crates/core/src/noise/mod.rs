//! Finite element white noise on one level and across a hierarchy.
//!
//! A noise vector `b` on level `ℓ` has covariance `W_ℓ`. The two-level step
//! `b_ℓ = Π^T b_{ℓ+1} + (I - Π^T P^T) W_ℓ^{1/2} ξ_ℓ` keeps `P^T b_ℓ = b_{ℓ+1}`
//! and, with `ξ_ℓ` independent of `b_{ℓ+1}`, again has covariance `W_ℓ`.

mod streams;

use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

pub use streams::{Channel, DrawKey, RngStreams};

use crate::error::{Error, Result};
use crate::spaces::{LevelOperators, TransferPair};

/// Standard normal input of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum XiSource {
    Stream(DrawKey),
    /// Supplied by the caller (test hook); not replayable from a seed.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub level: usize,
    pub xi: XiSource,
}

impl TraceEntry {
    fn xi(&self, n: usize) -> Result<Vec<f64>> {
        match &self.xi {
            XiSource::Stream(key) => Ok(key.normals(n)),
            XiSource::Explicit(v) if v.len() == n => Ok(v.clone()),
            XiSource::Explicit(v) => Err(Error::DimensionMismatch { expected: n, got: v.len() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    SingleLevel,
    /// Built top-down from the coarsest listed level.
    Hierarchical { levels: Vec<usize> },
    /// One two-level step on top of an existing coarse vector.
    Conditional { coarse_id: u64 },
    /// Linear combination of other noise vectors (e.g. a pCN update).
    Combination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseVector {
    pub level: usize,
    pub b: Vec<f64>,
    pub provenance: Provenance,
    /// Inputs from the coarsest contributing level down to `level`.
    pub seed_trace: Vec<TraceEntry>,
    pub id: u64,
}

impl NoiseVector {
    fn new(level: usize, b: Vec<f64>, provenance: Provenance, seed_trace: Vec<TraceEntry>) -> Self {
        let mut h = DefaultHasher::new();
        level.hash(&mut h);
        for e in &seed_trace {
            e.level.hash(&mut h);
            match &e.xi {
                XiSource::Stream(k) => k.hash(&mut h),
                XiSource::Explicit(v) => v.iter().for_each(|x| x.to_bits().hash(&mut h)),
            }
        }
        if seed_trace.is_empty() {
            b.iter().for_each(|x| x.to_bits().hash(&mut h));
        }
        let id = h.finish();
        Self { level, b, provenance, seed_trace, id }
    }

    /// Wraps an arbitrary vector, e.g. a pCN combination of noise vectors.
    pub fn combination(level: usize, b: Vec<f64>) -> Self {
        Self::new(level, b, Provenance::Combination, Vec::new())
    }

    pub fn zeros(level: usize, n: usize) -> Self {
        Self::combination(level, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// Whether the trace replays `b` from a single-level draw downwards.
    pub fn is_decomposable(&self) -> bool {
        !self.seed_trace.is_empty()
            && self.seed_trace.last().map(|e| e.level) == Some(self.level)
            && self.seed_trace.windows(2).all(|w| w[0].level == w[1].level + 1)
    }
}

fn wsqrt_times(ops: &LevelOperators, xi: &[f64]) -> Vec<f64> {
    ops.w_sqrt().iter().zip(xi).map(|(s, x)| s * x).collect()
}

/// `Π^T b_coarse + (I - Π^T P^T) w`
pub fn two_level_combine(transfer: &TransferPair, b_coarse: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let ptw = transfer.p_transpose(w)?;
    let diff: Vec<f64> = b_coarse.iter().zip(&ptw).map(|(a, b)| a - b).collect();
    let mut out = transfer.pi_transpose(&diff)?;
    for (o, wi) in out.iter_mut().zip(w) {
        *o += wi;
    }
    Ok(out)
}

/// `(I - Π^T P^T) w`
pub fn complement(transfer: &TransferPair, w: &[f64]) -> Result<Vec<f64>> {
    let zero = vec![0.0; transfer.num_coarse()];
    two_level_combine(transfer, &zero, w)
}

pub fn single_level_noise(ops: &LevelOperators, streams: &mut RngStreams) -> NoiseVector {
    let (xi, key) = streams.sample_standard_normal(ops.level(), ops.num_elements());
    let b = wsqrt_times(ops, &xi);
    NoiseVector::new(ops.level(), b, Provenance::SingleLevel, vec![TraceEntry { level: ops.level(), xi: XiSource::Stream(key) }])
}

fn check_pair(ops_k: &LevelOperators, transfer: &TransferPair, b_coarse: &NoiseVector) -> Result<()> {
    if transfer.fine_level() != ops_k.level() || b_coarse.level != ops_k.level() + 1 {
        return Err(Error::LevelMismatch(format!(
            "fine operators at {}, transfer at {}, coarse noise at {}",
            ops_k.level(),
            transfer.fine_level(),
            b_coarse.level
        )));
    }
    if b_coarse.len() != transfer.num_coarse() {
        return Err(Error::DimensionMismatch { expected: transfer.num_coarse(), got: b_coarse.len() });
    }
    Ok(())
}

fn conditional_from_source(
    ops_k: &LevelOperators,
    transfer: &TransferPair,
    b_coarse: &NoiseVector,
    source: XiSource,
) -> Result<NoiseVector> {
    check_pair(ops_k, transfer, b_coarse)?;
    let entry = TraceEntry { level: ops_k.level(), xi: source };
    let xi = entry.xi(ops_k.num_elements())?;
    let w = wsqrt_times(ops_k, &xi);
    let b = two_level_combine(transfer, &b_coarse.b, &w)?;
    let mut trace = b_coarse.seed_trace.clone();
    trace.push(entry);
    let provenance = match &b_coarse.provenance {
        Provenance::SingleLevel => Provenance::Hierarchical { levels: vec![b_coarse.level, ops_k.level()] },
        Provenance::Hierarchical { levels } => {
            let mut levels = levels.clone();
            levels.push(ops_k.level());
            Provenance::Hierarchical { levels }
        }
        _ => Provenance::Conditional { coarse_id: b_coarse.id },
    };
    Ok(NoiseVector::new(ops_k.level(), b, provenance, trace))
}

/// One two-level step from `b_coarse` with a fresh `ξ_k`.
pub fn conditional_noise(
    ops_k: &LevelOperators,
    transfer: &TransferPair,
    b_coarse: &NoiseVector,
    streams: &mut RngStreams,
) -> Result<NoiseVector> {
    check_pair(ops_k, transfer, b_coarse)?;
    let key = streams.next_key(ops_k.level(), Channel::Noise);
    conditional_from_source(ops_k, transfer, b_coarse, XiSource::Stream(key))
}

/// [`conditional_noise`] with a caller-supplied `ξ_k`.
pub fn conditional_noise_with_xi(
    ops_k: &LevelOperators,
    transfer: &TransferPair,
    b_coarse: &NoiseVector,
    xi: &[f64],
) -> Result<NoiseVector> {
    conditional_from_source(ops_k, transfer, b_coarse, XiSource::Explicit(xi.to_vec()))
}

/// Noise on levels `L, L-1, …, k`, coarsest first, with fresh independent
/// draws per level.
pub fn hierarchical_noise(
    ops: &[LevelOperators],
    transfers: &[TransferPair],
    streams: &mut RngStreams,
    k: usize,
) -> Result<Vec<NoiseVector>> {
    if ops.is_empty() || k >= ops.len() {
        return Err(Error::OutOfRange(format!("target level {k} with {} levels", ops.len())));
    }
    if transfers.len() + 1 != ops.len() {
        return Err(Error::LevelMismatch(format!("{} transfers for {} levels", transfers.len(), ops.len())));
    }
    let top = ops.len() - 1;
    let mut out = vec![single_level_noise(&ops[top], streams)];
    for l in (k..top).rev() {
        let next = conditional_noise(&ops[l], &transfers[l], out.last().expect("nonempty"), streams)?;
        out.push(next);
    }
    Ok(out)
}

/// One additive part of a hierarchical noise vector, already carried to
/// the level of that vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseComponent {
    /// Level whose `ξ` produced this part.
    pub source_level: usize,
    pub b: Vec<f64>,
}

/// Splits `b_fine` into one component per contributing level. The
/// components sum to `b_fine`.
pub fn decompose_noise(b_fine: &NoiseVector, ops: &[LevelOperators], transfers: &[TransferPair]) -> Result<Vec<NoiseComponent>> {
    if !b_fine.is_decomposable() {
        return Err(Error::MissingProvenance);
    }
    let trace = &b_fine.seed_trace;
    let top = trace[0].level;
    if top >= ops.len() || top > transfers.len() {
        return Err(Error::OutOfRange(format!("trace starts at level {top}")));
    }
    let mut comps = Vec::with_capacity(trace.len());
    for (i, entry) in trace.iter().enumerate() {
        let l = entry.level;
        let w = wsqrt_times(&ops[l], &entry.xi(ops[l].num_elements())?);
        let mut v = if i == 0 { w } else { complement(&transfers[l], &w)? };
        for m in (b_fine.level..l).rev() {
            v = transfers[m].pi_transpose(&v)?;
        }
        comps.push(NoiseComponent { source_level: l, b: v });
    }
    Ok(comps)
}
