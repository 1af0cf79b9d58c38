//! Sample allocation for the multilevel estimator and the estimator itself.
//!
//! Levels are indexed from the finest (`0`) to the coarsest (`L`). With
//! `C_ℓ^eff = t_ℓ (C_ℓ + t_{ℓ+1} C_{ℓ+1})` for `ℓ < L` and `C_L^eff = t_L C_L`,
//! `N_ℓ^eff = (2/ε²) (Σ_k √(V_k C_k^eff)) √(V_ℓ / C_ℓ^eff)`.

use serde::{Deserialize, Serialize};

use super::diagnostics::{sample_mean, sample_variance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPlan {
    pub level: usize,
    pub variance: f64,
    pub cost: f64,
    pub iact: usize,
    /// Steps of the coarse chain per fine step (`t_{ℓ+1}`); none on level L.
    pub coarse_rate: Option<usize>,
    pub cost_eff: f64,
    pub n_eff: f64,
    /// `⌈N_ℓ^eff⌉`
    pub samples: usize,
    /// `t_ℓ ⌈N_ℓ^eff⌉`
    pub n_total: usize,
    /// `2 t_ℓ`
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcmcPlan {
    pub epsilon: f64,
    pub levels: Vec<LevelPlan>,
    /// `Σ_ℓ N_ℓ^eff C_ℓ^eff`
    pub total_cost: f64,
}

/// Allocation with `t_{ℓ+1}` taken from the IACT of the next level.
pub fn plan_allocation(variance: &[f64], cost: &[f64], iact: &[usize], epsilon: f64) -> Result<MlmcmcPlan> {
    let rates: Vec<usize> = iact.iter().skip(1).copied().collect();
    plan_allocation_with_rates(variance, cost, iact, &rates, epsilon)
}

/// Allocation with explicit coarse-chain rates: `coarse_rates[ℓ]` replaces
/// `t_{ℓ+1}` in `C_ℓ^eff`, e.g. the IACT of `Q_{ℓ+1}` rather than `Y_{ℓ+1}`.
pub fn plan_allocation_with_rates(
    variance: &[f64],
    cost: &[f64],
    iact: &[usize],
    coarse_rates: &[usize],
    epsilon: f64,
) -> Result<MlmcmcPlan> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("target accuracy must be positive, got {epsilon}")));
    }
    let n = variance.len();
    if n == 0 {
        return Err(Error::InvalidParameter("no levels to plan".into()));
    }
    if cost.len() != n || iact.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cost.len().min(iact.len()) });
    }
    if coarse_rates.len() != n - 1 {
        return Err(Error::DimensionMismatch { expected: n - 1, got: coarse_rates.len() });
    }
    if variance.iter().chain(cost).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("variances and costs must be positive and finite".into()));
    }
    if iact.iter().chain(coarse_rates).any(|&t| t == 0) {
        return Err(Error::InvalidParameter("subsample rates must be at least 1".into()));
    }
    let cost_eff: Vec<f64> = (0..n)
        .map(|l| {
            let t = iact[l] as f64;
            if l + 1 < n {
                t * (cost[l] + coarse_rates[l] as f64 * cost[l + 1])
            } else {
                t * cost[l]
            }
        })
        .collect();
    let sum: f64 = (0..n).map(|k| (variance[k] * cost_eff[k]).sqrt()).sum();
    let scale = 2.0 / (epsilon * epsilon);
    let levels: Vec<LevelPlan> = (0..n)
        .map(|l| {
            let n_eff = scale * sum * (variance[l] / cost_eff[l]).sqrt();
            let samples = n_eff.ceil() as usize;
            LevelPlan {
                level: l,
                variance: variance[l],
                cost: cost[l],
                iact: iact[l],
                coarse_rate: coarse_rates.get(l).copied(),
                cost_eff: cost_eff[l],
                n_eff,
                samples,
                n_total: iact[l] * samples,
                burn_in: 2 * iact[l],
            }
        })
        .collect();
    let total_cost = levels.iter().map(|p| p.n_eff * p.cost_eff).sum();
    Ok(MlmcmcPlan { epsilon, levels, total_cost })
}

/// One level's input to [`ml_estimate`]: `Y_ℓ` for `ℓ < L`, `Q_L` for the last.
#[derive(Debug, Clone, Copy)]
pub struct LevelSeries<'a> {
    pub series: &'a [f64],
    pub subsample: usize,
    pub burn_in: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlEstimate {
    pub value: f64,
    pub level_means: Vec<f64>,
    /// Sample variances of the subsampled values (zero with one sample).
    pub level_variances: Vec<f64>,
    pub samples: Vec<usize>,
    /// `√(Σ V_ℓ / N_ℓ)`, treating subsampled values as independent.
    pub std_error: f64,
}

/// Largest `N` with `n + N t ≤ len`.
pub fn max_samples(len: usize, subsample: usize, burn_in: usize) -> usize {
    if subsample == 0 {
        return 0;
    }
    len.saturating_sub(burn_in) / subsample
}

/// Sum of subsampled means. Sample `i = 1..N` of a level is the value after
/// step `n + i t`, i.e. `series[n + i t - 1]` with steps counted from one.
pub fn ml_estimate(levels: &[LevelSeries<'_>]) -> Result<MlEstimate> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter("no levels to combine".into()));
    }
    let mut level_means = Vec::with_capacity(levels.len());
    let mut level_variances = Vec::with_capacity(levels.len());
    let mut var_sum = 0.0;
    for (l, s) in levels.iter().enumerate() {
        if s.subsample == 0 || s.samples == 0 {
            return Err(Error::InvalidParameter(format!("level {l}: subsample rate and sample count must be positive")));
        }
        let need = s.burn_in + s.samples * s.subsample;
        if s.series.len() < need {
            return Err(Error::Series(format!(
                "level {l}: {} samples at rate {} after burn-in {} need {need} steps, chain has {}",
                s.samples,
                s.subsample,
                s.burn_in,
                s.series.len()
            )));
        }
        let picked: Vec<f64> = (1..=s.samples).map(|i| s.series[s.burn_in + i * s.subsample - 1]).collect();
        let v = if picked.len() > 1 { sample_variance(&picked)? } else { 0.0 };
        level_means.push(sample_mean(&picked));
        level_variances.push(v);
        var_sum += v / s.samples as f64;
    }
    Ok(MlEstimate {
        value: level_means.iter().sum(),
        level_means,
        level_variances,
        samples: levels.iter().map(|s| s.samples).collect(),
        std_error: var_sum.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_reduces_to_two_v_over_eps_squared() {
        let p = plan_allocation(&[1.0], &[7.0], &[1], 0.5).unwrap();
        assert_eq!(p.levels[0].n_eff, 8.0);
        assert_eq!(p.levels[0].cost_eff, 7.0);
        assert_eq!(p.levels[0].burn_in, 2);
    }

    #[test]
    fn effective_cost_arithmetic() {
        let p = plan_allocation(&[1.0, 1.0], &[10.0, 1.0], &[4, 5], 1.0).unwrap();
        assert_eq!(p.levels[0].cost_eff, 60.0);
        assert_eq!(p.levels[1].cost_eff, 5.0);
        assert_eq!(p.levels[1].coarse_rate, None);
    }

    #[test]
    fn halving_epsilon_quadruples_samples() {
        let a = plan_allocation(&[0.3, 0.9, 2.0], &[9.0, 2.0, 0.5], &[3, 4, 11], 0.1).unwrap();
        let b = plan_allocation(&[0.3, 0.9, 2.0], &[9.0, 2.0, 0.5], &[3, 4, 11], 0.05).unwrap();
        for (x, y) in a.levels.iter().zip(&b.levels) {
            assert!((y.n_eff / x.n_eff - 4.0).abs() < 1e-12);
            assert_eq!(y.n_total, y.iact * y.samples);
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(plan_allocation(&[1.0], &[1.0], &[1], 0.0).is_err());
        assert!(plan_allocation(&[1.0], &[-1.0], &[1], 0.1).is_err());
        assert!(plan_allocation(&[1.0], &[1.0], &[0], 0.1).is_err());
        assert!(plan_allocation(&[1.0, 2.0], &[1.0], &[1, 1], 0.1).is_err());
    }

    #[test]
    fn estimator_arithmetic() {
        let y = [1.0, 1.0];
        let q = [2.0, 2.0];
        let e = ml_estimate(&[
            LevelSeries { series: &y, subsample: 1, burn_in: 0, samples: 2 },
            LevelSeries { series: &q, subsample: 1, burn_in: 0, samples: 2 },
        ])
        .unwrap();
        assert_eq!(e.value, 3.0);
    }

    #[test]
    fn estimator_picks_subsampled_indices() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        // burn-in 4, rate 3: steps 7, 10, 13, i.e. indices 6, 9, 12.
        let e = ml_estimate(&[LevelSeries { series: &x, subsample: 3, burn_in: 4, samples: 3 }]).unwrap();
        assert_eq!(e.value, 9.0);
        assert_eq!(max_samples(20, 3, 4), 5);
        assert!(ml_estimate(&[LevelSeries { series: &x, subsample: 3, burn_in: 4, samples: 6 }]).is_err());
    }
}
