//! Autocorrelation and integrated autocorrelation time of scalar series.
//!
//! `ρ̂(τ) = (1/(N-τ)) Σ_i (x_i - μ̂)(x_{i+τ} - μ̂) / σ̂²` with `σ̂²` normalised
//! by `1/N`, so that `ρ̂(0) = 1` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window constant of the adaptive IACT window.
pub const SOKAL_C: f64 = 5.0;

pub fn sample_mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (`1/(N-1)`).
pub fn sample_variance(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::Series(format!("variance needs at least 2 values, got {}", x.len())));
    }
    let m = sample_mean(x);
    Ok(x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64)
}

struct Centered {
    d: Vec<f64>,
    var: f64,
}

fn centered(x: &[f64]) -> Result<Centered> {
    if x.is_empty() {
        return Err(Error::Series("empty series".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Series("series contains non-finite values".into()));
    }
    let m = sample_mean(x);
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    let var = d.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if !(var > 0.0) || x.iter().all(|&v| v == x[0]) {
        return Err(Error::Series("series has zero variance".into()));
    }
    Ok(Centered { d, var })
}

impl Centered {
    fn rho(&self, lag: usize) -> f64 {
        let n = self.d.len();
        let s: f64 = self.d[..n - lag].iter().zip(&self.d[lag..]).map(|(a, b)| a * b).sum();
        s / (n - lag) as f64 / self.var
    }
}

pub fn autocorrelation(x: &[f64], lag: usize) -> Result<f64> {
    if lag >= x.len() {
        return Err(Error::Series(format!("lag {lag} not below series length {}", x.len())));
    }
    Ok(centered(x)?.rho(lag))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IactEstimate {
    pub tau: f64,
    pub window: usize,
    pub len: usize,
}

impl IactEstimate {
    /// `max(1, ⌈τ̂⌉)`
    pub fn rate(&self) -> usize {
        subsample_rate(self.tau)
    }
}

pub fn subsample_rate(tau: f64) -> usize {
    (tau.ceil() as usize).max(1)
}

/// [`iact_with`] at `c = 5`.
pub fn iact(x: &[f64]) -> Result<IactEstimate> {
    iact_with(x, SOKAL_C)
}

/// `τ̂(M) = 1 + 2 Σ_{τ=1}^{M} ρ̂(τ)` at the smallest `M ≥ c τ̂(M)`.
/// Windows are searched up to `N/2`; a series without a valid window is
/// too short.
pub fn iact_with(x: &[f64], c: f64) -> Result<IactEstimate> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("window constant must be positive, got {c}")));
    }
    if x.len() < 4 {
        return Err(Error::Series(format!("series of length {} is too short for an IACT estimate", x.len())));
    }
    let s = centered(x)?;
    let mut tau = 1.0;
    for m in 1..=x.len() / 2 {
        tau += 2.0 * s.rho(m);
        if m as f64 >= c * tau {
            return Ok(IactEstimate { tau, window: m, len: x.len() });
        }
    }
    Err(Error::Series(format!(
        "no window M <= N/2 with M >= {c} tau for a series of length {} (tau so far {tau:.3})",
        x.len()
    )))
}
