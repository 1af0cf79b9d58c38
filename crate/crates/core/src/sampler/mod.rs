//! Gaussian random fields from the mixed SPDE discretisation.
//!
//! A field `u` on level `ℓ` solves `A u = b` with
//! `A = (κ²/g) W + (1/g) B M^{-1} B^T` and white noise `b`, so that
//! `u ~ N(0, A^{-1} W A^{-1})`.

mod io;
mod oracle;
mod solver;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

pub use io::{read_field, write_field, FieldDump};
pub use oracle::{DenseOracle, ORACLE_DOF_LIMIT};
pub use solver::{flux_operator, SolveReport, SolverKind, SpdeSolver, DIRECT_BAND_LIMIT};

use crate::error::{Error, Result};
use crate::noise::{conditional_noise, conditional_noise_with_xi, decompose_noise, hierarchical_noise, single_level_noise};
use crate::noise::{NoiseVector, RngStreams};
use crate::spaces::{Discretization, LevelOperators, TransferPair};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdeConfig {
    pub kappa: f64,
    pub g: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub solver: SolverKind,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    20_000
}

impl SpdeConfig {
    pub fn new(kappa: f64, g: f64) -> Self {
        Self { kappa, g, tol: default_tol(), max_iter: default_max_iter(), solver: SolverKind::default() }
    }

    /// Parameters from correlation length and marginal variance.
    pub fn from_matern(sigma2: f64, lambda: f64, dim: usize) -> Result<Self> {
        let (kappa, g) = derive_g(sigma2, lambda, dim)?;
        Ok(Self::new(kappa, g))
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa", self.kappa), ("g", self.g), ("tol", self.tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn marginal_variance(&self, dim: usize) -> Result<f64> {
        marginal_variance(self.kappa, self.g, dim)
    }
}

fn smoothness(dim: usize) -> Result<f64> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Unsupported(format!("Matérn link defined for dim 1 to 3, got {dim}")));
    }
    Ok(2.0 - dim as f64 / 2.0)
}

// σ² / g² as a function of κ
fn variance_per_g2(kappa: f64, dim: usize) -> Result<f64> {
    let nu = smoothness(dim)?;
    let d = dim as f64;
    Ok(gamma(nu) / (gamma(nu + d / 2.0) * (4.0 * std::f64::consts::PI).powf(d / 2.0) * kappa.powf(2.0 * nu)))
}

/// `(κ, g)` for correlation length `lambda` and marginal variance `sigma2`.
pub fn derive_g(sigma2: f64, lambda: f64, dim: usize) -> Result<(f64, f64)> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let kappa = 1.0 / lambda;
    let g = (sigma2 / variance_per_g2(kappa, dim)?).sqrt();
    Ok((kappa, g))
}

pub fn marginal_variance(kappa: f64, g: f64, dim: usize) -> Result<f64> {
    Ok(g * g * variance_per_g2(kappa, dim)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRealization {
    pub level: usize,
    pub u: Vec<f64>,
    pub rho: Vec<f64>,
    pub noise: NoiseVector,
    pub report: SolveReport,
}

impl FieldRealization {
    /// `A^{-1}` is linear, so `α r₁ + β r₂` is again a consistent realization.
    pub fn combine(alpha: f64, a: &FieldRealization, beta: f64, b: &FieldRealization) -> Result<FieldRealization> {
        if a.level != b.level || a.u.len() != b.u.len() || a.rho.len() != b.rho.len() {
            return Err(Error::LevelMismatch(format!("combining realizations on levels {} and {}", a.level, b.level)));
        }
        let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| alpha * p + beta * q).collect::<Vec<f64>>();
        Ok(FieldRealization {
            level: a.level,
            u: mix(&a.u, &b.u),
            rho: mix(&a.rho, &b.rho),
            noise: NoiseVector::combination(a.level, mix(&a.noise.b, &b.noise.b)),
            report: SolveReport {
                method: a.report.method,
                iterations: 0,
                relative_residual: a.report.relative_residual.max(b.report.relative_residual),
            },
        })
    }
}

fn check_level(solver: &SpdeSolver, level: usize) -> Result<()> {
    if solver.level() != level {
        return Err(Error::LevelMismatch(format!("solver on level {}, input on level {level}", solver.level())));
    }
    Ok(())
}

pub fn solve_spde(solver: &SpdeSolver, noise: NoiseVector) -> Result<FieldRealization> {
    check_level(solver, noise.level)?;
    let (u, rho, report) = solver.solve(&noise.b)?;
    Ok(FieldRealization { level: noise.level, u, rho, noise, report })
}

pub fn sample_prior(solver: &SpdeSolver, ops: &LevelOperators, streams: &mut RngStreams) -> Result<FieldRealization> {
    check_level(solver, ops.level())?;
    solve_spde(solver, single_level_noise(ops, streams))
}

/// A level-`k` field whose noise extends the noise of `coarse`.
pub fn sample_conditional(
    solver: &SpdeSolver,
    ops_k: &LevelOperators,
    transfer: &TransferPair,
    coarse: &FieldRealization,
    streams: &mut RngStreams,
) -> Result<FieldRealization> {
    check_level(solver, ops_k.level())?;
    solve_spde(solver, conditional_noise(ops_k, transfer, &coarse.noise, streams)?)
}

/// [`sample_conditional`] with a caller-supplied fine input `ξ_k`.
pub fn sample_conditional_with_xi(
    solver: &SpdeSolver,
    ops_k: &LevelOperators,
    transfer: &TransferPair,
    coarse: &FieldRealization,
    xi: &[f64],
) -> Result<FieldRealization> {
    check_level(solver, ops_k.level())?;
    solve_spde(solver, conditional_noise_with_xi(ops_k, transfer, &coarse.noise, xi)?)
}

/// Part of a field driven by the noise of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldComponent {
    pub source_level: usize,
    pub u: Vec<f64>,
}

/// One solve per noise component; the components sum to `fine.u`.
pub fn decompose_realization(
    fine: &FieldRealization,
    solver: &SpdeSolver,
    ops: &[LevelOperators],
    transfers: &[TransferPair],
) -> Result<Vec<FieldComponent>> {
    check_level(solver, fine.level)?;
    decompose_noise(&fine.noise, ops, transfers)?
        .into_iter()
        .map(|c| Ok(FieldComponent { source_level: c.source_level, u: solver.solve(&c.b)?.0 }))
        .collect()
}

/// `-b^T W^{-1} b`, the unnormalised log density in the convention without
/// the factor one half.
pub fn log_prior_density(ops: &LevelOperators, real: &FieldRealization) -> f64 {
    -real.noise.b.iter().zip(ops.w()).map(|(b, w)| b * b / w).sum::<f64>()
}

/// `-u^T A W^{-1} A u`, evaluated with the operator action.
pub fn log_prior_density_from_field(solver: &SpdeSolver, u: &[f64]) -> f64 {
    let au = solver.apply_a(u);
    -au.iter().zip(solver.w()).map(|(a, w)| a * a / w).sum::<f64>()
}

/// Solvers on every level of a discretisation, with sampling shortcuts.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    disc: Discretization,
    cfg: SpdeConfig,
    solvers: Vec<SpdeSolver>,
}

impl FieldSampler {
    pub fn new(disc: Discretization, cfg: SpdeConfig) -> Result<Self> {
        let solvers = disc.all_ops().iter().map(|o| SpdeSolver::new(o, &cfg)).collect::<Result<Vec<_>>>()?;
        Ok(Self { disc, cfg, solvers })
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn config(&self) -> &SpdeConfig {
        &self.cfg
    }

    pub fn num_levels(&self) -> usize {
        self.solvers.len()
    }

    pub fn solver(&self, level: usize) -> &SpdeSolver {
        &self.solvers[level]
    }

    pub fn solve(&self, noise: NoiseVector) -> Result<FieldRealization> {
        solve_spde(&self.solvers[noise.level], noise)
    }

    pub fn sample_prior(&self, level: usize, streams: &mut RngStreams) -> Result<FieldRealization> {
        sample_prior(&self.solvers[level], self.disc.ops(level), streams)
    }

    pub fn sample_conditional(&self, coarse: &FieldRealization, streams: &mut RngStreams) -> Result<FieldRealization> {
        let k = coarse
            .level
            .checked_sub(1)
            .ok_or_else(|| Error::LevelMismatch("level 0 has no finer level".into()))?;
        sample_conditional(&self.solvers[k], self.disc.ops(k), self.disc.transfer(k), coarse, streams)
    }

    /// Fields on levels `L, …, k` from one hierarchical noise draw, coarsest first.
    pub fn sample_hierarchical(&self, k: usize, streams: &mut RngStreams) -> Result<Vec<FieldRealization>> {
        hierarchical_noise(self.disc.all_ops(), self.disc.transfers(), streams, k)?
            .into_iter()
            .map(|b| self.solve(b))
            .collect()
    }

    /// Field on level `k` only, with hierarchical noise (one solve).
    pub fn sample_hierarchical_at(&self, k: usize, streams: &mut RngStreams) -> Result<FieldRealization> {
        let mut all = hierarchical_noise(self.disc.all_ops(), self.disc.transfers(), streams, k)?;
        self.solve(all.pop().expect("at least one level"))
    }

    pub fn decompose(&self, fine: &FieldRealization) -> Result<Vec<FieldComponent>> {
        decompose_realization(fine, &self.solvers[fine.level], self.disc.all_ops(), self.disc.transfers())
    }

    pub fn log_prior_density(&self, real: &FieldRealization) -> f64 {
        log_prior_density(self.disc.ops(real.level), real)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_hierarchy, MeshSpec};
    use crate::spaces::SpaceOptions;

    fn sampler(cells: &[usize], levels: usize, pad: usize, cfg: SpdeConfig) -> FieldSampler {
        let h = build_hierarchy(&MeshSpec::unit(2, cells, levels).with_padding(pad)).unwrap();
        FieldSampler::new(Discretization::new(h, SpaceOptions::default()).unwrap(), cfg).unwrap()
    }

    #[test]
    fn matern_link_values() {
        let (kappa, g) = derive_g(0.5, 0.3, 3).unwrap();
        assert!((kappa - 10.0 / 3.0).abs() < 1e-14);
        assert!((g - (0.5 * 8.0 * std::f64::consts::PI * kappa).sqrt()).abs() < 1e-12);
        assert!((g - 6.47209).abs() < 1e-5);
        let (kappa, g) = derive_g(1.0, 1.0, 2).unwrap();
        assert_eq!(kappa, 1.0);
        assert!((g - (4.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        for (s2, l, d) in [(0.5, 0.3, 3), (1.0, 0.2, 2), (2.5, 1.7, 2)] {
            let (k, g) = derive_g(s2, l, d).unwrap();
            assert!((marginal_variance(k, g, d).unwrap() - s2).abs() < 1e-12 * s2);
        }
        // d = 1, ν = 3/2: σ² = g² Γ(3/2) / (Γ(2) √(4π) κ³) = g² / (4κ³).
        let (kappa, g) = derive_g(1.0, 1.0, 1).unwrap();
        assert_eq!(kappa, 1.0);
        assert!((g - 2.0).abs() < 1e-14);
        assert!(derive_g(1.0, 1.0, 4).is_err());
        assert!(derive_g(-1.0, 1.0, 2).is_err());
    }

    #[test]
    fn zero_noise_gives_zero_field() {
        let s = sampler(&[2, 2], 1, 0, SpdeConfig::new(2.0, 1.5));
        let r = s.solve(NoiseVector::zeros(0, 4)).unwrap();
        assert!(r.u.iter().chain(&r.rho).all(|v| *v == 0.0));
    }

    #[test]
    fn solver_paths_agree() {
        let base = SpdeConfig::new(3.0, 2.0);
        let mut streams = RngStreams::new(1);
        let direct = sampler(&[4, 3], 2, 1, base.with_solver(SolverKind::Direct));
        let b = single_level_noise(direct.discretization().ops(0), &mut streams);
        let ud = direct.solve(b.clone()).unwrap();
        assert_eq!(ud.report.method, SolverKind::Direct);
        assert!(ud.report.relative_residual < 1e-12);
        for kind in [SolverKind::SchurCg, SolverKind::Minres] {
            let other = sampler(&[4, 3], 2, 1, base.with_solver(kind));
            let uo = other.solve(b.clone()).unwrap();
            assert!(uo.report.relative_residual <= base.tol);
            let diff = uo.u.iter().zip(&ud.u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = ud.u.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff <= 1e-8 * norm, "{kind:?}: {}", diff / norm);
        }
    }

    #[test]
    fn linearity() {
        let s = sampler(&[3, 3], 1, 0, SpdeConfig::new(2.0, 1.0));
        let mut streams = RngStreams::new(2);
        let r1 = s.sample_prior(0, &mut streams).unwrap();
        let r2 = s.sample_prior(0, &mut streams).unwrap();
        let combo = FieldRealization::combine(0.3, &r1, -1.7, &r2).unwrap();
        let direct = s.solve(combo.noise.clone()).unwrap();
        for (a, b) in combo.u.iter().zip(&direct.u) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn conditional_with_zero_fine_input() {
        let s = sampler(&[2, 2], 2, 0, SpdeConfig::new(2.0, 1.0));
        let d = s.discretization();
        let mut streams = RngStreams::new(3);
        let coarse = s.sample_prior(1, &mut streams).unwrap();
        let fine = sample_conditional_with_xi(s.solver(0), d.ops(0), d.transfer(0), &coarse, &[0.0; 16]).unwrap();
        let b = d.transfer(0).pi_transpose(&coarse.noise.b).unwrap();
        let expect = s.solver(0).solve(&b).unwrap().0;
        assert_eq!(fine.u, expect);
        let r = s.sample_conditional(&coarse, &mut streams).unwrap();
        let pt = d.transfer(0).p_transpose(&r.noise.b).unwrap();
        for (a, b) in pt.iter().zip(&coarse.noise.b) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_sums_to_field() {
        let s = sampler(&[1, 2], 3, 0, SpdeConfig::new(2.0, 1.0));
        let mut streams = RngStreams::new(4);
        let fine = s.sample_hierarchical_at(0, &mut streams).unwrap();
        let comps = s.decompose(&fine).unwrap();
        assert_eq!(comps.len(), 3);
        let scale = fine.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..fine.u.len() {
            let sum: f64 = comps.iter().map(|c| c.u[i]).sum();
            assert!((sum - fine.u[i]).abs() <= 2.0 * 1e-10 * scale.max(1.0));
        }
        let prior = s.sample_prior(0, &mut streams).unwrap();
        assert!(s.decompose(&prior).unwrap().len() == 1);
        let combo = FieldRealization::combine(1.0, &prior, 1.0, &fine).unwrap();
        assert!(s.decompose(&combo).is_err());
    }

    #[test]
    fn density_forms() {
        let s = sampler(&[3, 3], 1, 0, SpdeConfig::new(2.0, 1.0));
        let mut streams = RngStreams::new(5);
        let r = s.sample_prior(0, &mut streams).unwrap();
        let a = s.log_prior_density(&r);
        let b = log_prior_density_from_field(s.solver(0), &r.u);
        assert!((a - b).abs() <= 1e-8 * a.abs());
        let doubled = FieldRealization::combine(2.0, &r, 0.0, &r).unwrap();
        assert!((s.log_prior_density(&doubled) - 4.0 * a).abs() <= 1e-12 * a.abs());
        assert_eq!(s.log_prior_density(&s.solve(NoiseVector::zeros(0, 9)).unwrap()), 0.0);
    }

    #[test]
    fn rejects_one_dimensional_meshes() {
        let h = build_hierarchy(&MeshSpec::unit(1, &[4], 1)).unwrap();
        let d = Discretization::new(h, SpaceOptions::default()).unwrap();
        assert!(FieldSampler::new(d, SpdeConfig::new(1.0, 1.0)).is_err());
    }
}
