use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{bandwidth_under, cg, minres, norm2, BandedCholesky, CsrMatrix};
use crate::spaces::LevelOperators;

use super::SpdeConfig;

/// Linear solver for the SPDE saddle system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// `Direct` when its band fits [`DIRECT_BAND_LIMIT`], `SchurCg` otherwise.
    #[default]
    Auto,
    /// Banded Cholesky of the flux-only operator `M + κ^{-2} B^T W^{-1} B`.
    Direct,
    /// CG on `A = (κ²/g) W + (1/g) B M^{-1} B^T`, with `M^{-1}` applied by an
    /// exact banded factorization.
    SchurCg,
    /// MINRES on the full saddle system, preconditioned by `diag(M), κ² W`.
    Minres,
}

/// Largest `dofs × bandwidth` accepted by `Auto` for the direct path.
pub const DIRECT_BAND_LIMIT: usize = 60_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: SolverKind,
    pub iterations: usize,
    /// `‖saddle residual‖ / ‖g b‖`
    pub relative_residual: f64,
}

/// Per-level solver state; factorizations are computed once.
#[derive(Debug, Clone)]
pub struct SpdeSolver {
    level: usize,
    kappa: f64,
    g: f64,
    tol: f64,
    max_iter: usize,
    kind: SolverKind,
    w: Vec<f64>,
    w_sqrt: Vec<f64>,
    m: CsrMatrix,
    b: CsrMatrix,
    m_fac: BandedCholesky,
    k_fac: Option<BandedCholesky>,
    a_diag: Vec<f64>,
}

impl SpdeSolver {
    pub fn new(ops: &LevelOperators, cfg: &SpdeConfig) -> Result<Self> {
        cfg.validate()?;
        let rt = ops.require_rt()?;
        let (kappa, g) = (cfg.kappa, cfg.g);
        let w = ops.w().to_vec();
        let m = rt.mass().clone();
        let b = rt.div().clone();
        let m_fac = BandedCholesky::factor(&m, Some(rt.line_ordering().to_vec()))?;

        let mut kind = cfg.solver;
        let mut k_matrix = None;
        if matches!(kind, SolverKind::Auto | SolverKind::Direct) {
            let k = flux_operator(&m, &b, &w, kappa)?;
            let band = bandwidth_under(&k, rt.center_ordering());
            if kind == SolverKind::Auto {
                kind = if k.nrows().saturating_mul(band + 1) <= DIRECT_BAND_LIMIT {
                    SolverKind::Direct
                } else {
                    SolverKind::SchurCg
                };
            }
            if kind == SolverKind::Direct {
                k_matrix = Some(k);
            }
        }
        let k_fac = match k_matrix {
            Some(k) => Some(BandedCholesky::factor(&k, Some(rt.center_ordering().to_vec()))?),
            None => None,
        };

        let lumped = m.row_sums();
        let mut a_diag: Vec<f64> = w.iter().map(|wi| kappa * kappa / g * wi).collect();
        for (e, f, v) in b.triplets() {
            a_diag[e] += v * v / lumped[f] / g;
        }

        Ok(Self {
            level: ops.level(),
            kappa,
            g,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            kind,
            w,
            w_sqrt: ops.w_sqrt().to_vec(),
            m,
            b,
            m_fac,
            k_fac,
            a_diag,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    pub fn num_elements(&self) -> usize {
        self.w.len()
    }

    pub fn num_fluxes(&self) -> usize {
        self.m.nrows()
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w_sqrt(&self) -> &[f64] {
        &self.w_sqrt
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.m
    }

    pub fn div(&self) -> &CsrMatrix {
        &self.b
    }

    /// `A u`
    pub fn apply_a(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_a_into(u, &mut out);
        out
    }

    fn apply_a_into(&self, u: &[f64], out: &mut [f64]) {
        let y = self.m_fac.solve(&self.b.tr_mul_vec(u));
        self.b.mul_vec_into(&y, out);
        let c = self.kappa * self.kappa;
        for ((o, wi), ui) in out.iter_mut().zip(&self.w).zip(u) {
            *o = (*o + c * wi * ui) / self.g;
        }
    }

    /// `‖[Mρ + B^T u; Bρ − κ²Wu + g b]‖ / ‖g b‖`, or the absolute norm when `b = 0`.
    pub fn saddle_residual(&self, rho: &[f64], u: &[f64], b: &[f64]) -> f64 {
        let r = self.saddle_residual_vec(rho, u, b);
        let scale = self.g * norm2(b);
        let n = norm2(&r);
        if scale > 0.0 {
            n / scale
        } else {
            n
        }
    }

    fn saddle_residual_vec(&self, rho: &[f64], u: &[f64], b: &[f64]) -> Vec<f64> {
        let mut top = self.m.mul_vec(rho);
        for (t, v) in top.iter_mut().zip(self.b.tr_mul_vec(u)) {
            *t += v;
        }
        let mut bottom = self.b.mul_vec(rho);
        let c = self.kappa * self.kappa;
        for i in 0..bottom.len() {
            bottom[i] += -c * self.w[i] * u[i] + self.g * b[i];
        }
        top.extend(bottom);
        top
    }

    /// Solves the saddle system with right-hand side `(0, -g b)`; returns `(u, ρ)`.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, Vec<f64>, SolveReport)> {
        let ne = self.num_elements();
        if b.len() != ne {
            return Err(Error::DimensionMismatch { expected: ne, got: b.len() });
        }
        let nf = self.num_fluxes();
        if b.iter().all(|v| *v == 0.0) {
            let report = SolveReport { method: self.kind, ..Default::default() };
            return Ok((vec![0.0; ne], vec![0.0; nf], report));
        }
        let (u, rho, iterations) = match self.kind {
            SolverKind::Direct | SolverKind::Auto => self.solve_direct(b),
            SolverKind::SchurCg => self.solve_schur(b)?,
            SolverKind::Minres => self.solve_minres(b)?,
        };
        let relative_residual = self.saddle_residual(&rho, &u, b);
        if !(relative_residual <= self.tol) {
            return Err(Error::NotConverged { iterations, residual: relative_residual });
        }
        Ok((u, rho, SolveReport { method: self.kind, iterations, relative_residual }))
    }

    fn u_from_rho(&self, rho: &[f64], b: &[f64]) -> Vec<f64> {
        let br = self.b.mul_vec(rho);
        let c = self.kappa * self.kappa;
        (0..b.len()).map(|i| (br[i] + self.g * b[i]) / (c * self.w[i])).collect()
    }

    fn solve_direct(&self, b: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
        let fac = self.k_fac.as_ref().expect("direct path factored");
        let c = self.kappa * self.kappa;
        let scaled: Vec<f64> = b.iter().zip(&self.w).map(|(bi, wi)| -self.g / c * bi / wi).collect();
        let mut rho = fac.solve(&self.b.tr_mul_vec(&scaled));
        let mut u = self.u_from_rho(&rho, b);
        // one step of refinement keeps the residual near machine precision
        // when κ²W and B^T W^{-1} B differ greatly in scale
        let r = self.saddle_residual_vec(&rho, &u, b);
        let (r_top, r_bot) = r.split_at(rho.len());
        let corr_rhs: Vec<f64> = {
            let scaled: Vec<f64> = r_bot.iter().zip(&self.w).map(|(v, wi)| v / (c * wi)).collect();
            let bt = self.b.tr_mul_vec(&scaled);
            r_top.iter().zip(&bt).map(|(t, s)| -(t + s)).collect()
        };
        let d_rho = fac.solve(&corr_rhs);
        let bdr = self.b.mul_vec(&d_rho);
        for i in 0..rho.len() {
            rho[i] += d_rho[i];
        }
        for i in 0..u.len() {
            u[i] += (bdr[i] + r_bot[i]) / (c * self.w[i]);
        }
        (u, rho, 1)
    }

    fn solve_schur(&self, b: &[f64]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let mut u = vec![0.0; b.len()];
        let mut apply = |x: &[f64], y: &mut [f64]| self.apply_a_into(x, y);
        let mut pre = |r: &[f64], z: &mut [f64]| {
            for i in 0..r.len() {
                z[i] = r[i] / self.a_diag[i];
            }
        };
        let report = cg(&mut apply, Some(&mut pre), b, &mut u, self.tol * 0.5, self.max_iter)?;
        let mut rho = self.m_fac.solve(&self.b.tr_mul_vec(&u));
        rho.iter_mut().for_each(|v| *v = -*v);
        Ok((u, rho, report.iterations))
    }

    fn solve_minres(&self, b: &[f64]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let nf = self.num_fluxes();
        let ne = self.num_elements();
        let c = self.kappa * self.kappa;
        let mut rhs = vec![0.0; nf];
        rhs.extend(b.iter().map(|v| -self.g * v));
        let mdiag = self.m.diagonal();
        let mut apply = |x: &[f64], y: &mut [f64]| {
            let (rho, u) = x.split_at(nf);
            let (top, bottom) = y.split_at_mut(nf);
            self.m.mul_vec_into(rho, top);
            let btu = self.b.tr_mul_vec(u);
            for (t, v) in top.iter_mut().zip(&btu) {
                *t += v;
            }
            self.b.mul_vec_into(rho, bottom);
            for i in 0..ne {
                bottom[i] -= c * self.w[i] * u[i];
            }
        };
        let mut pre = |r: &[f64], z: &mut [f64]| {
            for i in 0..nf {
                z[i] = r[i] / mdiag[i];
            }
            for i in 0..ne {
                z[nf + i] = r[nf + i] / (c * self.w[i]);
            }
        };
        let mut x = vec![0.0; nf + ne];
        let mut iterations = 0;
        let mut tol = self.tol * 0.5;
        // the monitored norm is the preconditioned one; tighten until the
        // true residual meets the tolerance
        for _ in 0..4 {
            let report = minres(&mut apply, &mut pre, &rhs, &mut x, tol, self.max_iter)?;
            iterations += report.iterations;
            let (rho, u) = x.split_at(nf);
            if self.saddle_residual(rho, u, b) <= self.tol {
                break;
            }
            tol *= 0.1;
        }
        let u = x.split_off(nf);
        Ok((u, x, iterations))
    }
}

/// `M + κ^{-2} B^T W^{-1} B`
pub fn flux_operator(m: &CsrMatrix, b: &CsrMatrix, w: &[f64], kappa: f64) -> Result<CsrMatrix> {
    let c = kappa * kappa;
    let scale: Vec<f64> = w.iter().map(|wi| 1.0 / (c * wi)).collect();
    let wb = CsrMatrix::from_diagonal(&scale).matmul(b)?;
    let btwb = b.transpose().matmul(&wb)?;
    let mut t: Vec<(usize, usize, f64)> = m.triplets().collect();
    t.extend(btwb.triplets());
    Ok(CsrMatrix::from_triplets(m.nrows(), m.ncols(), &t))
}
