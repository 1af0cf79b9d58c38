use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::spaces::LevelOperators;

use super::SpdeConfig;

/// Largest `elements + fluxes` for which the dense oracle is built.
pub const ORACLE_DOF_LIMIT: usize = 5000;

/// Explicit dense `A = (κ²/g) W + (1/g) B M^{-1} B^T` and the prior
/// covariance `A^{-1} W A^{-1}`, for small meshes in tests.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    a: DMatrix<f64>,
    w: DVector<f64>,
    a_chol: Cholesky<f64, Dyn>,
}

impl DenseOracle {
    pub fn new(ops: &LevelOperators, cfg: &SpdeConfig) -> Result<Self> {
        let rt = ops.require_rt()?;
        let dofs = ops.num_elements() + rt.num_dofs();
        if dofs > ORACLE_DOF_LIMIT {
            return Err(Error::OracleTooLarge { limit: ORACLE_DOF_LIMIT, got: dofs });
        }
        let m = rt.mass().to_dense();
        let b = rt.div().to_dense();
        let w = DVector::from_column_slice(ops.w());
        let minv = m
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0, value: f64::NAN })?
            .inverse();
        let mut a = &b * minv * b.transpose() / cfg.g;
        for i in 0..w.len() {
            a[(i, i)] += cfg.kappa * cfg.kappa / cfg.g * w[i];
        }
        let a = (&a + a.transpose()) * 0.5;
        let a_chol = a.clone().cholesky().ok_or(Error::NotPositiveDefinite { pivot: 0, value: f64::NAN })?;
        Ok(Self { a, w, a_chol })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.a_chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec()
    }

    /// `A^{-1} W A^{-1}`
    pub fn covariance(&self) -> DMatrix<f64> {
        let ainv = self.a_chol.inverse();
        let c = &ainv * DMatrix::from_diagonal(&self.w) * &ainv;
        (&c + c.transpose()) * 0.5
    }

    /// `-u^T A W^{-1} A u`
    pub fn log_density(&self, u: &[f64]) -> f64 {
        let au = &self.a * DVector::from_column_slice(u);
        -au.iter().zip(self.w.iter()).map(|(a, w)| a * a / w).sum::<f64>()
    }
}
