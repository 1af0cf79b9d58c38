//! Sparse storage, a banded Cholesky factorization and Krylov solvers.
//!
//! Everything here works on plain `f64` slices. Matrices are small enough at
//! desk scale that a compressed row layout plus a band solver covers all the
//! systems assembled by [`crate::spaces`] and [`crate::darcy`].

mod banded;
mod csr;
mod krylov;

pub use banded::{bandwidth_under, BandedCholesky};
pub use csr::CsrMatrix;
pub use krylov::{cg, minres, KrylovReport};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `y <- y + alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}
