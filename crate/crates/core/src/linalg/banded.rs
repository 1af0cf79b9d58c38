use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Cholesky factor `P A P^T = L L^T` of a symmetric positive definite sparse
/// matrix, stored as a dense lower band.
///
/// The permutation is supplied by the caller; the structured grids in this crate
/// have natural orderings (grid lines, face-center sweeps) that keep the band
/// narrow, so no general fill-reducing reordering is attempted.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    band: Vec<f64>,
}

fn band_under(a: &CsrMatrix, inv: &[usize]) -> usize {
    a.triplets().map(|(i, j, _)| inv[i].abs_diff(inv[j])).max().unwrap_or(0)
}

/// Half bandwidth of `a` after reordering with `perm` (`perm[new] = old`).
pub fn bandwidth_under(a: &CsrMatrix, perm: &[usize]) -> usize {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    band_under(a, &inv)
}

impl BandedCholesky {
    /// Factors `a` using only its lower triangle under `perm` (`perm[new] = old`).
    /// `None` keeps the natural ordering.
    pub fn factor(a: &CsrMatrix, perm: Option<Vec<usize>>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
        }
        let perm = perm.unwrap_or_else(|| (0..n).collect());
        if perm.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: perm.len() });
        }
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        if inv.contains(&usize::MAX) {
            return Err(Error::InvalidParameter("ordering is not a permutation".into()));
        }

        let bw = band_under(a, &inv);
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for (i, j, v) in a.triplets() {
            let (pi, pj) = (inv[i], inv[j]);
            if pj <= pi {
                band[pi * w + (pj + bw - pi)] += v;
            }
        }

        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let jlo = j.saturating_sub(bw).max(lo);
                let ri = &band[i * w + (jlo + bw - i)..i * w + (j + bw - i)];
                let rj = &band[j * w + (jlo + bw - j)..j * w + bw];
                let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                let s = band[i * w + (j + bw - i)] - dot;
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, perm, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        self.solve_into(rhs, &mut x);
        x
    }

    pub fn solve_into(&self, rhs: &[f64], out: &mut [f64]) {
        assert_eq!(rhs.len(), self.n);
        assert_eq!(out.len(), self.n);
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * w + (lo + bw - i)..i * w + bw];
            let s: f64 = row.iter().zip(&y[lo..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.band[i * w + bw];
        }
        // L^T x = y, sweeping rows of L so the band is read contiguously
        for i in (0..n).rev() {
            let lo = i.saturating_sub(bw);
            y[i] /= self.band[i * w + bw];
            let yi = y[i];
            let row = &self.band[i * w + (lo + bw - i)..i * w + bw];
            for (v, l) in y[lo..i].iter_mut().zip(row) {
                *v -= l * yi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = y[new];
        }
    }
}
