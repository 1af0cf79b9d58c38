//! Moment accumulators and standard-error checks for Monte Carlo tests.

use nalgebra::DMatrix;

/// Running sums for the cross moment `E[x y^T]` of zero-mean vectors.
#[derive(Debug, Clone)]
pub struct CrossMoments {
    n: usize,
    sum_x: Vec<f64>,
    sum_y: Vec<f64>,
    outer: DMatrix<f64>,
}

impl CrossMoments {
    pub fn new(p: usize, q: usize) -> Self {
        Self { n: 0, sum_x: vec![0.0; p], sum_y: vec![0.0; q], outer: DMatrix::zeros(p, q) }
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        assert_eq!(x.len(), self.sum_x.len());
        assert_eq!(y.len(), self.sum_y.len());
        self.n += 1;
        for (s, v) in self.sum_x.iter_mut().zip(x) {
            *s += v;
        }
        for (s, v) in self.sum_y.iter_mut().zip(y) {
            *s += v;
        }
        for j in 0..y.len() {
            let yj = y[j];
            let col = &mut self.outer.column_mut(j);
            for i in 0..x.len() {
                col[i] += x[i] * yj;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean_x(&self) -> Vec<f64> {
        self.sum_x.iter().map(|s| s / self.n as f64).collect()
    }

    pub fn mean_y(&self) -> Vec<f64> {
        self.sum_y.iter().map(|s| s / self.n as f64).collect()
    }

    /// `(1/N) Σ x y^T`, the estimator for a known zero mean.
    pub fn moment(&self) -> DMatrix<f64> {
        &self.outer / self.n as f64
    }
}

/// Second moments of one zero-mean vector.
#[derive(Debug, Clone)]
pub struct Covariance(CrossMoments);

impl Covariance {
    pub fn new(n: usize) -> Self {
        Self(CrossMoments::new(n, n))
    }

    pub fn push(&mut self, x: &[f64]) {
        self.0.push(x, x);
    }

    pub fn count(&self) -> usize {
        self.0.count()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.0.mean_x()
    }

    pub fn estimate(&self) -> DMatrix<f64> {
        self.0.moment()
    }
}

/// Standard errors of the known-mean covariance estimator of a Gaussian
/// vector with covariance `c`: `sqrt((C_ii C_jj + C_ij^2) / N)`.
pub fn covariance_se(c: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / n as f64).sqrt())
}

/// Standard errors of the cross moment of independent zero-mean Gaussian
/// vectors with covariances `cx` and `cy`.
pub fn cross_se(cx: &DMatrix<f64>, cy: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(cx.nrows(), cy.nrows(), |i, j| (cx[(i, i)] * cy[(j, j)] / n as f64).sqrt())
}

/// Standard errors of the sample mean.
pub fn mean_se(c: &DMatrix<f64>, n: usize) -> Vec<f64> {
    (0..c.nrows()).map(|i| (c[(i, i)] / n as f64).sqrt()).collect()
}

/// Largest `|estimate - target| / se` over all entries. Entries with zero
/// standard error must match exactly (up to `1e-12` relative to the largest
/// target entry), otherwise the result is infinite.
pub fn max_se_multiple(estimate: &DMatrix<f64>, target: &DMatrix<f64>, se: &DMatrix<f64>) -> f64 {
    assert_eq!(estimate.shape(), target.shape());
    assert_eq!(estimate.shape(), se.shape());
    let floor = 1e-12 * target.abs().max().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for ((e, t), s) in estimate.iter().zip(target.iter()).zip(se.iter()) {
        let d = (e - t).abs();
        let z = if *s > 0.0 {
            d / s
        } else if d <= floor {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    worst
}

/// Largest `|mean_i| / se_i`.
pub fn max_mean_multiple(mean: &[f64], se: &[f64]) -> f64 {
    mean.iter().zip(se).map(|(m, s)| if *s > 0.0 { m.abs() / s } else { 0.0 }).fold(0.0, f64::max)
}
