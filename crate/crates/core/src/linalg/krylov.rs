use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2};

/// Outcome of a Krylov solve. `history` holds the monitored relative residual
/// after every iteration (2-norm for CG, preconditioned norm for MINRES).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KrylovReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub history: Vec<f64>,
}

pub type LinearMap<'a> = &'a mut dyn FnMut(&[f64], &mut [f64]);

/// Preconditioned conjugate gradients for SPD operators, starting from the
/// contents of `x`.
pub fn cg(
    apply: LinearMap<'_>,
    mut precond: Option<LinearMap<'_>>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<KrylovReport> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovReport::default());
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    let mut precondition = |r: &[f64], z: &mut [f64]| match precond.as_mut() {
        Some(p) => p(r, z),
        None => z.copy_from_slice(r),
    };
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut report = KrylovReport { relative_residual: norm2(&r) / bnorm, ..Default::default() };
    if report.relative_residual <= tol {
        return Ok(report);
    }

    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: it, value: pap });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        let rel = norm2(&r) / bnorm;
        report.iterations = it;
        report.relative_residual = rel;
        report.history.push(rel);
        if rel <= tol {
            return Ok(report);
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::NotConverged { iterations: max_iter, residual: report.relative_residual })
}

/// Preconditioned MINRES for symmetric (possibly indefinite) operators with an
/// SPD preconditioner. The monitored quantity is the preconditioned residual
/// norm, which is non-increasing.
pub fn minres(
    apply: LinearMap<'_>,
    precond: LinearMap<'_>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<KrylovReport> {
    let n = b.len();
    if norm2(b) == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovReport::default());
    }
    let mut v_prev = vec![0.0; n];
    let mut v = vec![0.0; n];
    apply(x, &mut v);
    for (vi, bi) in v.iter_mut().zip(b) {
        *vi = bi - *vi;
    }
    let mut z = vec![0.0; n];
    precond(&v, &mut z);
    let mut gamma = dot(&z, &v);
    if gamma < 0.0 {
        return Err(Error::NotPositiveDefinite { pivot: 0, value: gamma });
    }
    gamma = gamma.sqrt();
    let gamma0 = gamma;
    let mut gamma_prev = 1.0;
    let mut eta = gamma;
    let (mut s_prev, mut s) = (0.0, 0.0);
    let (mut c_prev, mut c) = (1.0, 1.0);
    let mut w_prev = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut az = vec![0.0; n];
    let mut z_next = vec![0.0; n];
    let mut report = KrylovReport { relative_residual: 1.0, ..Default::default() };
    if gamma0 == 0.0 {
        report.relative_residual = 0.0;
        return Ok(report);
    }

    for it in 1..=max_iter {
        z.iter_mut().for_each(|zi| *zi /= gamma);
        apply(&z, &mut az);
        let delta = dot(&az, &z);
        // v_next = A z - (delta/gamma) v - (gamma/gamma_prev) v_prev
        let mut v_next = az.clone();
        axpy(-delta / gamma, &v, &mut v_next);
        axpy(-gamma / gamma_prev, &v_prev, &mut v_next);
        precond(&v_next, &mut z_next);
        let gamma_next_sq = dot(&z_next, &v_next);
        if gamma_next_sq < 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: it, value: gamma_next_sq });
        }
        let gamma_next = gamma_next_sq.sqrt();

        let alpha0 = c * delta - c_prev * s * gamma;
        let alpha1 = (alpha0 * alpha0 + gamma_next * gamma_next).sqrt();
        let alpha2 = s * delta + c_prev * c * gamma;
        let alpha3 = s_prev * gamma;
        let c_next = alpha0 / alpha1;
        let s_next = gamma_next / alpha1;

        let mut w_next = z.clone();
        axpy(-alpha3, &w_prev, &mut w_next);
        axpy(-alpha2, &w, &mut w_next);
        w_next.iter_mut().for_each(|wi| *wi /= alpha1);
        axpy(c_next * eta, &w_next, x);
        eta *= -s_next;

        let rel = eta.abs() / gamma0;
        report.iterations = it;
        report.relative_residual = rel;
        report.history.push(rel);
        if rel <= tol || gamma_next == 0.0 {
            return Ok(report);
        }

        std::mem::swap(&mut v_prev, &mut v);
        v = v_next;
        std::mem::swap(&mut z, &mut z_next);
        w_prev = std::mem::replace(&mut w, w_next);
        gamma_prev = gamma;
        gamma = gamma_next;
        c_prev = c;
        c = c_next;
        s_prev = s;
        s = s_next;
    }
    Err(Error::NotConverged { iterations: max_iter, residual: report.relative_residual })
}
