//! Small dense linear-algebra helpers shared by the emulator and the
//! discrepancy model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative diagonal jitter added before every Gram factorization.
pub const JITTER: f64 = 1e-10;

/// Jitter used for the single retry after a failed factorization.
pub const JITTER_RETRY: f64 = 1e-6;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Cholesky factorization with `JITTER × max(diag)` added to the diagonal,
/// retried once with `JITTER_RETRY` before giving up.
pub fn jittered_cholesky(mut matrix: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = matrix.nrows();
    let scale = (0..n)
        .map(|i| matrix[(i, i)].abs())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    for i in 0..n {
        matrix[(i, i)] += JITTER * scale;
    }
    match matrix.clone().cholesky() {
        Some(chol) => Ok(chol),
        None => {
            for i in 0..n {
                matrix[(i, i)] += (JITTER_RETRY - JITTER) * scale;
            }
            matrix.cholesky().ok_or_else(|| {
                Error::NotPositiveDefinite(format!("{n}x{n} Gram after jitter escalation"))
            })
        }
    }
}

pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Zero-mean multivariate normal log-density from a factorized covariance.
pub fn mvn_log_density(chol: &Cholesky<f64, Dyn>, x: &DVector<f64>) -> f64 {
    let n = x.len() as f64;
    let mut z = x.clone();
    chol.l_dirty()
        .solve_lower_triangular_mut(&mut z);
    -0.5 * (n * LN_2PI + log_det(chol) + z.norm_squared())
}

/// Population variance (divides by n).
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Flip a vector so its largest-magnitude entry is positive.
pub(crate) fn canonical_sign(v: &mut [f64]) -> bool {
    let mut best = 0.0_f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
        true
    } else {
        false
    }
}

/// [`jittered_cholesky`] for faer matrices, used on the large discrepancy
/// covariances.
pub(crate) fn jittered_llt(matrix: &mut faer::Mat<f64>) -> Result<faer::linalg::solvers::Llt<f64>> {
    let n = matrix.nrows();
    let scale = (0..n).map(|i| matrix[(i, i)].abs()).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    for i in 0..n {
        matrix[(i, i)] += JITTER * scale;
    }
    if let Ok(llt) = matrix.llt(faer::Side::Lower) {
        return Ok(llt);
    }
    for i in 0..n {
        matrix[(i, i)] += (JITTER_RETRY - JITTER) * scale;
    }
    matrix
        .llt(faer::Side::Lower)
        .map_err(|_| Error::NotPositiveDefinite(format!("{n}x{n} covariance after jitter escalation")))
}
