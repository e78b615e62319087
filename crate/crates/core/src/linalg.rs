//! Small dense linear-algebra helpers shared by the GP and meta-learning code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::GpError;

/// First relative jitter tried after a plain factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factorization with adaptive diagonal jitter.
///
/// The jitter is scaled by the mean diagonal entry and escalated by a factor
/// of ten from [`JITTER_START`] up to [`JITTER_MAX`]. Returns the factor and
/// the absolute jitter that was added (zero when none was needed).
pub fn cholesky_jittered(matrix: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let n = matrix.nrows();
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok((chol, 0.0));
    }
    let scale = (matrix.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
        rel *= 10.0;
    }
    Err(GpError::Factorization { size: n })
}

/// Solves `L x = b` in place for a lower-triangular `L`.
pub fn forward_substitute(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    let n = l.nrows();
    for i in 0..n {
        let mut acc = b[i];
        for j in 0..i {
            acc -= l[(i, j)] * b[j];
        }
        b[i] = acc / l[(i, i)];
    }
}

/// Log-determinant of the matrix represented by a Cholesky factor.
pub fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}
