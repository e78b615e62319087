use serde::{Deserialize, Serialize};

use super::EnvError;

/// Affine maps between raw environment units and the unit-scale space the
/// GP models work in. The constraint is only rescaled, never shifted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub f_mean: f64,
    pub f_std: f64,
    pub q_mean: f64,
    pub q_std: f64,
}

/// Input statistics of a uniform distribution over `bounds`.
pub fn input_stats(bounds: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mean = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let std = bounds.iter().map(|(lo, hi)| ((hi - lo).powi(2) / 12.0).sqrt()).collect();
    (mean, std)
}

/// Fits output statistics to the min/max of all observations in the
/// meta-training data.
pub fn fit_standardizer<'a, I>(bounds: &[(f64, f64)], observations: I) -> Result<Standardizer, EnvError>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let (x_mean, x_std) = input_stats(bounds);
    let (mut fmin, mut fmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut qmin, mut qmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (fs, qs) in observations {
        for &f in fs {
            fmin = fmin.min(f);
            fmax = fmax.max(f);
        }
        for &q in qs {
            qmin = qmin.min(q);
            qmax = qmax.max(q);
        }
    }
    if !fmin.is_finite() || !qmin.is_finite() {
        return Err(EnvError::EmptyData("standardizer needs at least one observation"));
    }
    let f_std = (fmax - fmin) / 3.0;
    let q_std = qmax.abs().max(qmin.abs()) / 2.0;
    if f_std <= 0.0 || q_std <= 0.0 {
        return Err(EnvError::Degenerate(format!(
            "zero output range (f std {f_std}, q std {q_std})"
        )));
    }
    Ok(Standardizer {
        x_mean,
        x_std,
        f_mean: 0.5 * (fmax + fmin),
        f_std,
        q_mean: 0.0,
        q_std,
    })
}

impl Standardizer {
    pub fn apply_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert_x(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.x_mean.iter().zip(&self.x_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply_f(&self, f: f64) -> f64 {
        (f - self.f_mean) / self.f_std
    }

    pub fn invert_f(&self, f: f64) -> f64 {
        f * self.f_std + self.f_mean
    }

    pub fn apply_q(&self, q: f64) -> f64 {
        (q - self.q_mean) / self.q_std
    }

    pub fn invert_q(&self, q: f64) -> f64 {
        q * self.q_std + self.q_mean
    }

    /// Input-space box in standardized coordinates.
    pub fn model_bounds(&self, bounds: &[(f64, f64)]) -> Vec<(f64, f64)> {
        bounds
            .iter()
            .zip(self.x_mean.iter().zip(&self.x_std))
            .map(|((lo, hi), (m, s))| ((lo - m) / s, (hi - m) / s))
            .collect()
    }
}
