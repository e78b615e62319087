//! Exact Gaussian process regression.
//!
//! Every prior in this crate uses a squared-exponential kernel evaluated on a
//! feature representation of the input: the identity for a Vanilla GP, or a
//! neural feature map for a meta-learned prior. Inputs are embedded once
//! ([`Embedded`]) so that repeated posterior queries over a fixed domain do not
//! re-run the networks.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::GpError;
use crate::linalg::{chol_logdet, cholesky_jittered};
use crate::nn::Mlp;

/// SE kernel hyper-parameters plus the Gaussian likelihood std.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub lengthscale: f64,
    pub variance: f64,
    pub likelihood_std: f64,
}

impl KernelConfig {
    pub fn new(lengthscale: f64, variance: f64, likelihood_std: f64) -> Result<Self, GpError> {
        for (name, v) in [
            ("lengthscale", lengthscale),
            ("variance", variance),
            ("likelihood_std", likelihood_std),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GpError::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            lengthscale,
            variance,
            likelihood_std,
        })
    }
}

/// `ν exp(-‖x - x'‖² / (2 l²))`.
pub fn se_kernel(x: &[f64], x_prime: &[f64], cfg: &KernelConfig) -> f64 {
    let d2 = sq_dist(x, x_prime);
    cfg.variance * (-d2 / (2.0 * cfg.lengthscale * cfg.lengthscale)).exp()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// SE kernel on feature vectors: `variance * exp(-‖a - b‖² / divisor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureKernel {
    pub variance: f64,
    pub divisor: f64,
}

impl FeatureKernel {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.variance * (-sq_dist(a, b) / self.divisor).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeanFunction {
    Zero,
    Network(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureMap {
    Identity,
    Network(Mlp),
}

/// An input after passing through the prior's mean function and feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub mean: f64,
    pub features: Vec<f64>,
}

/// GP prior `GP(m(x), k(x, x'))` with Gaussian likelihood noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpPrior {
    pub mean: MeanFunction,
    pub feature_map: FeatureMap,
    pub kernel: FeatureKernel,
    pub noise_std: f64,
}

impl GpPrior {
    /// Zero-mean GP with the SE kernel of `cfg`.
    pub fn vanilla(cfg: &KernelConfig) -> Self {
        Self {
            mean: MeanFunction::Zero,
            feature_map: FeatureMap::Identity,
            kernel: FeatureKernel {
                variance: cfg.variance,
                divisor: 2.0 * cfg.lengthscale * cfg.lengthscale,
            },
            noise_std: cfg.likelihood_std,
        }
    }

    /// Input dimension required by the networks, if any.
    pub fn input_dim(&self) -> Option<usize> {
        match (&self.mean, &self.feature_map) {
            (MeanFunction::Network(n), _) => Some(n.input_dim()),
            (_, FeatureMap::Network(n)) => Some(n.input_dim()),
            _ => None,
        }
    }

    pub fn embed(&self, x: &[f64]) -> Result<Embedded, GpError> {
        let mean = match &self.mean {
            MeanFunction::Zero => 0.0,
            MeanFunction::Network(net) => net.forward(x)?[0],
        };
        let features = match &self.feature_map {
            FeatureMap::Identity => x.to_vec(),
            FeatureMap::Network(net) => net.forward(x)?.as_slice().to_vec(),
        };
        Ok(Embedded { mean, features })
    }

    pub fn embed_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Embedded>, GpError> {
        let dim = xs.first().map(|x| x.len());
        xs.iter()
            .map(|x| {
                if Some(x.len()) != dim {
                    return Err(GpError::DimensionMismatch {
                        expected: dim.unwrap_or(0),
                        got: x.len(),
                    });
                }
                self.embed(x)
            })
            .collect()
    }

    /// Gradient of the mean function and Jacobian of the feature map at `x`.
    pub fn embed_with_jacobian(
        &self,
        x: &[f64],
    ) -> Result<(Embedded, Vec<f64>, DMatrix<f64>), GpError> {
        let (mean, mean_grad) = match &self.mean {
            MeanFunction::Zero => (0.0, vec![0.0; x.len()]),
            MeanFunction::Network(net) => {
                let (y, j) = net.forward_with_jacobian(x)?;
                (y[0], j.row(0).iter().copied().collect())
            }
        };
        let (features, jac) = match &self.feature_map {
            FeatureMap::Identity => (x.to_vec(), DMatrix::identity(x.len(), x.len())),
            FeatureMap::Network(net) => {
                let (y, j) = net.forward_with_jacobian(x)?;
                (y.as_slice().to_vec(), j)
            }
        };
        Ok((Embedded { mean, features }, mean_grad, jac))
    }

    pub fn mean_fn(&self, x: &[f64]) -> Result<f64, GpError> {
        Ok(self.embed(x)?.mean)
    }

    pub fn kernel_fn(&self, x: &[f64], x_prime: &[f64]) -> Result<f64, GpError> {
        let a = self.embed(x)?;
        let b = self.embed(x_prime)?;
        Ok(self.kernel.eval(&a.features, &b.features))
    }

    /// Prior std of the latent function; constant for feature-space SE kernels.
    pub fn prior_std(&self) -> f64 {
        self.kernel.variance.sqrt()
    }
}

/// Posterior of a GP conditioned on embedded observations.
#[derive(Debug, Clone)]
pub struct Posterior {
    kernel: FeatureKernel,
    noise_std: f64,
    train: Vec<Embedded>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl Posterior {
    pub fn fit(prior: &GpPrior, train: Vec<Embedded>, y: &[f64]) -> Result<Self, GpError> {
        Self::fit_with(prior.kernel, prior.noise_std, train, y)
    }

    pub fn fit_with(
        kernel: FeatureKernel,
        noise_std: f64,
        train: Vec<Embedded>,
        y: &[f64],
    ) -> Result<Self, GpError> {
        if train.len() != y.len() {
            return Err(GpError::DimensionMismatch {
                expected: train.len(),
                got: y.len(),
            });
        }
        if let Some(first) = train.first() {
            let d = first.features.len();
            if let Some(bad) = train.iter().find(|e| e.features.len() != d) {
                return Err(GpError::DimensionMismatch {
                    expected: d,
                    got: bad.features.len(),
                });
            }
        }
        let n = train.len();
        if n == 0 {
            return Ok(Self {
                kernel,
                noise_std,
                train,
                chol: None,
                alpha: DVector::zeros(0),
            });
        }
        let k = gram(&kernel, &train, noise_std * noise_std);
        let (chol, _) = cholesky_jittered(k)?;
        let resid = DVector::from_iterator(n, train.iter().zip(y).map(|(e, yi)| yi - e.mean));
        let alpha = chol.solve(&resid);
        Ok(Self {
            kernel,
            noise_std,
            train,
            chol: Some(chol),
            alpha,
        })
    }

    pub fn num_train(&self) -> usize {
        self.train.len()
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn kernel(&self) -> FeatureKernel {
        self.kernel
    }

    /// Latent mean and std at one embedded query.
    pub fn predict(&self, q: &Embedded) -> (f64, f64) {
        let prior_var = self.kernel.variance;
        let Some(chol) = &self.chol else {
            return (q.mean, prior_var.sqrt());
        };
        let kq = DVector::from_iterator(
            self.train.len(),
            self.train.iter().map(|t| self.kernel.eval(&t.features, &q.features)),
        );
        let mean = q.mean + kq.dot(&self.alpha);
        let mut v = kq;
        chol.l_dirty()
            .solve_lower_triangular_mut(&mut v);
        let var = (prior_var - v.norm_squared()).max(0.0);
        (mean, var.sqrt())
    }

    /// Batched prediction; uses one triangular solve for all queries.
    pub fn predict_many(&self, queries: &[Embedded]) -> Vec<(f64, f64)> {
        let Some(chol) = &self.chol else {
            let s = self.kernel.variance.sqrt();
            return queries.iter().map(|q| (q.mean, s)).collect();
        };
        let n = self.train.len();
        let mut kq = DMatrix::zeros(n, queries.len());
        for (j, q) in queries.iter().enumerate() {
            for (i, t) in self.train.iter().enumerate() {
                kq[(i, j)] = self.kernel.eval(&t.features, &q.features);
            }
        }
        let means: Vec<f64> = queries
            .iter()
            .enumerate()
            .map(|(j, q)| q.mean + kq.column(j).dot(&self.alpha))
            .collect();
        chol.l_dirty().solve_lower_triangular_mut(&mut kq);
        queries
            .iter()
            .enumerate()
            .map(|(j, _)| {
                let var = (self.kernel.variance - kq.column(j).norm_squared()).max(0.0);
                (means[j], var.sqrt())
            })
            .collect()
    }

    /// `L⁻¹ k(X_train, q)` for every query, as columns.
    pub fn whitened_cross(&self, queries: &[Embedded]) -> DMatrix<f64> {
        let n = self.train.len();
        let mut kq = DMatrix::zeros(n, queries.len());
        for (j, q) in queries.iter().enumerate() {
            for (i, t) in self.train.iter().enumerate() {
                kq[(i, j)] = self.kernel.eval(&t.features, &q.features);
            }
        }
        if let Some(chol) = &self.chol {
            chol.l_dirty().solve_lower_triangular_mut(&mut kq);
        }
        kq
    }

    /// Gradient of the posterior mean with respect to the raw input, given the
    /// prior's mean gradient and feature Jacobian at that input.
    pub fn mean_gradient(&self, q: &Embedded, mean_grad: &[f64], feat_jac: &DMatrix<f64>) -> Vec<f64> {
        let d = mean_grad.len();
        let mut grad = mean_grad.to_vec();
        if self.train.is_empty() {
            return grad;
        }
        // d/dphi of k(phi, phi_i) = -2 k (phi - phi_i) / divisor
        let mut dphi = vec![0.0; q.features.len()];
        for (t, a) in self.train.iter().zip(self.alpha.iter()) {
            let k = self.kernel.eval(&q.features, &t.features);
            let c = -2.0 * a * k / self.kernel.divisor;
            for ((dp, qf), tf) in dphi.iter_mut().zip(&q.features).zip(&t.features) {
                *dp += c * (qf - tf);
            }
        }
        for (j, g) in grad.iter_mut().enumerate().take(d) {
            for (r, dp) in dphi.iter().enumerate() {
                *g += dp * feat_jac[(r, j)];
            }
        }
        grad
    }
}

/// `K + noise_var I` over embedded points.
pub fn gram(kernel: &FeatureKernel, pts: &[Embedded], noise_var: f64) -> DMatrix<f64> {
    let n = pts.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&pts[i].features, &pts[j].features);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise_var;
    }
    k
}

fn check_dims(xs: &[Vec<f64>], queries: &[Vec<f64>]) -> Result<(), GpError> {
    let d = xs.first().or(queries.first()).map_or(0, |x| x.len());
    for x in xs.iter().chain(queries) {
        if x.len() != d {
            return Err(GpError::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
    }
    Ok(())
}

/// Posterior `(mean, std)` of the latent function at each query.
pub fn gp_posterior(
    prior: &GpPrior,
    xs: &[Vec<f64>],
    ys: &[f64],
    queries: &[Vec<f64>],
) -> Result<Vec<(f64, f64)>, GpError> {
    check_dims(xs, queries)?;
    let post = Posterior::fit(prior, prior.embed_all(xs)?, ys)?;
    Ok(post.predict_many(&prior.embed_all(queries)?))
}

/// `ln p(y | X) = -½ rᵀK̃⁻¹r - ½ ln|K̃| - (T/2) ln 2π` with `r = y - m(X)`.
pub fn marginal_log_likelihood(prior: &GpPrior, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64, GpError> {
    if xs.is_empty() {
        return Err(GpError::Empty("marginal likelihood needs at least one point"));
    }
    if xs.len() != ys.len() {
        return Err(GpError::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    check_dims(xs, &[])?;
    let pts = prior.embed_all(xs)?;
    let k = gram(&prior.kernel, &pts, prior.noise_std * prior.noise_std);
    let (chol, _) = cholesky_jittered(k)?;
    let r = DVector::from_iterator(ys.len(), pts.iter().zip(ys).map(|(e, y)| y - e.mean));
    let alpha = chol.solve(&r);
    let t = ys.len() as f64;
    Ok(-0.5 * r.dot(&alpha) - 0.5 * chol_logdet(&chol) - 0.5 * t * (2.0 * PI).ln())
}

/// Two-sided Gaussian quantile `Φ⁻¹((1 + α) / 2)`.
pub fn beta_of_alpha(alpha: f64) -> Result<f64, GpError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GpError::Domain(format!(
            "confidence level must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(Normal::standard().inverse_cdf(0.5 * (1.0 + alpha)))
}

/// A validated confidence level with its precomputed std multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceLevel {
    alpha: f64,
    beta: f64,
}

impl ConfidenceLevel {
    pub fn new(alpha: f64) -> Result<Self, GpError> {
        Ok(Self {
            alpha,
            beta: beta_of_alpha(alpha)?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// `(mean - β std, mean + β std)`.
pub fn confidence_interval(mean: f64, std: f64, level: ConfidenceLevel) -> (f64, f64) {
    let half = level.beta * std;
    (mean - half, mean + half)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l: f64, v: f64, s: f64) -> KernelConfig {
        KernelConfig::new(l, v, s).unwrap()
    }

    #[test]
    fn kernel_at_zero_distance_is_variance() {
        assert_eq!(se_kernel(&[0.3, 1.0], &[0.3, 1.0], &cfg(0.7, 2.0, 0.1)), 2.0);
    }

    #[test]
    fn kernel_decays_to_zero() {
        let c = cfg(0.5, 1.0, 0.1);
        assert!(se_kernel(&[0.0], &[50.0], &c) < 1e-10);
    }

    #[test]
    fn kernel_unit_distance_value() {
        let v = se_kernel(&[0.0], &[1.0], &cfg(1.0, 2.0, 0.1));
        assert!((v - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 1.21306).abs() < 1e-5);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(KernelConfig::new(0.0, 1.0, 0.1).is_err());
        assert!(KernelConfig::new(1.0, -1.0, 0.1).is_err());
        assert!(KernelConfig::new(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn empty_data_reverts_to_prior() {
        let prior = GpPrior::vanilla(&cfg(0.5, 3.0, 0.1));
        let out = gp_posterior(&prior, &[], &[], &[vec![0.1, 0.2], vec![1.0, -1.0]]).unwrap();
        for (m, s) in out {
            assert_eq!(m, 0.0);
            assert!((s - 3f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn interpolates_with_tiny_noise() {
        let prior = GpPrior::vanilla(&cfg(0.5, 1.0, 1e-6));
        let xs = vec![vec![0.0], vec![0.4], vec![1.0]];
        let ys = [0.3, -0.2, 0.8];
        let out = gp_posterior(&prior, &xs, &ys, &xs).unwrap();
        for ((m, _), y) in out.iter().zip(ys) {
            assert!((m - y).abs() < 1e-3);
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let prior = GpPrior::vanilla(&cfg(0.5, 1.0, 0.1));
        let err = gp_posterior(&prior, &[vec![0.0, 1.0]], &[1.0], &[vec![0.0]]).unwrap_err();
        assert!(matches!(err, GpError::DimensionMismatch { .. }));
    }

    #[test]
    fn single_point_mll_closed_form() {
        let c = cfg(0.5, 1.7, 0.3);
        let prior = GpPrior::vanilla(&c);
        let y = 0.9;
        let s2 = c.variance + c.likelihood_std * c.likelihood_std;
        let expected = -0.5 * y * y / s2 - 0.5 * s2.ln() - 0.5 * (2.0 * PI).ln();
        let got = marginal_log_likelihood(&prior, &[vec![0.2]], &[y]).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn mll_zero_residual_is_logdet_only() {
        let c = cfg(0.5, 1.0, 0.2);
        let prior = GpPrior::vanilla(&c);
        let xs = vec![vec![0.0], vec![0.3], vec![0.9]];
        let pts = prior.embed_all(&xs).unwrap();
        let k = gram(&prior.kernel, &pts, 0.04);
        let logdet = k.determinant().ln();
        let got = marginal_log_likelihood(&prior, &xs, &[0.0, 0.0, 0.0]).unwrap();
        assert!((got - (-0.5 * logdet - 1.5 * (2.0 * PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn mll_requires_data() {
        let prior = GpPrior::vanilla(&cfg(0.5, 1.0, 0.2));
        assert!(matches!(
            marginal_log_likelihood(&prior, &[], &[]),
            Err(GpError::Empty(_))
        ));
    }

    #[test]
    fn beta_reference_values() {
        assert!((beta_of_alpha(0.6827).unwrap() - 1.0).abs() < 1e-3);
        assert!((beta_of_alpha(0.95).unwrap() - 1.959964).abs() < 1e-5);
        assert!(beta_of_alpha(0.0).is_err());
        assert!(beta_of_alpha(1.0).is_err());
    }

    #[test]
    fn degenerate_interval() {
        let lvl = ConfidenceLevel::new(0.9).unwrap();
        assert_eq!(confidence_interval(1.5, 0.0, lvl), (1.5, 1.5));
        let (lo, hi) = confidence_interval(0.0, 1.0, ConfidenceLevel::new(0.95).unwrap());
        assert!((lo + 1.96).abs() < 1e-3 && (hi - 1.96).abs() < 1e-3);
    }

    #[test]
    fn mean_gradient_matches_finite_difference() {
        let prior = GpPrior::vanilla(&cfg(0.6, 1.3, 0.1));
        let xs = vec![vec![0.0, 0.1], vec![0.5, -0.3], vec![-0.4, 0.7]];
        let post = Posterior::fit(&prior, prior.embed_all(&xs).unwrap(), &[0.2, -0.5, 1.0]).unwrap();
        let x = [0.1, 0.2];
        let (e, mg, j) = prior.embed_with_jacobian(&x).unwrap();
        let g = post.mean_gradient(&e, &mg, &j);
        let h = 1e-6;
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fp = post.predict(&prior.embed(&xp).unwrap()).0;
            let fm = post.predict(&prior.embed(&xm).unwrap()).0;
            assert!(((fp - fm) / (2.0 * h) - g[k]).abs() < 1e-6);
        }
    }
}
