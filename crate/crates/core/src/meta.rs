//! Meta-learning a GP prior with a network mean and a network feature-map
//! kernel, regularized towards a Vanilla-GP hyper-prior in function space.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::calibration::TaskDataset;
use crate::error::GpError;
use crate::gp::{se_kernel, FeatureKernel, FeatureMap, GpPrior, KernelConfig, MeanFunction};
use crate::linalg::{chol_logdet, cholesky_jittered};
use crate::nn::{Architecture, Mlp};

/// Jitter added to both covariance operands of the KL divergence.
pub const KL_JITTER: f64 = 1e-8;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("no meta-training datasets")]
    NoDatasets,
    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFinite { iteration: usize, loss: f64 },
    #[error("dataset {index} has input dimension {got}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("unsupported prior format version {0}")]
    Version(u32),
}

/// A GP prior with `m(x) = mean_net(x)` and
/// `k(x, x') = nu_P exp(-‖phi(x) - phi(x')‖² / (2 l_P))`, `phi = feature_net`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnablePrior {
    pub version: u32,
    pub mean_net: Mlp,
    pub feature_net: Mlp,
    pub log_variance: f64,
    pub log_lengthscale: f64,
    pub noise_std: f64,
}

impl LearnablePrior {
    /// Random networks; `nu_P = nu_h` and `l_P = l_h²` so the kernel scale
    /// starts at the hyper-prior's.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hyper: &KernelConfig, rng: &mut R) -> Self {
        Self::with_architecture(
            Architecture::standard(input_dim, 1),
            Architecture::standard(input_dim, input_dim),
            hyper,
            rng,
        )
    }

    pub fn with_architecture<R: Rng + ?Sized>(
        mean_arch: Architecture,
        feature_arch: Architecture,
        hyper: &KernelConfig,
        rng: &mut R,
    ) -> Self {
        Self {
            version: FORMAT_VERSION,
            mean_net: Mlp::init_uniform(mean_arch, rng),
            feature_net: Mlp::init_uniform(feature_arch, rng),
            log_variance: hyper.variance.ln(),
            log_lengthscale: 2.0 * hyper.lengthscale.ln(),
            noise_std: hyper.likelihood_std,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn to_gp_prior(&self) -> GpPrior {
        GpPrior {
            mean: MeanFunction::Network(self.mean_net.clone()),
            feature_map: FeatureMap::Network(self.feature_net.clone()),
            kernel: FeatureKernel {
                variance: self.variance(),
                divisor: 2.0 * self.lengthscale(),
            },
            noise_std: self.noise_std,
        }
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + self.feature_net.num_params() + 2
    }

    /// Mean-net parameters, feature-net parameters, `ln nu_P`, `ln l_P`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mean_net.params();
        p.extend(self.feature_net.params());
        p.push(self.log_variance);
        p.push(self.log_lengthscale);
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter count mismatch");
        let nm = self.mean_net.num_params();
        let nf = self.feature_net.num_params();
        self.mean_net.set_params(&flat[..nm]);
        self.feature_net.set_params(&flat[nm..nm + nf]);
        self.log_variance = flat[nm + nf];
        self.log_lengthscale = flat[nm + nf + 1];
    }

    pub fn to_json(&self) -> Result<String, MetaError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, MetaError> {
        let p: Self = serde_json::from_str(s)?;
        if p.version != FORMAT_VERSION {
            return Err(MetaError::Version(p.version));
        }
        Ok(p)
    }
}

/// `KL(N(m0, K0) ‖ N(m1, K1))`, both covariances jittered by [`KL_JITTER`].
pub fn gaussian_kl(
    m0: &DVector<f64>,
    k0: &DMatrix<f64>,
    m1: &DVector<f64>,
    k1: &DMatrix<f64>,
) -> Result<f64, GpError> {
    let k = m0.len();
    if k0.nrows() != k || k1.nrows() != k || m1.len() != k {
        return Err(GpError::DimensionMismatch {
            expected: k,
            got: k0.nrows().max(k1.nrows()).max(m1.len()),
        });
    }
    let eye = DMatrix::<f64>::identity(k, k) * KL_JITTER;
    let (c0, _) = cholesky_jittered(k0 + &eye)?;
    let (c1, _) = cholesky_jittered(k1 + &eye)?;
    let trace = c1.solve(&(k0 + &eye)).trace();
    let dm = m1 - m0;
    let quad = dm.dot(&c1.solve(&dm));
    let kl = 0.5 * (trace + quad - k as f64 + chol_logdet(&c1) - chol_logdet(&c0));
    Ok(kl.max(0.0))
}

/// Inputs on which the learned and hyper-prior marginals are compared:
/// a subsample of a task's inputs plus uniform draws from the domain box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub inputs: Vec<Vec<f64>>,
    pub from_train: usize,
}

/// Up to `n_train` task inputs without replacement, topped up with uniform
/// domain points to `n_train + n_uniform` in total.
pub fn sample_measurement_set<R: Rng + ?Sized>(
    task: &TaskDataset,
    domain: &[(f64, f64)],
    n_train: usize,
    n_uniform: usize,
    rng: &mut R,
) -> MeasurementSet {
    let take = n_train.min(task.len());
    let mut inputs: Vec<Vec<f64>> = sample(rng, task.len(), take)
        .into_iter()
        .map(|i| task.inputs[i].clone())
        .collect();
    let total = n_train + n_uniform;
    while inputs.len() < total {
        inputs.push(domain.iter().map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect());
    }
    MeasurementSet {
        inputs,
        from_train: take,
    }
}

/// Per-task weight of the KL term.
pub fn kl_weight(n_tasks: usize, task_len: usize) -> f64 {
    let n = n_tasks as f64;
    1.0 / n.sqrt() + 1.0 / (n * task_len as f64)
}

fn rows_matrix(xs: &[Vec<f64>]) -> DMatrix<f64> {
    let d = xs.first().map_or(0, |x| x.len());
    DMatrix::from_fn(xs.len(), d, |i, j| xs[i][j])
}

struct PriorVars {
    mean: Vec<(Var, Var)>,
    feat: Vec<(Var, Var)>,
    log_var: Var,
    log_len: Var,
}

impl PriorVars {
    fn record(tape: &mut Tape, prior: &LearnablePrior) -> Self {
        let net = |tape: &mut Tape, m: &Mlp| {
            m.layers
                .iter()
                .map(|l| {
                    let w = tape.param(l.weights.clone());
                    let b = tape.param(DMatrix::from_column_slice(l.bias.len(), 1, l.bias.as_slice()));
                    (w, b)
                })
                .collect::<Vec<_>>()
        };
        let mean = net(tape, &prior.mean_net);
        let feat = net(tape, &prior.feature_net);
        let log_var = tape.param_scalar(prior.log_variance);
        let log_len = tape.param_scalar(prior.log_lengthscale);
        Self {
            mean,
            feat,
            log_var,
            log_len,
        }
    }

    fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for (w, b) in self.mean.iter().chain(&self.feat) {
            v.push(*w);
            v.push(*b);
        }
        v.push(self.log_var);
        v.push(self.log_len);
        v
    }
}

fn net_forward(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Var {
    let mut h = x;
    for (i, (w, b)) in layers.iter().enumerate() {
        let z = tape.matmul_t(h, *w);
        h = tape.add_bias(z, *b);
        if i + 1 < layers.len() {
            h = tape.tanh(h);
        }
    }
    h
}

/// Prior mean column and latent Gram matrix at the rows of `x`.
fn prior_marginal(tape: &mut Tape, vars: &PriorVars, x: Var) -> (Var, Var) {
    let m = net_forward(tape, &vars.mean, x);
    let phi = net_forward(tape, &vars.feat, x);
    let d = tape.sq_dist(phi);
    let neg = tape.scale(vars.log_len, -1.0);
    let inv_len = tape.exp(neg);
    let coef = tape.scale(inv_len, -0.5);
    let arg = tape.scale_by(d, coef);
    let e = tape.exp(arg);
    let nu = tape.exp(vars.log_var);
    (m, tape.scale_by(e, nu))
}

/// The pieces of one task's loss term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLoss {
    pub mll: f64,
    pub kl: f64,
    pub weight: f64,
}

#[allow(clippy::too_many_arguments)]
fn task_term(
    tape: &mut Tape,
    vars: &PriorVars,
    prior: &LearnablePrior,
    task: &TaskDataset,
    mset: &MeasurementSet,
    hyper: &KernelConfig,
    n_tasks: usize,
    kl_scale: f64,
) -> Result<(Var, TaskLoss), GpError> {
    let t = task.len();
    let x = tape.constant(rows_matrix(&task.inputs));
    let y = tape.constant(DMatrix::from_column_slice(t, 1, &task.targets));
    let (m, k) = prior_marginal(tape, vars, x);
    let r = tape.sub(y, m);
    let kt = tape.add_diag(k, prior.noise_std * prior.noise_std);
    let quad = tape.quad_solve(kt, r)?;
    let logdet = tape.logdet(kt)?;
    let a = tape.scale(quad, -0.5);
    let b = tape.scale(logdet, -0.5);
    let mll = tape.add(a, b);
    let mll = tape.add_const(mll, -0.5 * t as f64 * (2.0 * PI).ln());

    let km = mset.inputs.len();
    let xm = tape.constant(rows_matrix(&mset.inputs));
    let (mm, kmm) = prior_marginal(tape, vars, xm);
    let kmm = tape.add_diag(kmm, KL_JITTER);
    let kh = DMatrix::from_fn(km, km, |i, j| {
        se_kernel(&mset.inputs[i], &mset.inputs[j], hyper) + if i == j { KL_JITTER } else { 0.0 }
    });
    let (ch, _) = cholesky_jittered(kh.clone())?;
    let kh_logdet = chol_logdet(&ch);
    let kh_inv = tape.constant(ch.inverse());
    let kh = tape.constant(kh);
    let prod = tape.mul_elem(kh_inv, kmm);
    let trace = tape.sum(prod);
    let mq = tape.quad_solve(kh, mm)?;
    let ld = tape.logdet(kmm)?;
    let s = tape.add(trace, mq);
    let s = tape.sub(s, ld);
    let s = tape.add_const(s, kh_logdet - km as f64);
    let kl = tape.scale(s, 0.5);

    let weight = kl_weight(n_tasks, t);
    let lhs = tape.scale(mll, -1.0 / t as f64);
    let rhs = tape.scale(kl, weight * kl_scale);
    let term = tape.add(lhs, rhs);
    let parts = TaskLoss {
        mll: tape.scalar_value(mll),
        kl: tape.scalar_value(kl),
        weight,
    };
    Ok((term, parts))
}

/// Loss value, its gradient in [`LearnablePrior::params`] order, and the
/// per-task pieces, for given measurement sets (one per task).
pub fn loss_and_gradient(
    prior: &LearnablePrior,
    datasets: &[TaskDataset],
    msets: &[MeasurementSet],
    hyper: &KernelConfig,
    kl_scale: f64,
) -> Result<(f64, Vec<f64>, Vec<TaskLoss>), MetaError> {
    if datasets.is_empty() {
        return Err(MetaError::NoDatasets);
    }
    let n = datasets.len();
    let mut tape = Tape::new();
    let vars = PriorVars::record(&mut tape, prior);
    let mut total: Option<Var> = None;
    let mut parts = Vec::with_capacity(n);
    for (task, mset) in datasets.iter().zip(msets) {
        let (term, p) = task_term(&mut tape, &vars, prior, task, mset, hyper, n, kl_scale)?;
        parts.push(p);
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let loss = tape.scale(total.expect("at least one task"), 1.0 / n as f64);
    let grads = tape.backward(loss);
    let mut flat = Vec::with_capacity(prior.num_params());
    for v in vars.all() {
        match &grads[v.index()] {
            Some(g) => flat.extend_from_slice(g.as_slice()),
            None => flat.extend(std::iter::repeat_n(0.0, tape.value(v).len())),
        }
    }
    Ok((tape.scalar_value(loss), flat, parts))
}

/// Loss value only.
pub fn fpacoh_loss(
    prior: &LearnablePrior,
    datasets: &[TaskDataset],
    msets: &[MeasurementSet],
    hyper: &KernelConfig,
    kl_scale: f64,
) -> Result<f64, MetaError> {
    Ok(loss_and_gradient(prior, datasets, msets, hyper, kl_scale)?.0)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    /// Multiplier on the KL term (1 for the plain objective).
    pub kl_scale: f64,
    pub measurement_train: usize,
    pub measurement_uniform: usize,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            lr: 1e-3,
            seed: 0,
            kl_scale: 1.0,
            measurement_train: 10,
            measurement_uniform: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutcome {
    pub prior: LearnablePrior,
    pub trace: Vec<TracePoint>,
}

/// Trains a prior from scratch; `domain` is the input box the uniform part of
/// the measurement sets is drawn from.
pub fn meta_train(
    datasets: &[TaskDataset],
    hyper: &KernelConfig,
    domain: &[(f64, f64)],
    cfg: &MetaTrainConfig,
) -> Result<MetaTrainOutcome, MetaError> {
    let first = datasets.first().ok_or(MetaError::NoDatasets)?;
    let d = first.inputs[0].len();
    for (index, t) in datasets.iter().enumerate() {
        let got = t.inputs[0].len();
        if got != d {
            return Err(MetaError::Dimension {
                index,
                expected: d,
                got,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prior = LearnablePrior::init(d, hyper, &mut rng);
    continue_training(prior, datasets, hyper, domain, cfg, &mut rng)
}

/// Runs `cfg.iterations` Adam steps starting from `prior`.
pub fn continue_training<R: Rng + ?Sized>(
    mut prior: LearnablePrior,
    datasets: &[TaskDataset],
    hyper: &KernelConfig,
    domain: &[(f64, f64)],
    cfg: &MetaTrainConfig,
    rng: &mut R,
) -> Result<MetaTrainOutcome, MetaError> {
    let mut params = prior.params();
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let msets: Vec<MeasurementSet> = datasets
            .iter()
            .map(|t| sample_measurement_set(t, domain, cfg.measurement_train, cfg.measurement_uniform, rng))
            .collect();
        let (loss, grad, _) = loss_and_gradient(&prior, datasets, &msets, hyper, cfg.kl_scale)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(MetaError::NonFinite { iteration, loss });
        }
        trace.push(TracePoint { iteration, loss });
        adam.step(&mut params, &grad);
        prior.set_params(&params);
        if iteration % 500 == 0 {
            log::debug!("meta-train iteration {iteration} loss {loss:.6}");
        }
    }
    Ok(MetaTrainOutcome { prior, trace })
}
