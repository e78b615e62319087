//! Calibration frequency and sharpness of Vanilla-GP uncertainty estimates,
//! averaged over meta-training datasets and all their prefix/suffix splits.
//!
//! Every `(task, split)` summand is independent. Per task and ordering the
//! code factorizes the full Gram matrix once: the Cholesky factor of a leading
//! block is the leading block of the full factor, so forward substitution
//! against the full factor yields the whitened cross-covariances of every
//! prefix at once.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::GpError;
use crate::gp::{beta_of_alpha, gram, Embedded, GpPrior, KernelConfig, Posterior};
use crate::linalg::cholesky_jittered;

/// Number of confidence levels in the calibration set.
pub const NUM_LEVELS: usize = 20;

/// One task's ordered observations of a single output (target or constraint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: String,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl TaskDataset {
    pub fn new(
        task_id: impl Into<String>,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self, GpError> {
        if inputs.len() != targets.len() {
            return Err(GpError::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if inputs.len() < 2 {
            return Err(GpError::Domain(format!(
                "a task dataset needs at least 2 points, got {}",
                inputs.len()
            )));
        }
        let d = inputs[0].len();
        if let Some(bad) = inputs.iter().find(|x| x.len() != d) {
            return Err(GpError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(Self {
            task_id: task_id.into(),
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn reversed(&self) -> Self {
        let mut inputs = self.inputs.clone();
        let mut targets = self.targets.clone();
        inputs.reverse();
        targets.reverse();
        Self {
            task_id: self.task_id.clone(),
            inputs,
            targets,
        }
    }
}

/// Per-task averages of both metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub calib: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResult {
    pub avg_calib: f64,
    pub avg_std: f64,
    pub per_task: Vec<TaskMetrics>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("no datasets supplied")]
    NoDatasets,
    #[error("test set is empty")]
    EmptyTest,
    #[error("task {index} ({task_id}): {source}")]
    Task {
        index: usize,
        task_id: String,
        #[source]
        source: GpError,
    },
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// The 20 equally spaced levels from 0.8 to 1.0 and their std multipliers.
/// The level 1.0 has an infinite multiplier: its interval covers every point.
pub fn confidence_levels() -> [(f64, f64); NUM_LEVELS] {
    let mut out = [(0.0, 0.0); NUM_LEVELS];
    for (i, slot) in out.iter_mut().enumerate() {
        let alpha = 0.8 + 0.2 * i as f64 / (NUM_LEVELS - 1) as f64;
        let beta = if i == NUM_LEVELS - 1 {
            f64::INFINITY
        } else {
            beta_of_alpha(alpha).expect("level inside (0, 1)")
        };
        *slot = (alpha, beta);
    }
    out
}

/// Fraction of levels whose empirical coverage reaches the nominal level.
/// `ratios` holds `|y - μ| / s` for every test point; intervals are closed.
fn calib_from_ratios(ratios: &[f64], levels: &[(f64, f64); NUM_LEVELS]) -> f64 {
    let n = ratios.len() as f64;
    let hits = levels
        .iter()
        .filter(|(alpha, beta)| {
            let covered = ratios.iter().filter(|r| **r <= *beta).count() as f64;
            covered / n >= *alpha
        })
        .count();
    hits as f64 / NUM_LEVELS as f64
}

fn embed_identity(xs: &[Vec<f64>]) -> Vec<Embedded> {
    xs.iter()
        .map(|x| Embedded {
            mean: 0.0,
            features: x.clone(),
        })
        .collect()
}

/// Calibration frequency of the Vanilla GP conditioned on `train`, measured
/// on `test`. Uses the predictive std (latent plus likelihood noise).
pub fn calib_freq(
    train: &TaskDataset,
    test_inputs: &[Vec<f64>],
    test_targets: &[f64],
    cfg: &KernelConfig,
) -> Result<f64, CalibrationError> {
    if test_inputs.is_empty() {
        return Err(CalibrationError::EmptyTest);
    }
    let prior = GpPrior::vanilla(cfg);
    let post = Posterior::fit(&prior, embed_identity(&train.inputs), &train.targets)?;
    let noise_var = cfg.likelihood_std * cfg.likelihood_std;
    let ratios: Vec<f64> = post
        .predict_many(&embed_identity(test_inputs))
        .iter()
        .zip(test_targets)
        .map(|((m, s), y)| (y - m).abs() / (s * s + noise_var).sqrt())
        .collect();
    Ok(calib_from_ratios(&ratios, &confidence_levels()))
}

/// Mean calib-freq and mean predictive std over splits `t = 1..T-1` of one
/// ordering of a dataset.
fn split_metrics(data: &TaskDataset, cfg: &KernelConfig) -> Result<TaskMetrics, GpError> {
    let t_len = data.len();
    let prior = GpPrior::vanilla(cfg);
    let noise_var = cfg.likelihood_std * cfg.likelihood_std;
    let pts = embed_identity(&data.inputs);
    let k = gram(&prior.kernel, &pts, noise_var);
    let (chol, _) = cholesky_jittered(k.clone())?;
    let l = chol.l();
    // W = L⁻¹ K̃: column j, rows i < j, are the whitened cross-covariances.
    let mut w = k;
    l.solve_lower_triangular_mut(&mut w);
    let mut z = DVector::from_column_slice(&data.targets);
    l.solve_lower_triangular_mut(&mut z);

    let levels = confidence_levels();
    let mut acc_var = vec![0.0; t_len];
    let mut acc_mean = vec![0.0; t_len];
    let mut calib_sum = 0.0;
    let mut std_sum = 0.0;
    let mut ratios = Vec::with_capacity(t_len);
    for t in 1..t_len {
        let i = t - 1;
        for j in t..t_len {
            let wij = w[(i, j)];
            acc_var[j] += wij * wij;
            acc_mean[j] += wij * z[i];
        }
        ratios.clear();
        let mut split_std = 0.0;
        for j in t..t_len {
            let latent = (cfg.variance - acc_var[j]).max(0.0);
            let s = (latent + noise_var).sqrt();
            split_std += s;
            ratios.push((data.targets[j] - acc_mean[j]).abs() / s);
        }
        std_sum += split_std / (t_len - t) as f64;
        calib_sum += calib_from_ratios(&ratios, &levels);
    }
    let splits = (t_len - 1) as f64;
    Ok(TaskMetrics {
        calib: calib_sum / splits,
        std: std_sum / splits,
    })
}

/// Both metrics for one task, averaged over the given and reversed order.
pub fn task_metrics(data: &TaskDataset, cfg: &KernelConfig) -> Result<TaskMetrics, GpError> {
    let fwd = split_metrics(data, cfg)?;
    let rev = split_metrics(&data.reversed(), cfg)?;
    Ok(TaskMetrics {
        calib: 0.5 * (fwd.calib + rev.calib),
        std: 0.5 * (fwd.std + rev.std),
    })
}

fn reduce(per_task: Vec<TaskMetrics>) -> MetricsResult {
    let n = per_task.len() as f64;
    let mut calib = 0.0;
    let mut std = 0.0;
    for m in &per_task {
        calib += m.calib;
        std += m.std;
    }
    MetricsResult {
        avg_calib: calib / n,
        avg_std: std / n,
        per_task,
    }
}

/// Computes both metrics; per-task work runs on `pool` when given.
/// The reduction is always sequential in task order, so results do not depend
/// on the degree of parallelism.
pub fn evaluate_params_in(
    datasets: &[TaskDataset],
    cfg: &KernelConfig,
    pool: Option<&rayon::ThreadPool>,
) -> Result<MetricsResult, CalibrationError> {
    if datasets.is_empty() {
        return Err(CalibrationError::NoDatasets);
    }
    let compute = || -> Vec<Result<TaskMetrics, GpError>> {
        datasets.par_iter().map(|d| task_metrics(d, cfg)).collect()
    };
    let results = match pool {
        Some(p) => p.install(compute),
        None => datasets.iter().map(|d| task_metrics(d, cfg)).collect(),
    };
    let mut per_task = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(m) => per_task.push(m),
            Err(source) => {
                return Err(CalibrationError::Task {
                    index,
                    task_id: datasets[index].task_id.clone(),
                    source,
                })
            }
        }
    }
    Ok(reduce(per_task))
}

/// Both metrics with the given number of worker threads (1 = serial).
pub fn evaluate_params(
    datasets: &[TaskDataset],
    cfg: &KernelConfig,
    parallelism: usize,
) -> Result<MetricsResult, CalibrationError> {
    if parallelism <= 1 {
        return evaluate_params_in(datasets, cfg, None);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| GpError::Domain(format!("thread pool: {e}")))?;
    evaluate_params_in(datasets, cfg, Some(&pool))
}

pub fn avg_calib(datasets: &[TaskDataset], cfg: &KernelConfig) -> Result<f64, CalibrationError> {
    Ok(evaluate_params_in(datasets, cfg, None)?.avg_calib)
}

pub fn avg_std(datasets: &[TaskDataset], cfg: &KernelConfig) -> Result<f64, CalibrationError> {
    Ok(evaluate_params_in(datasets, cfg, None)?.avg_std)
}
