//! Benchmark task families, the simulated linear axis, standardization and
//! meta-data collection.

pub mod argus;
pub mod camelback;
pub mod corpus;
pub mod eggholder;
mod standardize;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::TaskDataset;
use crate::gp::{GpPrior, KernelConfig};
use crate::safe_bo::{discretize, run_safe_bo, Algorithm, BoConfig, SafeBoError, TruthTable};

pub use argus::ArgusParams;
pub use camelback::CamelbackParams;
pub use eggholder::EggholderParams;
pub use standardize::{fit_standardizer, input_stats, Standardizer};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("no data: {0}")]
    EmptyData(&'static str),
    #[error("degenerate statistics: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("simulation diverged: {0}")]
    Divergence(String),
    #[error("task {task}: {source}")]
    Collect {
        task: usize,
        #[source]
        source: SafeBoError,
    },
    #[error(transparent)]
    Gp(#[from] crate::error::GpError),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Camelback,
    Eggholder,
    Argus,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Camelback => "camelback",
            Family::Eggholder => "eggholder",
            Family::Argus => "argus",
        };
        f.write_str(s)
    }
}

impl FromStr for Family {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "camelback" => Ok(Family::Camelback),
            "eggholder" => Ok(Family::Eggholder),
            "argus" => Ok(Family::Argus),
            other => Err(EnvError::InvalidParameter(format!("unknown family {other:?}"))),
        }
    }
}

/// Meta-data defaults: task count, points per task and the constraint
/// lengthscale used during collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaDataSpec {
    pub n_tasks: usize,
    pub points_per_task: usize,
    pub constraint_lengthscale: f64,
}

impl Family {
    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            Family::Camelback => camelback::BOUNDS.to_vec(),
            Family::Eggholder => eggholder::BOUNDS.to_vec(),
            Family::Argus => argus::BOUNDS.to_vec(),
        }
    }

    pub fn safe_seeds(self) -> Vec<Vec<f64>> {
        match self {
            Family::Camelback => vec![camelback::SAFE_SEED.to_vec()],
            Family::Eggholder => vec![eggholder::SAFE_SEED.to_vec()],
            Family::Argus => vec![argus::SAFE_SEED.to_vec()],
        }
    }

    /// Likelihood std of the GP models, in standardized units.
    pub fn likelihood_std(self) -> f64 {
        match self {
            Family::Camelback => 0.02,
            Family::Eggholder => 0.05,
            Family::Argus => 0.1,
        }
    }

    pub fn meta_data_spec(self) -> MetaDataSpec {
        match self {
            Family::Camelback => MetaDataSpec {
                n_tasks: 40,
                points_per_task: 100,
                constraint_lengthscale: 0.5,
            },
            Family::Eggholder => MetaDataSpec {
                n_tasks: 40,
                points_per_task: 200,
                constraint_lengthscale: 0.4,
            },
            Family::Argus => MetaDataSpec {
                n_tasks: 20,
                points_per_task: 400,
                constraint_lengthscale: 0.4,
            },
        }
    }

    /// Fixed standardizer from noise-free evaluations of a few tasks; only
    /// used to turn the standardized noise level into raw units and to run
    /// the collection models.
    pub fn pilot_standardizer(self) -> &'static Standardizer {
        static CELLS: [OnceLock<Standardizer>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        let slot = match self {
            Family::Camelback => 0,
            Family::Eggholder => 1,
            Family::Argus => 2,
        };
        CELLS[slot].get_or_init(|| pilot_fit(self))
    }
}

const PILOT_STREAM: u64 = 0x5049_4c4f_5400;

fn pilot_fit(family: Family) -> Standardizer {
    let (tasks, points) = match family {
        Family::Argus => (4, 16),
        _ => (8, 500),
    };
    let bounds = family.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(PILOT_STREAM, family as u64));
    let mut fs = Vec::new();
    let mut qs = Vec::new();
    for k in 0..tasks {
        let params = TaskParams::sample(family, derive_seed(PILOT_STREAM + 1, k));
        for s in family.safe_seeds() {
            let (f, q) = params.evaluate(&s);
            fs.push(f);
            qs.push(q);
        }
        for _ in 0..points {
            let x: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
            let (f, q) = params.evaluate(&x);
            fs.push(f);
            qs.push(q);
        }
    }
    fit_standardizer(&bounds, [(&fs[..], &qs[..])]).expect("pilot evaluations span a range")
}

/// SplitMix64 finalizer; derives independent seeds for sub-streams.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TaskParams {
    Camelback(CamelbackParams),
    Eggholder(EggholderParams),
    Argus(ArgusParams),
}

impl TaskParams {
    pub fn sample(family: Family, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match family {
            Family::Camelback => TaskParams::Camelback(CamelbackParams::sample(&mut rng)),
            Family::Eggholder => TaskParams::Eggholder(EggholderParams::sample(&mut rng)),
            Family::Argus => {
                let step = 10f64.powf(rng.random_range(-5.0..-2.0));
                TaskParams::Argus(ArgusParams::for_step_size(step).expect("step size in range"))
            }
        }
    }

    pub fn family(&self) -> Family {
        match self {
            TaskParams::Camelback(_) => Family::Camelback,
            TaskParams::Eggholder(_) => Family::Eggholder,
            TaskParams::Argus(_) => Family::Argus,
        }
    }

    /// Noise-free `(f, q)` in raw units.
    pub fn evaluate(&self, x: &[f64]) -> (f64, f64) {
        match self {
            TaskParams::Camelback(p) => (p.f(x), p.q(x)),
            TaskParams::Eggholder(p) => (p.f(x), p.q(x)),
            TaskParams::Argus(p) => p.evaluate(x),
        }
    }
}

/// One optimization task: noise-free functions plus raw observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvTask {
    pub seed: u64,
    pub params: TaskParams,
    pub noise_f: f64,
    pub noise_q: f64,
}

impl EnvTask {
    pub fn new(params: TaskParams, seed: u64) -> Self {
        let family = params.family();
        let pilot = family.pilot_standardizer();
        let sigma = family.likelihood_std();
        Self {
            seed,
            params,
            noise_f: sigma * pilot.f_std,
            noise_q: sigma * pilot.q_std,
        }
    }

    pub fn sample(family: Family, seed: u64) -> Self {
        Self::new(TaskParams::sample(family, seed), seed)
    }

    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.family().bounds()
    }

    pub fn safe_seeds(&self) -> Vec<Vec<f64>> {
        self.family().safe_seeds()
    }

    pub fn evaluate(&self, x: &[f64]) -> (f64, f64) {
        self.params.evaluate(x)
    }

    /// Noisy observation drawn from `rng`.
    pub fn observe<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> (f64, f64) {
        let (f, q) = self.evaluate(x);
        let nf = Normal::new(0.0, self.noise_f).expect("positive std");
        let nq = Normal::new(0.0, self.noise_q).expect("positive std");
        (f + nf.sample(rng), q + nq.sample(rng))
    }

    /// Noise-free values over a set of raw points.
    pub fn truth(&self, points: &[Vec<f64>]) -> TruthTable {
        let (f, q) = points.par_iter().map(|x| self.evaluate(x)).unzip();
        TruthTable { f, q }
    }
}

pub fn camelback_task(seed: u64) -> EnvTask {
    EnvTask::sample(Family::Camelback, seed)
}

pub fn eggholder_task(seed: u64) -> EnvTask {
    EnvTask::sample(Family::Eggholder, seed)
}

pub fn argus_task(step_size: f64) -> Result<EnvTask, EnvError> {
    Ok(EnvTask::new(TaskParams::Argus(ArgusParams::for_step_size(step_size)?), 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub n_tasks: usize,
    pub points_per_task: usize,
    pub domain_size: usize,
    pub seed: u64,
    pub alpha: f64,
    pub epsilon: f64,
}

impl CollectConfig {
    pub fn defaults(family: Family, domain_size: usize, seed: u64) -> Self {
        let spec = family.meta_data_spec();
        Self {
            n_tasks: spec.n_tasks,
            points_per_task: spec.points_per_task,
            domain_size,
            seed,
            alpha: 0.99,
            epsilon: 0.2,
        }
    }
}

/// Raw SafeOpt trajectory on one meta-training task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectedTask {
    pub index: usize,
    pub task: EnvTask,
    pub x: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub q: Vec<f64>,
}

const TASK_STREAM: u64 = 1;
const DOMAIN_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

pub fn task_seed(base: u64, index: usize) -> u64 {
    derive_seed(derive_seed(base, TASK_STREAM), index as u64)
}

pub fn domain_seed(base: u64, index: usize) -> u64 {
    derive_seed(derive_seed(base, DOMAIN_STREAM), index as u64)
}

pub fn noise_seed(base: u64, index: usize) -> u64 {
    derive_seed(derive_seed(base, NOISE_STREAM), index as u64)
}

/// Runs SafeOpt with conservative Vanilla GPs on `n_tasks` fresh tasks and
/// records every observation, the initial safe point included.
pub fn collect_meta_data(family: Family, cfg: &CollectConfig) -> Result<Vec<CollectedTask>, EnvError> {
    (0..cfg.n_tasks).into_par_iter().map(|i| collect_task(family, cfg, i)).collect()
}

/// The SafeOpt trajectory on meta-training task `index` alone.
pub fn collect_task(family: Family, cfg: &CollectConfig, index: usize) -> Result<CollectedTask, EnvError> {
    let spec = family.meta_data_spec();
    let pilot = family.pilot_standardizer();
    let prior_f = GpPrior::vanilla(&KernelConfig::new(0.2, 1.0, 0.1)?);
    let prior_q = GpPrior::vanilla(&KernelConfig::new(spec.constraint_lengthscale, 1.0, 0.1)?);
    let n_seeds = family.safe_seeds().len();
    let bo = BoConfig {
        algorithm: Algorithm::SafeOpt,
        iterations: cfg.points_per_task.saturating_sub(n_seeds),
        alpha: cfg.alpha,
        epsilon: cfg.epsilon,
    };
    let task = EnvTask::sample(family, task_seed(cfg.seed, index));
    let domain = discretize(&task.bounds(), cfg.domain_size, domain_seed(cfg.seed, index), &task.safe_seeds())
        .map_err(|source| EnvError::Collect { task: index, source })?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(cfg.seed, index));
    let record = run_safe_bo(&domain, pilot, &prior_f, &prior_q, &bo, None, |x| Ok(task.observe(x, &mut rng)))
        .map_err(|source| EnvError::Collect { task: index, source })?;
    let mut out = CollectedTask {
        index,
        task,
        x: Vec::new(),
        f: Vec::new(),
        q: Vec::new(),
    };
    for row in record.rows {
        out.x.push(row.x);
        out.f.push(row.f);
        out.q.push(row.q);
    }
    Ok(out)
}

/// Standardizer fitted to a collected corpus.
pub fn corpus_standardizer(family: Family, tasks: &[CollectedTask]) -> Result<Standardizer, EnvError> {
    fit_standardizer(&family.bounds(), tasks.iter().map(|t| (&t.f[..], &t.q[..])))
}

/// Standardized objective and constraint datasets, one pair per task.
pub fn split_datasets(
    tasks: &[CollectedTask],
    scaler: &Standardizer,
) -> Result<(Vec<TaskDataset>, Vec<TaskDataset>), EnvError> {
    let mut fs = Vec::with_capacity(tasks.len());
    let mut qs = Vec::with_capacity(tasks.len());
    for t in tasks {
        let xs: Vec<Vec<f64>> = t.x.iter().map(|x| scaler.apply_x(x)).collect();
        let id = format!("task{:03}", t.index);
        let f = TaskDataset::new(id.clone(), xs.clone(), t.f.iter().map(|&v| scaler.apply_f(v)).collect())?;
        let q = TaskDataset::new(id, xs, t.q.iter().map(|&v| scaler.apply_q(v)).collect())?;
        fs.push(f);
        qs.push(q);
    }
    Ok((fs, qs))
}
