//! Pipeline stages. Each stage writes its artifacts under the run root and
//! reloads them when present, so downstream commands reuse upstream work.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sambo::calibration::{evaluate_params_in, TaskDataset};
use sambo::env::corpus::{read_corpus, write_corpus, Manifest, MANIFEST_FILE};
use sambo::env::{
    collect_task, corpus_standardizer, derive_seed, split_datasets, task_seed, CollectConfig, CollectedTask,
    EnvTask, Family, Standardizer,
};
use sambo::frontier::{frontier_search, inverse_transform, log_transform, Bounds, FrontierError, SearchOutcome};
use sambo::meta::{meta_train, LearnablePrior, MetaTrainConfig, TracePoint};
use sambo::safe_bo::{discretize, fmt_float, run_safe_bo, BoConfig, RunRecord, SafeBoError, TruthTable};
use sambo::{GpPrior, KernelConfig};
use serde::{Deserialize, Serialize};

use crate::report::{CampaignReport, RunOutcome};
use crate::config::sha256_hex;
use crate::{ExperimentConfig, HarnessError, Method};

const TEST_STREAM: u64 = 4;
const RUN_STREAM: u64 = 5;
const META_STREAM: u64 = 6;

/// Where a stage keeps its artifacts and the key they are stamped with.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub dir: PathBuf,
    pub key: String,
}

impl Stage {
    /// A child stage for a variant of this one (e.g. a corpus slice).
    pub fn variant(&self, dir: PathBuf, tag: &str) -> Stage {
        Stage {
            dir,
            key: sha256_hex(&format!("{}/{tag}", self.key)),
        }
    }
}

/// Config, output root and worker pool shared by all stages.
pub struct Harness {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pool: rayon::ThreadPool,
}

impl Harness {
    pub fn new(cfg: ExperimentConfig, out: &Path, parallelism: usize) -> Result<Self, HarnessError> {
        cfg.validate()?;
        fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?;
        Ok(Self {
            cfg,
            out: out.to_path_buf(),
            pool,
        })
    }

    fn stage(&self, name: &str, key: String) -> Stage {
        Stage {
            dir: self.out.join(format!("{}-{name}-{}", self.cfg.family, &key[..12])),
            key,
        }
    }

    /// `out/<family>-corpus-<key>`; the key covers family, seed and the
    /// collection settings only.
    pub fn corpus_stage(&self) -> Stage {
        self.stage("corpus", self.cfg.corpus_key())
    }

    pub fn frontier_stage(&self) -> Stage {
        self.stage("frontier", self.cfg.frontier_key())
    }

    pub fn meta_stage(&self) -> Stage {
        self.stage("meta", self.cfg.meta_key())
    }

    /// Output directory of a command, keyed by the full config hash, with
    /// the resolved config next to the results.
    pub fn command_dir(&self, command: &str) -> Result<PathBuf, HarnessError> {
        let dir = self.stage(command, self.cfg.hash()).dir;
        write_atomic(&dir.join("config.toml"), self.cfg.to_toml().as_bytes())?;
        Ok(dir)
    }

    pub fn hash(&self) -> String {
        self.cfg.hash()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    pub fn pool(&self) -> &rayon::ThreadPool {
        &self.pool
    }

}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
    write_atomic(path, text.as_bytes())
}

/// Collected meta-data plus the standardizer fitted to it.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub tasks: Vec<CollectedTask>,
    pub standardizer: Standardizer,
    pub manifest: Manifest,
}

impl Corpus {
    pub fn datasets(&self) -> Result<(Vec<TaskDataset>, Vec<TaskDataset>), HarnessError> {
        Ok(split_datasets(&self.tasks, &self.standardizer)?)
    }

    /// First `n` tasks, each cut to its first `t` rows, refitted.
    pub fn subset(&self, n: usize, t: usize) -> Result<Corpus, HarnessError> {
        let tasks: Vec<CollectedTask> = self
            .tasks
            .iter()
            .take(n)
            .map(|c| CollectedTask {
                index: c.index,
                task: c.task.clone(),
                x: c.x[..t.min(c.x.len())].to_vec(),
                f: c.f[..t.min(c.f.len())].to_vec(),
                q: c.q[..t.min(c.q.len())].to_vec(),
            })
            .collect();
        let standardizer = corpus_standardizer(self.manifest.family, &tasks)?;
        let mut manifest = self.manifest.clone();
        manifest.n_tasks = tasks.len();
        manifest.points_per_task = t;
        Ok(Corpus {
            tasks,
            standardizer,
            manifest,
        })
    }
}

/// Runs the collection for every meta task; failed tasks are logged and
/// listed in the manifest.
pub fn collect(h: &Harness, stage: &Stage, n_tasks: usize, points_per_task: usize) -> Result<Corpus, HarnessError> {
    let dir = &stage.dir;
    let c = &h.cfg.collect;
    let family = h.cfg.family;
    let cc = CollectConfig {
        n_tasks,
        points_per_task,
        domain_size: c.domain_size,
        seed: h.cfg.seed,
        alpha: c.alpha,
        epsilon: c.epsilon,
    };
    let results: Vec<_> = h.install(|| (0..n_tasks).into_par_iter().map(|i| collect_task(family, &cc, i)).collect());
    let mut tasks = Vec::with_capacity(n_tasks);
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => tasks.push(t),
            Err(e) => {
                log::error!("collection of task {i} failed: {e}");
                failed.push(format!("task {i}: {e}"));
            }
        }
    }
    if tasks.is_empty() {
        return Err(HarnessError::Config(format!("every collection task failed: {failed:?}")));
    }
    let standardizer = corpus_standardizer(family, &tasks)?;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let manifest = write_corpus(dir, family, h.cfg.seed, points_per_task, &tasks, &standardizer, &stage.key, &failed)?;
    Ok(Corpus {
        tasks,
        standardizer,
        manifest,
    })
}

/// The configured corpus, read back if it already exists.
pub fn load_or_collect(h: &Harness) -> Result<Corpus, HarnessError> {
    let stage = h.corpus_stage();
    if stage.dir.join(MANIFEST_FILE).exists() {
        let (manifest, tasks) = read_corpus(&stage.dir)?;
        if manifest.config_hash == stage.key {
            return Ok(Corpus {
                tasks,
                standardizer: manifest.standardizer.clone(),
                manifest,
            });
        }
    }
    collect(h, &stage, h.cfg.collect.n_tasks, h.cfg.collect.points_per_task)
}

/// Which of the two GP models a stage is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    F,
    Q,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::F => "f",
            Target::Q => "q",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierArtifact {
    pub config_hash: String,
    pub target: Target,
    pub threshold: f64,
    pub lengthscale: f64,
    pub variance: f64,
    pub likelihood_std: f64,
    pub avg_calib: f64,
    pub avg_std: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_distance: f64,
}

impl FrontierArtifact {
    pub fn kernel(&self) -> Result<KernelConfig, HarnessError> {
        Ok(KernelConfig::new(self.lengthscale, self.variance, self.likelihood_std)?)
    }
}

pub fn frontier_bounds(cfg: &ExperimentConfig) -> Result<Bounds, HarnessError> {
    let [l0, l1] = cfg.frontier.lengthscale;
    let [v0, v1] = cfg.frontier.variance;
    let bad = |e: FrontierError<std::convert::Infallible>| HarnessError::Config(e.to_string());
    // z = (-log10 l, log10 nu): small lengthscales and large variances are "up"
    let lo = log_transform(l1, v0).map_err(bad)?;
    let hi = log_transform(l0, v1).map_err(bad)?;
    Bounds::new(lo, hi).map_err(bad)
}

/// Frontier search over `(l, nu)` for one model; writes the chosen point
/// and the per-iteration trace.
pub fn frontier(
    h: &Harness,
    stage: &Stage,
    datasets: &[TaskDataset],
    target: Target,
) -> Result<(FrontierArtifact, SearchOutcome), HarnessError> {
    let fs_cfg = &h.cfg.frontier;
    let sigma = h.cfg.family.likelihood_std();
    let threshold = match target {
        Target::F => fs_cfg.threshold_f,
        Target::Q => fs_cfg.threshold_q,
    };
    let bounds = frontier_bounds(&h.cfg)?;
    let oracle = |z| -> Result<(f64, f64), HarnessError> {
        let (l, nu) = inverse_transform(z);
        let m = evaluate_params_in(datasets, &KernelConfig::new(l, nu, sigma)?, Some(h.pool()))?;
        Ok((m.avg_std, m.avg_calib))
    };
    let outcome = frontier_search(oracle, bounds, threshold, fs_cfg.iterations).map_err(|e| match e {
        FrontierError::Oracle(inner) => inner,
        other => HarnessError::Frontier {
            target: target.name(),
            message: other.to_string(),
        },
    })?;
    let (lengthscale, variance) = inverse_transform(outcome.best.z);
    let dir = &stage.dir;
    let art = FrontierArtifact {
        config_hash: stage.key.clone(),
        target,
        threshold,
        lengthscale,
        variance,
        likelihood_std: sigma,
        avg_calib: outcome.best.c_value,
        avg_std: outcome.best.s_value,
        iterations: outcome.trace.len(),
        converged: outcome.converged,
        final_distance: outcome.final_distance(),
    };
    let name = target.name();
    write_json(&dir.join(format!("frontier_{name}.json")), &art)?;
    let mut csv = format!("# config {}\nk,z1,z2,lengthscale,variance,avg_std,avg_calib,feasible,distance,best_avg_std\n", stage.key);
    for r in &outcome.trace {
        let (l, nu) = inverse_transform(r.query.z);
        let cols = [
            r.k.to_string(),
            fmt_float(r.query.z[0]),
            fmt_float(r.query.z[1]),
            fmt_float(l),
            fmt_float(nu),
            fmt_float(r.query.s_value),
            fmt_float(r.query.c_value),
            r.feasible.to_string(),
            fmt_float(r.distance),
            fmt_float(r.best.s_value),
        ];
        csv.push_str(&cols.join(","));
        csv.push('\n');
    }
    write_atomic(&dir.join(format!("frontier_{name}_trace.csv")), csv.as_bytes())?;
    Ok((art, outcome))
}

fn load_or_frontier(h: &Harness, stage: &Stage, corpus: &Corpus, target: Target) -> Result<FrontierArtifact, HarnessError> {
    let path = stage.dir.join(format!("frontier_{}.json", target.name()));
    if path.exists() {
        let art: FrontierArtifact = read_json(&path)?;
        if art.config_hash == stage.key {
            return Ok(art);
        }
    }
    let (f, q) = corpus.datasets()?;
    let data = match target {
        Target::F => f,
        Target::Q => q,
    };
    Ok(frontier(h, stage, &data, target)?.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaArtifact {
    pub config_hash: String,
    pub target: Target,
    pub hyper: KernelConfig,
    pub prior: LearnablePrior,
}

/// F-PACOH training of one prior with the frontier-search kernel as the
/// hyper-prior; writes the prior and its loss trace.
pub fn meta_train_target(
    h: &Harness,
    stage: &Stage,
    corpus: &Corpus,
    target: Target,
    hyper: &KernelConfig,
) -> Result<(MetaArtifact, Vec<TracePoint>), HarnessError> {
    let m = &h.cfg.meta;
    let (f, q) = corpus.datasets()?;
    let data = match target {
        Target::F => f,
        Target::Q => q,
    };
    let domain = corpus.standardizer.model_bounds(&h.cfg.family.bounds());
    let cfg = MetaTrainConfig {
        iterations: m.iterations,
        lr: m.lr,
        seed: derive_seed(derive_seed(h.cfg.seed, META_STREAM), target as u64),
        kl_scale: m.kl_scale,
        measurement_train: m.measurement_train,
        measurement_uniform: m.measurement_uniform,
    };
    let outcome = meta_train(&data, hyper, &domain, &cfg).map_err(|source| HarnessError::Meta {
        target: target.name(),
        source,
    })?;
    let dir = &stage.dir;
    let art = MetaArtifact {
        config_hash: stage.key.clone(),
        target,
        hyper: *hyper,
        prior: outcome.prior,
    };
    let name = target.name();
    write_json(&dir.join(format!("prior_{name}.json")), &art)?;
    let mut csv = format!("# config {}\niteration,loss\n", stage.key);
    for p in &outcome.trace {
        csv.push_str(&format!("{},{}\n", p.iteration, fmt_float(p.loss)));
    }
    write_atomic(&dir.join(format!("meta_{name}_trace.csv")), csv.as_bytes())?;
    Ok((art, outcome.trace))
}

fn load_or_meta(
    h: &Harness,
    stage: &Stage,
    corpus: &Corpus,
    target: Target,
    hyper: &KernelConfig,
) -> Result<MetaArtifact, HarnessError> {
    let path = stage.dir.join(format!("prior_{}.json", target.name()));
    if path.exists() {
        let art: MetaArtifact = read_json(&path)?;
        if art.config_hash == stage.key && art.hyper == *hyper {
            return Ok(art);
        }
    }
    Ok(meta_train_target(h, stage, corpus, target, hyper)?.0)
}

/// Everything the safe-BO methods need from the upstream stages.
#[derive(Debug, Clone)]
pub struct Models {
    pub standardizer: Standardizer,
    pub frontier_f: Option<FrontierArtifact>,
    pub frontier_q: Option<FrontierArtifact>,
    pub prior_f: Option<LearnablePrior>,
    pub prior_q: Option<LearnablePrior>,
}

/// Loads or computes the frontier-search and meta-training artifacts that
/// `methods` require.
pub fn prepare(
    h: &Harness,
    stages: (&Stage, &Stage),
    corpus: &Corpus,
    methods: &[Method],
) -> Result<Models, HarnessError> {
    let (fs_stage, meta_stage) = stages;
    let need_fs = methods.iter().any(|m| m.needs_frontier());
    let need_meta = methods.iter().any(|m| m.needs_meta());
    let mut models = Models {
        standardizer: corpus.standardizer.clone(),
        frontier_f: None,
        frontier_q: None,
        prior_f: None,
        prior_q: None,
    };
    if need_fs {
        let ff = load_or_frontier(h, fs_stage, corpus, Target::F)?;
        let fq = load_or_frontier(h, fs_stage, corpus, Target::Q)?;
        log::info!("frontier search: f (l={:.4}, nu={:.4}), q (l={:.4}, nu={:.4})", ff.lengthscale, ff.variance, fq.lengthscale, fq.variance);
        if need_meta {
            let (kf, kq) = (ff.kernel()?, fq.kernel()?);
            let (pf, pq) = h.install(|| {
                rayon::join(
                    || load_or_meta(h, meta_stage, corpus, Target::F, &kf),
                    || load_or_meta(h, meta_stage, corpus, Target::Q, &kq),
                )
            });
            models.prior_f = Some(pf?.prior);
            models.prior_q = Some(pq?.prior);
        }
        models.frontier_f = Some(ff);
        models.frontier_q = Some(fq);
    }
    Ok(models)
}

/// The GP priors `(f, q)` a method runs with.
pub fn method_priors(method: Method, family: Family, models: &Models) -> Result<(GpPrior, GpPrior), HarnessError> {
    let missing = |what: &str| HarnessError::Config(format!("{method} needs the {what} artifact"));
    match method {
        Method::SafeOpt | Method::Goose => {
            let f = models.frontier_f.as_ref().ok_or_else(|| missing("frontier_f"))?;
            let q = models.frontier_q.as_ref().ok_or_else(|| missing("frontier_q"))?;
            Ok((GpPrior::vanilla(&f.kernel()?), GpPrior::vanilla(&q.kernel()?)))
        }
        Method::SamboS | Method::SamboG => {
            let f = models.prior_f.as_ref().ok_or_else(|| missing("prior_f"))?;
            let q = models.prior_q.as_ref().ok_or_else(|| missing("prior_q"))?;
            Ok((f.to_gp_prior(), q.to_gp_prior()))
        }
        Method::VanillaSafeOpt | Method::VanillaGoose => {
            let sigma = family.likelihood_std();
            let lq = family.meta_data_spec().constraint_lengthscale;
            Ok((
                GpPrior::vanilla(&KernelConfig::new(0.2, 1.0, sigma)?),
                GpPrior::vanilla(&KernelConfig::new(lq, 1.0, sigma)?),
            ))
        }
    }
}

/// Held-out task `index`, disjoint from the meta-training stream.
pub fn test_task(cfg: &ExperimentConfig, index: usize) -> EnvTask {
    EnvTask::sample(cfg.family, task_seed(derive_seed(cfg.seed, TEST_STREAM), index))
}

fn run_seed(cfg: &ExperimentConfig, task: usize, seed: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(cfg.seed, RUN_STREAM), task as u64), seed as u64)
}

/// Campaign shape: which methods on how many held-out tasks and seeds.
#[derive(Debug, Clone)]
pub struct CampaignSpec {
    pub methods: Vec<Method>,
    pub tasks: usize,
    pub seeds: usize,
    pub iterations: usize,
}

impl CampaignSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            methods: cfg.bo.methods.clone(),
            tasks: cfg.bo.test_tasks,
            seeds: cfg.bo.seeds,
            iterations: cfg.bo.iterations,
        }
    }
}

/// One safe-BO run on held-out task `task_index` with run seed `seed`.
/// Every method sees the same domain and noise stream for a given pair.
#[allow(clippy::too_many_arguments)]
pub fn run_with_priors(
    cfg: &ExperimentConfig,
    scaler: &Standardizer,
    algorithm: sambo::safe_bo::Algorithm,
    priors: (&GpPrior, &GpPrior),
    task_index: usize,
    seed: usize,
    iterations: usize,
    setup: &RunSetup,
) -> Result<RunRecord, SafeBoError> {
    let (task, domain, truth) = setup;
    let bo = BoConfig {
        algorithm,
        iterations,
        alpha: cfg.bo.alpha,
        epsilon: cfg.bo.epsilon,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed(cfg, task_index, seed), 2));
    run_safe_bo(domain, scaler, priors.0, priors.1, &bo, Some(truth), |x| Ok(task.observe(x, &mut rng)))
}

/// Held-out task, its discretized domain and the noise-free values there.
pub type RunSetup = (EnvTask, sambo::safe_bo::DiscreteDomain, TruthTable);

pub fn run_setup(
    cfg: &ExperimentConfig,
    task_index: usize,
    seed: usize,
) -> Result<RunSetup, HarnessError> {
    let task = test_task(cfg, task_index);
    let domain = discretize(
        &task.bounds(),
        cfg.bo.domain_size,
        derive_seed(run_seed(cfg, task_index, seed), 1),
        &task.safe_seeds(),
    )
    .map_err(|source| HarnessError::Run {
        method: cfg.bo.methods[0],
        task: task_index,
        seed,
        source,
    })?;
    let truth = task.truth(&domain.points);
    Ok((task, domain, truth))
}

/// Runs every (method, task, seed) job on the worker pool. Audit failures
/// are recorded per run; other errors abort the campaign.
pub fn campaign(h: &Harness, models: &Models, spec: &CampaignSpec) -> Result<CampaignReport, HarnessError> {
    let cfg = &h.cfg;
    let pairs: Vec<(usize, usize)> = (0..spec.tasks).flat_map(|t| (0..spec.seeds).map(move |s| (t, s))).collect();
    let setups = h.install(|| {
        pairs
            .par_iter()
            .map(|&(t, s)| run_setup(cfg, t, s))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let jobs: Vec<(Method, usize)> = spec
        .methods
        .iter()
        .flat_map(|&m| (0..pairs.len()).map(move |p| (m, p)))
        .collect();
    let results = h.install(|| {
        jobs.par_iter()
            .map(|&(method, p)| {
                let (task, seed) = pairs[p];
                let (pf, pq) = method_priors(method, cfg.family, models)?;
                let res = run_with_priors(
                    cfg,
                    &models.standardizer,
                    method.algorithm(),
                    (&pf, &pq),
                    task,
                    seed,
                    spec.iterations,
                    &setups[p],
                );
                match res {
                    Ok(record) => Ok(RunOutcome::finished(method, task, seed, record)),
                    Err(e @ SafeBoError::Audit { .. }) => Ok(RunOutcome::audit_failed(method, task, seed, e.to_string())),
                    Err(source) => Err(HarnessError::Run {
                        method,
                        task,
                        seed,
                        source,
                    }),
                }
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    Ok(CampaignReport::new(cfg, spec.iterations, results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lengthscale: f64,
    pub variance: f64,
    pub avg_calib: f64,
    pub avg_std: f64,
    /// Largest standardized noise-free constraint value over the queries.
    pub max_q: f64,
    pub cumulative_regret: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub config_hash: String,
    pub lengthscales: Vec<f64>,
    pub variances: Vec<f64>,
    /// Row-major: one row per lengthscale.
    pub cells: Vec<GridCell>,
    pub frontier_q: FrontierArtifact,
    /// The GoOSE run with the frontier-search constraint kernel.
    pub frontier_cell: GridCell,
}

impl GridReport {
    /// Every cell that meets the calibration threshold stayed safe.
    pub fn calibrated_cells_safe(&self) -> bool {
        self.cells
            .iter()
            .filter(|c| c.avg_calib >= self.frontier_q.threshold)
            .all(|c| c.error.is_none() && c.max_q <= 0.0)
    }
}

fn max_true_q(record: &RunRecord, truth: &TruthTable, scaler: &Standardizer) -> f64 {
    record
        .rows
        .iter()
        .map(|r| scaler.apply_q(truth.q[r.index]))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn grid_cell(
    h: &Harness,
    models: &Models,
    datasets: &[TaskDataset],
    setup: &RunSetup,
    lengthscale: f64,
    variance: f64,
) -> Result<GridCell, HarnessError> {
    let cfg = &h.cfg;
    let kq = KernelConfig::new(lengthscale, variance, cfg.family.likelihood_std())?;
    let m = evaluate_params_in(datasets, &kq, None)?;
    let ff = models.frontier_f.as_ref().ok_or_else(|| HarnessError::Config("grid needs frontier_f".into()))?;
    let pf = GpPrior::vanilla(&ff.kernel()?);
    let pq = GpPrior::vanilla(&kq);
    let algorithm = sambo::safe_bo::Algorithm::Goose;
    let res = run_with_priors(cfg, &models.standardizer, algorithm, (&pf, &pq), 0, 0, cfg.grid.iterations, setup);
    let (max_q, cumulative_regret, error) = match res {
        Ok(rec) => (
            max_true_q(&rec, &setup.2, &models.standardizer),
            rec.summary.cumulative_regret.unwrap_or(f64::NAN),
            None,
        ),
        Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
    };
    Ok(GridCell {
        lengthscale,
        variance,
        avg_calib: m.avg_calib,
        avg_std: m.avg_std,
        max_q,
        cumulative_regret,
        error,
    })
}

/// Calibration, sharpness, safety and regret of the constraint model over
/// the configured `(l, nu)` grid; GoOSE runs on held-out task 0, seed 0.
pub fn grid(h: &Harness, corpus: &Corpus, models: &Models) -> Result<GridReport, HarnessError> {
    let cfg = &h.cfg;
    let (_, qdata) = corpus.datasets()?;
    let setup = run_setup(cfg, 0, 0)?;
    let points: Vec<(f64, f64)> = cfg
        .grid
        .lengthscales
        .iter()
        .flat_map(|&l| cfg.grid.variances.iter().map(move |&v| (l, v)))
        .collect();
    let cells = h.install(|| {
        points
            .par_iter()
            .map(|&(l, v)| grid_cell(h, models, &qdata, &setup, l, v))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let fq = models.frontier_q.clone().ok_or_else(|| HarnessError::Config("grid needs frontier_q".into()))?;
    let frontier_cell = grid_cell(h, models, &qdata, &setup, fq.lengthscale, fq.variance)?;
    Ok(GridReport {
        config_hash: h.cfg.hash(),
        lengthscales: cfg.grid.lengthscales.clone(),
        variances: cfg.grid.variances.clone(),
        cells,
        frontier_q: fq,
        frontier_cell,
    })
}

impl GridReport {
    /// `grid.json` plus one matrix CSV per quantity.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        type Getter = fn(&GridCell) -> f64;
        let quantities: [(&str, Getter); 4] = [
            ("calib", |c| c.avg_calib),
            ("avg_std", |c| c.avg_std),
            ("max_q", |c| c.max_q),
            ("cumulative_regret", |c| c.cumulative_regret),
        ];
        let nv = self.variances.len();
        for (name, get) in quantities {
            let mut csv = format!("# config {}\nlengthscale", self.config_hash);
            for v in &self.variances {
                csv.push(',');
                csv.push_str(&fmt_float(*v));
            }
            csv.push('\n');
            for (i, l) in self.lengthscales.iter().enumerate() {
                csv.push_str(&fmt_float(*l));
                for cell in &self.cells[i * nv..(i + 1) * nv] {
                    csv.push(',');
                    csv.push_str(&fmt_float(get(cell)));
                }
                csv.push('\n');
            }
            write_atomic(&dir.join(format!("grid_{name}.csv")), csv.as_bytes())?;
        }
        write_json(&dir.join("grid.json"), self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateRow {
    pub n_tasks: usize,
    pub points_per_task: usize,
    pub median_final_regret: f64,
    pub mean_final_regret: f64,
    pub safety_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateReport {
    pub config_hash: String,
    pub method: Method,
    pub rows: Vec<AblateRow>,
}

impl AblateReport {
    fn cell(&self, n: usize, t: usize) -> Option<&AblateRow> {
        self.rows.iter().find(|r| r.n_tasks == n && r.points_per_task == t)
    }

    /// Regret reduction from the smallest lattice point when moving to the
    /// largest task count and to the largest task length:
    /// `(gain from more tasks, gain from longer tasks)`.
    pub fn doubling_gains(&self) -> Option<(f64, f64)> {
        let n0 = *self.rows.iter().map(|r| &r.n_tasks).min()?;
        let n1 = *self.rows.iter().map(|r| &r.n_tasks).max()?;
        let t0 = *self.rows.iter().map(|r| &r.points_per_task).min()?;
        let t1 = *self.rows.iter().map(|r| &r.points_per_task).max()?;
        let base = self.cell(n0, t0)?.median_final_regret;
        Some((
            base - self.cell(n1, t0)?.median_final_regret,
            base - self.cell(n0, t1)?.median_final_regret,
        ))
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let mut csv = format!(
            "# config {}\nn_tasks,points_per_task,median_final_regret,mean_final_regret,safety_failures\n",
            self.config_hash
        );
        for r in &self.rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n_tasks,
                r.points_per_task,
                fmt_float(r.median_final_regret),
                fmt_float(r.mean_final_regret),
                r.safety_failures
            ));
        }
        write_atomic(&dir.join("ablate.csv"), csv.as_bytes())?;
        write_json(&dir.join("ablate.json"), self)
    }
}

/// Terminal regret over the `(n, T)` lattice. One corpus with the largest
/// counts is collected and sliced; every lattice point reruns frontier
/// search and meta-training on its slice.
pub fn ablate(h: &Harness) -> Result<AblateReport, HarnessError> {
    let cfg = &h.cfg;
    let a = &cfg.ablate;
    let n_max = *a.n_tasks.iter().max().ok_or_else(|| HarnessError::Config("ablate.n_tasks is empty".into()))?;
    let t_max = *a
        .points_per_task
        .iter()
        .max()
        .ok_or_else(|| HarnessError::Config("ablate.points_per_task is empty".into()))?;
    let base = h.command_dir("ablate")?;
    let full_stage = h.corpus_stage().variant(base.join("corpus"), &format!("n{n_max}_t{t_max}"));
    let full = collect(h, &full_stage, n_max, t_max)?;
    let spec = CampaignSpec {
        methods: vec![a.method],
        tasks: cfg.bo.test_tasks,
        seeds: cfg.bo.seeds,
        iterations: cfg.bo.iterations,
    };
    let mut rows = Vec::new();
    for &n in &a.n_tasks {
        for &t in &a.points_per_task {
            let tag = format!("n{n:03}_t{t:04}");
            let dir = base.join(&tag);
            let sub = full.subset(n, t)?;
            let fs_stage = h.frontier_stage().variant(dir.clone(), &tag);
            let meta_stage = h.meta_stage().variant(dir.clone(), &tag);
            let models = prepare(h, (&fs_stage, &meta_stage), &sub, &spec.methods)?;
            let report = campaign(h, &models, &spec)?;
            report.write(&dir.join("run"))?;
            let agg = report.method(a.method).expect("campaign ran the method");
            rows.push(AblateRow {
                n_tasks: n,
                points_per_task: t,
                median_final_regret: agg.median_final_regret,
                mean_final_regret: agg.mean_final_regret,
                safety_failures: agg.safety_failures,
            });
        }
    }
    let report = AblateReport {
        config_hash: h.cfg.hash(),
        method: a.method,
        rows,
    };
    report.write(&base)?;
    Ok(report)
}
