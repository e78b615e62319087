//! SafeOpt and GoOSE over a finite domain.
//!
//! Both GP models live in standardized coordinates. The domain is embedded
//! through each prior once per run, so a meta-learned prior costs one network
//! pass per domain point and nothing afterwards.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Standardizer;
use crate::error::GpError;
use crate::gp::{beta_of_alpha, Embedded, GpPrior, Posterior};

/// Inner rounds GoOSE may spend discarding unreachable candidates.
pub const GOOSE_MAX_ROUNDS: usize = 25;

#[derive(Debug, Error)]
pub enum SafeBoError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("safe set is empty: the initial safe points fail the confidence test")]
    EmptySafeSet,
    #[error("iteration {t}: query index {index} was not in the safe set")]
    Audit { t: usize, index: usize },
    #[error("observation at iteration {t} failed: {message}")]
    Oracle { t: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    SafeOpt,
    Goose,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::SafeOpt => write!(f, "safeopt"),
            Algorithm::Goose => write!(f, "goose"),
        }
    }
}

/// Uniform sample of a box with the initial safe points appended verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDomain {
    pub points: Vec<Vec<f64>>,
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
    pub seed_indices: Vec<usize>,
}

pub fn discretize(
    bounds: &[(f64, f64)],
    n: usize,
    seed: u64,
    safe_seeds: &[Vec<f64>],
) -> Result<DiscreteDomain, SafeBoError> {
    if n == 0 {
        return Err(SafeBoError::Config("domain size must be at least 1".into()));
    }
    if bounds.is_empty() || bounds.iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo >= hi) {
        return Err(SafeBoError::Config(format!("invalid bounds {bounds:?}")));
    }
    for s in safe_seeds {
        let inside = s.len() == bounds.len() && s.iter().zip(bounds).all(|(v, (lo, hi))| lo <= v && v <= hi);
        if !inside {
            return Err(SafeBoError::Config(format!("safe seed {s:?} outside bounds")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vec<f64>> = (0..n)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect())
        .collect();
    let seed_indices = (n..n + safe_seeds.len()).collect();
    points.extend(safe_seeds.iter().cloned());
    Ok(DiscreteDomain {
        points,
        bounds: bounds.to_vec(),
        seed,
        seed_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub alpha: f64,
    /// Threshold on the standardized constraint CI width below which a point
    /// can no longer expand the safe set.
    pub epsilon: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Goose,
            iterations: 50,
            alpha: 0.99,
            epsilon: 0.2,
        }
    }
}

/// How a query was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryRule {
    Optimizer,
    Expander,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub index: usize,
    pub rule: QueryRule,
}

/// Sets computed by one GoOSE step, exposed for audits.
#[derive(Debug, Clone, PartialEq)]
pub struct GooseSets {
    pub pessimistic: Vec<bool>,
    pub expanders: Vec<usize>,
    pub optimistic: Vec<bool>,
    pub lipschitz: f64,
}

/// Sets computed by one SafeOpt step.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeOptSets {
    pub safe: Vec<bool>,
    pub optimizers: Vec<usize>,
    /// `(index, g_t)` for every candidate with `g_t > 0`.
    pub expanders: Vec<(usize, usize)>,
}

/// Posterior models of f and q over the discretized domain.
#[derive(Debug, Clone)]
pub struct SafeBoState {
    points: Vec<Vec<f64>>,
    prior_f: GpPrior,
    prior_q: GpPrior,
    emb_f: Vec<Embedded>,
    emb_q: Vec<Embedded>,
    q_jac: Option<Vec<(Vec<f64>, DMatrix<f64>)>>,
    seeds: Vec<usize>,
    beta: f64,
    obs: Vec<usize>,
    y_f: Vec<f64>,
    y_q: Vec<f64>,
    post_f: Posterior,
    post_q: Posterior,
    pred_f: Vec<(f64, f64)>,
    pred_q: Vec<(f64, f64)>,
}

impl SafeBoState {
    /// `points` are in model coordinates; `seeds` index the initial safe set.
    pub fn new(
        points: Vec<Vec<f64>>,
        prior_f: GpPrior,
        prior_q: GpPrior,
        seeds: Vec<usize>,
        alpha: f64,
    ) -> Result<Self, SafeBoError> {
        if points.is_empty() {
            return Err(SafeBoError::Config("empty domain".into()));
        }
        if seeds.is_empty() || seeds.iter().any(|&s| s >= points.len()) {
            return Err(SafeBoError::Config("initial safe set must index the domain".into()));
        }
        let beta = beta_of_alpha(alpha)?;
        let emb_f = prior_f.embed_all(&points)?;
        let emb_q = prior_q.embed_all(&points)?;
        let post_f = Posterior::fit(&prior_f, Vec::new(), &[])?;
        let post_q = Posterior::fit(&prior_q, Vec::new(), &[])?;
        let pred_f = post_f.predict_many(&emb_f);
        let pred_q = post_q.predict_many(&emb_q);
        Ok(Self {
            points,
            prior_f,
            prior_q,
            emb_f,
            emb_q,
            q_jac: None,
            seeds,
            beta,
            obs: Vec::new(),
            y_f: Vec::new(),
            y_q: Vec::new(),
            post_f,
            post_q,
            pred_f,
            pred_q,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }

    pub fn observed(&self) -> &[usize] {
        &self.obs
    }

    /// Posterior `(mean, std)` of the standardized objective at every point.
    pub fn pred_f(&self) -> &[(f64, f64)] {
        &self.pred_f
    }

    pub fn pred_q(&self) -> &[(f64, f64)] {
        &self.pred_q
    }

    pub fn posterior_q(&self) -> &Posterior {
        &self.post_q
    }

    /// Adds one standardized observation and refits both models.
    pub fn observe(&mut self, index: usize, f: f64, q: f64) -> Result<(), SafeBoError> {
        self.obs.push(index);
        self.y_f.push(f);
        self.y_q.push(q);
        let tf = self.obs.iter().map(|&i| self.emb_f[i].clone()).collect();
        let tq = self.obs.iter().map(|&i| self.emb_q[i].clone()).collect();
        self.post_f = Posterior::fit(&self.prior_f, tf, &self.y_f)?;
        self.post_q = Posterior::fit(&self.prior_q, tq, &self.y_q)?;
        self.pred_f = self.post_f.predict_many(&self.emb_f);
        self.pred_q = self.post_q.predict_many(&self.emb_q);
        Ok(())
    }

    fn ucb_q(&self, i: usize) -> f64 {
        let (m, s) = self.pred_q[i];
        m + self.beta * s
    }

    fn lcb_q(&self, i: usize) -> f64 {
        let (m, s) = self.pred_q[i];
        m - self.beta * s
    }

    fn lcb_f(&self, i: usize) -> f64 {
        let (m, s) = self.pred_f[i];
        m - self.beta * s
    }

    fn ucb_f(&self, i: usize) -> f64 {
        let (m, s) = self.pred_f[i];
        m + self.beta * s
    }

    /// Points whose constraint UCB is strictly negative, plus the initial
    /// safe points.
    pub fn safe_set(&self) -> Vec<bool> {
        let mut safe: Vec<bool> = (0..self.len()).map(|i| self.ucb_q(i) < 0.0).collect();
        for &s in &self.seeds {
            safe[s] = true;
        }
        safe
    }

    /// Safe point with the smallest posterior mean of f.
    pub fn best_guess(&self) -> usize {
        let safe = self.safe_set();
        argmin((0..self.len()).filter(|&i| safe[i]), |i| self.pred_f[i].0).unwrap_or(self.seeds[0])
    }

    /// Sup over the domain of the infinity norm of the constraint
    /// posterior-mean gradient.
    pub fn lipschitz_estimate(&mut self) -> Result<f64, SafeBoError> {
        if self.q_jac.is_none() {
            let jac = self
                .points
                .iter()
                .map(|x| self.prior_q.embed_with_jacobian(x).map(|(_, g, j)| (g, j)))
                .collect::<Result<Vec<_>, _>>()?;
            self.q_jac = Some(jac);
        }
        let jac = self.q_jac.as_ref().expect("filled above");
        let mut best: f64 = 0.0;
        for (e, (g, j)) in self.emb_q.iter().zip(jac) {
            let grad = self.post_q.mean_gradient(e, g, j);
            for v in grad {
                best = best.max(v.abs());
            }
        }
        Ok(best)
    }

    fn expander_mask(&self, safe: &[bool], epsilon: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| safe[i] && 2.0 * self.beta * self.pred_q[i].1 > epsilon)
            .collect()
    }

    /// Number of currently unsafe points that the optimistic observation
    /// `lcb_q(x)` at each candidate would certify as safe.
    pub fn safeopt_expansion_counts(&self, safe: &[bool], candidates: &[usize]) -> Vec<usize> {
        // an observation at x can lower the UCB at x' by at most to lcb(x'), so
        // points with lcb >= 0 never flip
        let reachable: Vec<usize> = (0..self.len()).filter(|&j| !safe[j] && self.lcb_q(j) < 0.0).collect();
        if reachable.is_empty() || candidates.is_empty() {
            return vec![0; candidates.len()];
        }
        let kern = self.post_q.kernel();
        let noise_var = self.post_q.noise_std().powi(2);
        let reach_emb: Vec<Embedded> = reachable.iter().map(|&j| self.emb_q[j].clone()).collect();
        let cand_emb: Vec<Embedded> = candidates.iter().map(|&i| self.emb_q[i].clone()).collect();
        let wr = self.post_q.whitened_cross(&reach_emb);
        let wc = self.post_q.whitened_cross(&cand_emb);
        candidates
            .iter()
            .enumerate()
            .map(|(c, &i)| {
                let si = self.pred_q[i].1;
                let s = si * si + noise_var;
                let shift = self.beta * si / s;
                reachable
                    .iter()
                    .enumerate()
                    .filter(|&(r, &j)| {
                        let mut cov = kern.eval(&self.emb_q[j].features, &self.emb_q[i].features);
                        if wr.nrows() > 0 {
                            cov -= wr.column(r).dot(&wc.column(c));
                        }
                        let (mj, sj) = self.pred_q[j];
                        let mean = mj - cov * shift;
                        let var = (sj * sj - cov * cov / s).max(0.0);
                        mean + self.beta * var.sqrt() < 0.0
                    })
                    .count()
            })
            .collect()
    }

    /// SafeOpt: LCB minimizer over the potential optimizers against the
    /// expander unlocking the most points, whichever is more uncertain.
    pub fn safeopt_step(&self, epsilon: f64) -> Result<(Query, SafeOptSets), SafeBoError> {
        let safe = self.safe_set();
        let n = self.len();
        // best observed input: the observation with the lowest objective value
        let dagger = argmin(0..self.obs.len(), |k| self.y_f[k]).map(|k| self.obs[k]);
        let threshold = dagger.map_or(f64::INFINITY, |d| self.ucb_f(d));
        let optimizers: Vec<usize> = (0..n).filter(|&i| safe[i] && self.lcb_f(i) < threshold).collect();
        let candidates = self.expander_mask(&safe, epsilon);
        let counts = self.safeopt_expansion_counts(&safe, &candidates);
        let expanders: Vec<(usize, usize)> = candidates
            .iter()
            .zip(&counts)
            .filter(|(_, &g)| g > 0)
            .map(|(&i, &g)| (i, g))
            .collect();
        let x_opt = argmin(optimizers.iter().copied(), |i| self.lcb_f(i));
        let x_exp = argmin(expanders.iter().copied(), |(_, g)| -(g as f64)).map(|(i, _)| i);
        let width = |i: usize| self.pred_f[i].1.max(self.pred_q[i].1);
        let query = match (x_opt, x_exp) {
            (Some(o), Some(e)) if width(e) > width(o) => Query { index: e, rule: QueryRule::Expander },
            (Some(o), _) => Query { index: o, rule: QueryRule::Optimizer },
            (None, Some(e)) => Query { index: e, rule: QueryRule::Expander },
            (None, None) => {
                let index = argmin((0..n).filter(|&i| safe[i]), |i| -width(i)).ok_or(SafeBoError::EmptySafeSet)?;
                log::debug!("safeopt fallback to max-uncertainty point {index}");
                Query { index, rule: QueryRule::Fallback }
            }
        };
        Ok((
            query,
            SafeOptSets {
                safe,
                optimizers,
                expanders,
            },
        ))
    }

    /// GoOSE: LCB candidate within the optimistic safe set, queried directly
    /// when pessimistically safe, otherwise approached through the nearest
    /// expander that can certify it.
    pub fn goose_step(&mut self, epsilon: f64) -> Result<(Query, GooseSets), SafeBoError> {
        let lipschitz = self.lipschitz_estimate()?;
        let pessimistic = self.safe_set();
        let n = self.len();
        let expanders = self.expander_mask(&pessimistic, epsilon);
        let reaches = |z: usize, x: usize| self.lcb_q(z) + lipschitz * dist(&self.points[z], &self.points[x]) < 0.0;
        let optimistic: Vec<bool> = (0..n)
            .map(|i| pessimistic[i] || expanders.iter().any(|&z| reaches(z, i)))
            .collect();
        let sets = GooseSets {
            pessimistic,
            expanders,
            optimistic,
            lipschitz,
        };
        let mut allowed = sets.optimistic.clone();
        for _ in 0..GOOSE_MAX_ROUNDS {
            let Some(cand) = argmin((0..n).filter(|&i| allowed[i]), |i| self.lcb_f(i)) else {
                break;
            };
            if sets.pessimistic[cand] {
                return Ok((Query { index: cand, rule: QueryRule::Optimizer }, sets));
            }
            let target = &self.points[cand];
            let step = argmin(
                sets.expanders.iter().copied().filter(|&z| reaches(z, cand)),
                |z| dist(&self.points[z], target),
            );
            if let Some(index) = step {
                return Ok((Query { index, rule: QueryRule::Expander }, sets));
            }
            allowed[cand] = false;
        }
        let pool: Vec<usize> = if sets.expanders.is_empty() {
            (0..n).filter(|&i| sets.pessimistic[i]).collect()
        } else {
            sets.expanders.clone()
        };
        let index = argmin(pool.into_iter(), |i| -self.pred_q[i].1).ok_or(SafeBoError::EmptySafeSet)?;
        log::debug!("goose fallback to max-uncertainty point {index}");
        Ok((Query { index, rule: QueryRule::Fallback }, sets))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// First minimizer; NaN keys never win.
fn argmin<T: Copy, I: Iterator<Item = T>>(items: I, key: impl Fn(T) -> f64) -> Option<T> {
    let mut best: Option<(T, f64)> = None;
    for it in items {
        let k = key(it);
        if k.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| k < b) {
            best = Some((it, k));
        }
    }
    best.map(|(t, _)| t)
}

/// Noise-free raw objective and constraint values over a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub f: Vec<f64>,
    pub q: Vec<f64>,
}

impl TruthTable {
    /// Smallest objective value among points satisfying the constraint.
    pub fn safe_optimum(&self) -> Option<f64> {
        self.f
            .iter()
            .zip(&self.q)
            .filter(|(_, &q)| q <= 0.0)
            .map(|(&f, _)| f)
            .min_by(f64::total_cmp)
    }
}

/// Regret of the model's best safe guess, clamped at zero.
pub fn inference_regret(state: &SafeBoState, truth: &TruthTable, f_star: f64) -> f64 {
    let r = truth.f[state.best_guess()] - f_star;
    if r < -1e-12 {
        log::debug!("negative inference regret {r} clamped to 0");
    }
    r.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: usize,
    pub index: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub q: f64,
    pub regret: Option<f64>,
    pub max_q: f64,
    pub rule: Option<QueryRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_regret: Option<f64>,
    pub cumulative_regret: Option<f64>,
    /// Queries whose noise-free constraint is positive; observed values are
    /// used when no truth table is available.
    pub violations: usize,
    pub max_q: f64,
    pub fallbacks: usize,
}

/// One safe-BO run in raw units; `t = 0` rows are the initial safe points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub rows: Vec<RunRow>,
    pub summary: RunSummary,
}

pub const RUN_CSV_VERSION: u32 = 1;

impl RunRecord {
    pub fn csv_header(dim: usize) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend((0..dim).map(|i| format!("x{i}")));
        cols.extend(["f", "q", "regret", "max_q"].map(String::from));
        cols.join(",")
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                let mut cols = vec![r.t.to_string()];
                cols.extend(r.x.iter().map(|v| fmt_float(*v)));
                cols.push(fmt_float(r.f));
                cols.push(fmt_float(r.q));
                cols.push(r.regret.map_or_else(|| "nan".to_string(), fmt_float));
                cols.push(fmt_float(r.max_q));
                cols.join(",")
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let dim = self.rows.first().map_or(0, |r| r.x.len());
        let mut out = format!("# run-csv v{RUN_CSV_VERSION}\n{}\n", Self::csv_header(dim));
        for row in self.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits, enough for a bit-exact reload.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs the configured algorithm for `cfg.iterations` queries after
/// evaluating the initial safe points. `observe` returns noisy raw
/// `(f, q)` at a raw input.
pub fn run_safe_bo<F>(
    domain: &DiscreteDomain,
    scaler: &Standardizer,
    prior_f: &GpPrior,
    prior_q: &GpPrior,
    cfg: &BoConfig,
    truth: Option<&TruthTable>,
    mut observe: F,
) -> Result<RunRecord, SafeBoError>
where
    F: FnMut(&[f64]) -> Result<(f64, f64), String>,
{
    if let Some(tt) = truth {
        if tt.f.len() != domain.points.len() || tt.q.len() != domain.points.len() {
            return Err(SafeBoError::Config("truth table does not match the domain".into()));
        }
    }
    let model_points = domain.points.iter().map(|x| scaler.apply_x(x)).collect();
    let mut state = SafeBoState::new(
        model_points,
        prior_f.clone(),
        prior_q.clone(),
        domain.seed_indices.clone(),
        cfg.alpha,
    )?;
    let f_star = truth.and_then(TruthTable::safe_optimum);
    let mut rows = Vec::with_capacity(cfg.iterations + domain.seed_indices.len());
    let mut max_q = f64::NEG_INFINITY;
    let mut violations = 0;
    let mut fallbacks = 0;

    let mut record = |state: &mut SafeBoState, t: usize, index: usize, rule: Option<QueryRule>, observe: &mut F| {
        let x = domain.points[index].clone();
        let (f, q) = observe(&x).map_err(|message| SafeBoError::Oracle { t, message })?;
        state.observe(index, scaler.apply_f(f), scaler.apply_q(q))?;
        max_q = max_q.max(q);
        let violated = match truth {
            Some(tt) => tt.q[index] > 0.0,
            None => q > 0.0,
        };
        violations += usize::from(violated);
        let regret = match (truth, f_star) {
            (Some(tt), Some(fs)) => Some(inference_regret(state, tt, fs)),
            _ => None,
        };
        rows.push(RunRow {
            t,
            index,
            x,
            f,
            q,
            regret,
            max_q,
            rule,
        });
        Ok::<(), SafeBoError>(())
    };

    for &s in &domain.seed_indices {
        record(&mut state, 0, s, None, &mut observe)?;
    }
    for t in 1..=cfg.iterations {
        let safe = state.safe_set();
        let query = match cfg.algorithm {
            Algorithm::SafeOpt => state.safeopt_step(cfg.epsilon)?.0,
            Algorithm::Goose => state.goose_step(cfg.epsilon)?.0,
        };
        if !safe[query.index] {
            return Err(SafeBoError::Audit { t, index: query.index });
        }
        if query.rule == QueryRule::Fallback {
            fallbacks += 1;
        }
        record(&mut state, t, query.index, Some(query.rule), &mut observe)?;
    }
    let final_regret = rows.last().and_then(|r| r.regret);
    let cumulative_regret = final_regret.map(|_| rows.iter().filter(|r| r.t > 0).filter_map(|r| r.regret).sum());
    Ok(RunRecord {
        algorithm: cfg.algorithm,
        rows,
        summary: RunSummary {
            final_regret,
            cumulative_regret,
            violations,
            max_q,
            fallbacks,
        },
    })
}
