//! Campaign reports: per-run records plus aggregates that are recomputed
//! from them.

use std::path::Path;

use sambo::safe_bo::{fmt_float, RunRecord};
use serde::{Deserialize, Serialize};

use crate::pipeline::write_atomic;
use crate::{ExperimentConfig, HarnessError, Method};

/// z-value of a two-sided 95% normal interval.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub method: Method,
    pub task: usize,
    pub seed: usize,
    pub audit_failure: Option<String>,
    #[serde(skip)]
    pub record: Option<RunRecord>,
}

impl RunOutcome {
    pub fn finished(method: Method, task: usize, seed: usize, record: RunRecord) -> Self {
        Self {
            method,
            task,
            seed,
            audit_failure: None,
            record: Some(record),
        }
    }

    pub fn audit_failed(method: Method, task: usize, seed: usize, message: String) -> Self {
        Self {
            method,
            task,
            seed,
            audit_failure: Some(message),
            record: None,
        }
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.record.as_ref().and_then(|r| r.summary.final_regret)
    }

    pub fn violations(&self) -> usize {
        self.record.as_ref().map_or(0, |r| r.summary.violations)
    }

    /// A query outside the model safe set, or one that violated the true
    /// constraint.
    pub fn safety_failed(&self) -> bool {
        self.audit_failure.is_some() || self.violations() > 0
    }

    pub fn file_name(&self) -> String {
        format!("{}/task{:03}_seed{:03}.csv", self.method, self.task, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub runs: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub median: f64,
    /// Range across runs of the running max of the observed constraint.
    pub max_q_lo: f64,
    pub max_q_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub runs: usize,
    pub median_final_regret: f64,
    pub mean_final_regret: f64,
    pub violations: usize,
    pub safety_failures: usize,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config_hash: String,
    pub family: sambo::env::Family,
    pub iterations: usize,
    pub runs: Vec<RunOutcome>,
    pub aggregates: Vec<MethodAggregate>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = Z95 * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

/// Aggregates for one method over its runs.
pub fn aggregate(method: Method, runs: &[&RunOutcome], iterations: usize) -> MethodAggregate {
    let records: Vec<&RunRecord> = runs.iter().filter_map(|r| r.record.as_ref()).collect();
    let finals: Vec<f64> = runs.iter().filter_map(|r| r.final_regret()).collect();
    let mut curve = Vec::with_capacity(iterations);
    for t in 1..=iterations {
        let rows: Vec<_> = records.iter().filter_map(|r| r.rows.iter().find(|row| row.t == t)).collect();
        let regrets: Vec<f64> = rows.iter().filter_map(|row| row.regret).collect();
        if regrets.is_empty() {
            continue;
        }
        let (mean, ci_lo, ci_hi) = mean_ci(&regrets);
        let qs = rows.iter().map(|row| row.max_q);
        curve.push(CurvePoint {
            t,
            runs: regrets.len(),
            mean,
            ci_lo,
            ci_hi,
            median: median(&regrets),
            max_q_lo: qs.clone().fold(f64::INFINITY, f64::min),
            max_q_hi: qs.fold(f64::NEG_INFINITY, f64::max),
        });
    }
    MethodAggregate {
        method,
        runs: runs.len(),
        median_final_regret: median(&finals),
        mean_final_regret: if finals.is_empty() {
            f64::NAN
        } else {
            finals.iter().sum::<f64>() / finals.len() as f64
        },
        violations: runs.iter().map(|r| r.violations()).sum(),
        safety_failures: runs.iter().filter(|r| r.safety_failed()).count(),
        curve,
    }
}

impl CampaignReport {
    pub fn new(cfg: &ExperimentConfig, iterations: usize, runs: Vec<RunOutcome>) -> Self {
        let mut methods: Vec<Method> = Vec::new();
        for r in &runs {
            if !methods.contains(&r.method) {
                methods.push(r.method);
            }
        }
        let aggregates = methods
            .iter()
            .map(|&m| {
                let mine: Vec<&RunOutcome> = runs.iter().filter(|r| r.method == m).collect();
                aggregate(m, &mine, iterations)
            })
            .collect();
        Self {
            config_hash: cfg.hash(),
            family: cfg.family,
            iterations,
            runs,
            aggregates,
        }
    }

    pub fn method(&self, m: Method) -> Option<&MethodAggregate> {
        self.aggregates.iter().find(|a| a.method == m)
    }

    pub fn safety_failures(&self) -> usize {
        self.runs.iter().filter(|r| r.safety_failed()).count()
    }

    /// Paired comparison on final regret: `(a strictly better, pairs)`.
    pub fn paired_wins(&self, a: Method, b: Method) -> (usize, usize) {
        let mut wins = 0;
        let mut total = 0;
        for ra in self.runs.iter().filter(|r| r.method == a) {
            let rb = self
                .runs
                .iter()
                .find(|r| r.method == b && r.task == ra.task && r.seed == ra.seed);
            if let (Some(x), Some(y)) = (ra.final_regret(), rb.and_then(RunOutcome::final_regret)) {
                total += 1;
                if x < y {
                    wins += 1;
                }
            }
        }
        (wins, total)
    }

    /// Writes `report.json`, one CSV per run, per-method curves and a run
    /// summary table.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let header = format!("# config {}\n", self.config_hash);
        for r in &self.runs {
            if let Some(rec) = &r.record {
                let body = header.clone() + &rec.to_csv();
                write_atomic(&dir.join("runs").join(r.file_name()), body.as_bytes())?;
            }
        }
        for agg in &self.aggregates {
            let mut csv = header.clone() + "t,runs,mean_regret,ci_lo,ci_hi,median_regret,max_q_lo,max_q_hi\n";
            for p in &agg.curve {
                let cols = [
                    p.t.to_string(),
                    p.runs.to_string(),
                    fmt_float(p.mean),
                    fmt_float(p.ci_lo),
                    fmt_float(p.ci_hi),
                    fmt_float(p.median),
                    fmt_float(p.max_q_lo),
                    fmt_float(p.max_q_hi),
                ];
                csv.push_str(&cols.join(","));
                csv.push('\n');
            }
            write_atomic(&dir.join("curves").join(format!("{}.csv", agg.method)), csv.as_bytes())?;
        }
        let mut csv = header + "method,task,seed,final_regret,cumulative_regret,violations,max_q,fallbacks,audit_failure\n";
        for r in &self.runs {
            let s = r.record.as_ref().map(|x| &x.summary);
            let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), fmt_float);
            let cols = [
                r.method.to_string(),
                r.task.to_string(),
                r.seed.to_string(),
                opt(s.and_then(|s| s.final_regret)),
                opt(s.and_then(|s| s.cumulative_regret)),
                s.map_or(0, |s| s.violations).to_string(),
                opt(s.map(|s| s.max_q)),
                s.map_or(0, |s| s.fallbacks).to_string(),
                r.audit_failure.clone().unwrap_or_default().replace(',', ";"),
            ];
            csv.push_str(&cols.join(","));
            csv.push('\n');
        }
        write_atomic(&dir.join("summary.csv"), csv.as_bytes())?;
        let json = serde_json::to_string_pretty(self).expect("report serializes") + "\n";
        write_atomic(&dir.join("report.json"), json.as_bytes())
    }
}
