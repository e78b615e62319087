//! Experiment configuration: a profile supplies every default, an optional
//! TOML file overrides any subset of keys.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sambo::env::Family;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

/// Safe-BO method: an acquisition rule plus where the priors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// SafeOpt with the frontier-search kernel parameters.
    SafeOpt,
    /// GoOSE with the frontier-search kernel parameters.
    Goose,
    /// SafeOpt with meta-learned priors.
    SamboS,
    /// GoOSE with meta-learned priors.
    SamboG,
    /// SafeOpt with the conservative collection kernels.
    VanillaSafeOpt,
    /// GoOSE with the conservative collection kernels.
    VanillaGoose,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SafeOpt,
        Method::Goose,
        Method::SamboS,
        Method::SamboG,
        Method::VanillaSafeOpt,
        Method::VanillaGoose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SafeOpt => "safe-opt",
            Method::Goose => "goose",
            Method::SamboS => "sambo-s",
            Method::SamboG => "sambo-g",
            Method::VanillaSafeOpt => "vanilla-safe-opt",
            Method::VanillaGoose => "vanilla-goose",
        }
    }

    pub fn algorithm(self) -> sambo::safe_bo::Algorithm {
        use sambo::safe_bo::Algorithm;
        match self {
            Method::SafeOpt | Method::SamboS | Method::VanillaSafeOpt => Algorithm::SafeOpt,
            Method::Goose | Method::SamboG | Method::VanillaGoose => Algorithm::Goose,
        }
    }

    pub fn needs_meta(self) -> bool {
        matches!(self, Method::SamboS | Method::SamboG)
    }

    pub fn needs_frontier(self) -> bool {
        !matches!(self, Method::VanillaSafeOpt | Method::VanillaGoose)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectSection {
    pub n_tasks: usize,
    pub points_per_task: usize,
    pub domain_size: usize,
    pub alpha: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierSection {
    pub iterations: usize,
    pub lengthscale: [f64; 2],
    pub variance: [f64; 2],
    pub threshold_f: f64,
    pub threshold_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSection {
    pub iterations: usize,
    pub lr: f64,
    pub kl_scale: f64,
    pub measurement_train: usize,
    pub measurement_uniform: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoSection {
    pub methods: Vec<Method>,
    pub iterations: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub domain_size: usize,
    pub test_tasks: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lengthscales: Vec<f64>,
    pub variances: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub n_tasks: Vec<usize>,
    pub points_per_task: Vec<usize>,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub family: Family,
    pub seed: u64,
    pub collect: CollectSection,
    pub frontier: FrontierSection,
    pub meta: MetaSection,
    pub bo: BoSection,
    pub grid: GridSection,
    pub ablate: AblateSection,
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

impl ExperimentConfig {
    pub fn profile(profile: Profile, family: Family) -> Self {
        let spec = family.meta_data_spec();
        let paper = profile == Profile::Paper;
        Self {
            profile,
            family,
            seed: 0,
            collect: CollectSection {
                n_tasks: if paper { spec.n_tasks } else { 10 },
                points_per_task: if paper { spec.points_per_task } else { 50 },
                domain_size: if paper { 40_000 } else { 4000 },
                alpha: 0.99,
                epsilon: 0.2,
            },
            frontier: FrontierSection {
                iterations: 20,
                lengthscale: [0.01, 5.0],
                variance: [1.0, 6.0],
                threshold_f: 0.95,
                threshold_q: 1.0,
            },
            meta: MetaSection {
                iterations: if paper { 5000 } else { 2000 },
                lr: 1e-3,
                kl_scale: 1.0,
                measurement_train: 10,
                measurement_uniform: 10,
            },
            bo: BoSection {
                methods: vec![Method::SafeOpt, Method::Goose, Method::SamboS, Method::SamboG],
                iterations: if paper { 200 } else { 50 },
                alpha: 0.99,
                epsilon: 0.2,
                domain_size: if paper { 40_000 } else { 4000 },
                test_tasks: 4,
                seeds: 5,
            },
            grid: GridSection {
                lengthscales: log_grid(0.05, 5.0, if paper { 12 } else { 6 }),
                variances: log_grid(1.0, 6.0, if paper { 12 } else { 6 }),
                iterations: if paper { 200 } else { 50 },
            },
            ablate: AblateSection {
                n_tasks: vec![10, 20],
                points_per_task: vec![50, 100],
                method: Method::SamboG,
            },
        }
    }

    /// Profile defaults for the family named in `overrides` (or Camelback),
    /// with `overrides` merged on top.
    pub fn resolve(profile: Profile, overrides: Option<&str>) -> Result<Self, HarnessError> {
        let user: toml::Table = match overrides {
            Some(text) => toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        let family = match user.get("family") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| HarnessError::Config("`family` must be a string".into()))?
                .parse::<Family>()
                .map_err(|e| HarnessError::Config(e.to_string()))?,
            None => Family::Camelback,
        };
        let profile = match user.get("profile") {
            Some(v) => Profile::deserialize(v.clone()).map_err(|e| HarnessError::Config(e.to_string()))?,
            None => profile,
        };
        let base = toml::Table::try_from(Self::profile(profile, family)).map_err(|e| HarnessError::Config(e.to_string()))?;
        let merged = merge(base, user);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, profile: Profile) -> Result<Self, HarnessError> {
        let text = path
            .map(|p| std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e)))
            .transpose()?;
        Self::resolve(profile, text.as_deref())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let in_unit = |a: f64| a > 0.0 && a < 1.0;
        if self.collect.n_tasks == 0 || self.collect.points_per_task == 0 || self.collect.domain_size == 0 {
            return bad("collect counts must be positive");
        }
        if !in_unit(self.collect.alpha) || !in_unit(self.bo.alpha) {
            return bad("alpha must lie in (0, 1)");
        }
        let [l0, l1] = self.frontier.lengthscale;
        let [v0, v1] = self.frontier.variance;
        if !(l0 > 0.0 && l0 < l1 && v0 > 0.0 && v0 < v1) {
            return bad("frontier ranges must be positive and increasing");
        }
        if self.bo.domain_size == 0 || self.bo.test_tasks == 0 || self.bo.seeds == 0 {
            return bad("bo counts must be positive");
        }
        if self.bo.methods.is_empty() {
            return bad("bo.methods is empty");
        }
        if self.grid.lengthscales.iter().chain(&self.grid.variances).any(|&v| v <= 0.0) {
            return bad("grid values must be positive");
        }
        if self.meta.lr <= 0.0 || self.meta.measurement_train + self.meta.measurement_uniform == 0 {
            return bad("meta settings invalid");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON encoding of the whole config.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_string(self).expect("config serializes"))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    /// Key of the collected corpus: only the settings it depends on.
    pub fn corpus_key(&self) -> String {
        let json = serde_json::to_string(&(self.family, self.seed, &self.collect)).expect("config serializes");
        sha256_hex(&json)
    }

    pub fn frontier_key(&self) -> String {
        sha256_hex(&(self.corpus_key() + &serde_json::to_string(&self.frontier).expect("config serializes")))
    }

    pub fn meta_key(&self) -> String {
        sha256_hex(&(self.frontier_key() + &serde_json::to_string(&self.meta).expect("config serializes")))
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let inner = std::mem::take(b);
                *b = merge(inner, o);
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
