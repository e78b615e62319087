//! On-disk meta-data corpus: one file per task, a JSON header line followed
//! by CSV rows `x0,..,f,q`, plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CollectedTask, EnvError, EnvTask, Family, Standardizer};
use crate::safe_bo::fmt_float;

pub const CORPUS_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHeader {
    pub format_version: u32,
    pub family: Family,
    pub corpus_seed: u64,
    pub task_index: usize,
    pub task: EnvTask,
    pub standardizer: Standardizer,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub family: Family,
    pub corpus_seed: u64,
    pub n_tasks: usize,
    pub points_per_task: usize,
    pub files: Vec<String>,
    pub failed: Vec<String>,
    pub standardizer: Standardizer,
    pub config_hash: String,
}

pub fn task_file_name(index: usize) -> String {
    format!("task_{index:03}.csv")
}

pub fn write_task(path: &Path, header: &TaskHeader, task: &CollectedTask) -> Result<(), EnvError> {
    let dim = task.x.first().map_or(0, Vec::len);
    let mut out = serde_json::to_string(header)?;
    out.push('\n');
    let mut cols: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    cols.push("f".into());
    cols.push("q".into());
    out.push_str(&cols.join(","));
    out.push('\n');
    for ((x, f), q) in task.x.iter().zip(&task.f).zip(&task.q) {
        let mut row: Vec<String> = x.iter().map(|v| fmt_float(*v)).collect();
        row.push(fmt_float(*f));
        row.push(fmt_float(*q));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_task(path: &Path) -> Result<(TaskHeader, CollectedTask), EnvError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |msg: &str| EnvError::Corpus(format!("{}: {msg}", path.display()));
    let header: TaskHeader = serde_json::from_str(lines.next().ok_or_else(|| bad("empty file"))?)?;
    if header.format_version != CORPUS_VERSION {
        return Err(bad(&format!("unsupported format version {}", header.format_version)));
    }
    let cols = lines.next().ok_or_else(|| bad("missing column header"))?.split(',').count();
    if cols < 3 {
        return Err(bad("need at least one input column"));
    }
    let mut task = CollectedTask {
        index: header.task_index,
        task: header.task.clone(),
        x: Vec::new(),
        f: Vec::new(),
        q: Vec::new(),
    };
    for (n, line) in lines.enumerate() {
        let vals = line
            .split(',')
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(&format!("row {n}: {e}")))?;
        if vals.len() != cols {
            return Err(bad(&format!("row {n}: expected {cols} columns, got {}", vals.len())));
        }
        task.x.push(vals[..cols - 2].to_vec());
        task.f.push(vals[cols - 2]);
        task.q.push(vals[cols - 1]);
    }
    Ok((header, task))
}

/// Writes every task file and the manifest into `dir`; `failed` lists the
/// tasks whose collection aborted.
#[allow(clippy::too_many_arguments)]
pub fn write_corpus(
    dir: &Path,
    family: Family,
    corpus_seed: u64,
    points_per_task: usize,
    tasks: &[CollectedTask],
    standardizer: &Standardizer,
    config_hash: &str,
    failed: &[String],
) -> Result<Manifest, EnvError> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(tasks.len());
    for t in tasks {
        let name = task_file_name(t.index);
        let header = TaskHeader {
            format_version: CORPUS_VERSION,
            family,
            corpus_seed,
            task_index: t.index,
            task: t.task.clone(),
            standardizer: standardizer.clone(),
            config_hash: config_hash.to_string(),
        };
        write_task(&dir.join(&name), &header, t)?;
        files.push(name);
    }
    let manifest = Manifest {
        format_version: CORPUS_VERSION,
        family,
        corpus_seed,
        n_tasks: tasks.len(),
        points_per_task,
        files,
        failed: failed.to_vec(),
        standardizer: standardizer.clone(),
        config_hash: config_hash.to_string(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_corpus(dir: &Path) -> Result<(Manifest, Vec<CollectedTask>), EnvError> {
    let manifest_path: PathBuf = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format_version != CORPUS_VERSION {
        return Err(EnvError::Corpus(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    let tasks = manifest
        .files
        .iter()
        .map(|name| read_task(&dir.join(name)).map(|(_, t)| t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, tasks))
}
