//! Per-run result files and the manifest that lists them.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use replaylab::analysis::{proxy_drift, write_alignment_csv, write_diversity_csv, MetricsReport};
use replaylab::retrieval::write_retrieval_csv;
use replaylab::{ExperimentResult, ModelState};

use crate::config::{Diagnostics, ExperimentConfig};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.json";

/// Optional dumps requested on the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct DumpOptions {
    pub model: bool,
    pub buffer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub label: String,
    pub seed: u64,
    pub strategy: String,
    pub n1: usize,
    pub n2: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<String>,
    pub fingerprint: String,
    /// Run directory relative to the manifest.
    pub dir: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub runs: Vec<RunEntry>,
    /// Every output besides the manifest, relative to it.
    pub files: Vec<String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .with_context(|| format!("{}: no readable manifest", dir.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("{}: corrupted manifest", dir.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST), |w| {
            serde_json::to_writer_pretty(&mut *w, self)?;
            writeln!(w)?;
            Ok(())
        })
    }
}

/// Writes through a temporary sibling and renames, so a file either exists
/// complete or not at all.
pub fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file =
            File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn to_json_file(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// `{boundary: {class: [floats]}}`; boundary 0 is the initialization.
pub fn proxies_json(result: &ExperimentResult) -> Value {
    let mut out = BTreeMap::new();
    for s in result.drift_snapshots() {
        let classes: BTreeMap<String, &Vec<f64>> =
            s.proxies.iter().map(|(c, p)| (c.to_string(), p)).collect();
        out.insert(s.boundary, json!(classes));
    }
    json!(out)
}

pub fn model_json(state: &ModelState) -> Value {
    let layers: Vec<Value> = state
        .encoder
        .layers
        .iter()
        .map(|l| json!({"weight": l.weight.to_rows(), "bias": l.bias}))
        .collect();
    json!({
        "gamma": state.gamma(),
        "layers": layers,
        "proxies": state.proxy_bank.proxies.to_rows(),
        "seen": state.proxy_bank.seen_classes(),
    })
}

/// Writes all files of one run into `dir` and returns their names. The
/// metrics file is written last and marks the run as complete.
pub fn write_run(
    dir: &Path,
    result: &ExperimentResult,
    diagnostics: Diagnostics,
    dumps: DumpOptions,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut files = Vec::new();
    let mut csv_file = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
        write_atomic(&dir.join(name), |w| f(w))?;
        files.push(name.to_string());
        Ok(())
    };
    csv_file("accuracy.csv", &|w| Ok(result.accuracy.write_csv(w)?))?;
    if diagnostics.drift {
        let report = proxy_drift(&result.drift_snapshots())?;
        csv_file("drift.csv", &|w| Ok(report.write_csv(w)?))?;
    }
    if diagnostics.diversity {
        csv_file("diversity.csv", &|w| {
            Ok(write_diversity_csv(&result.diversity, w)?)
        })?;
    }
    if diagnostics.alignment {
        csv_file("alignment.csv", &|w| {
            Ok(write_alignment_csv(&result.alignment, w)?)
        })?;
    }
    if diagnostics.retrieval_log {
        csv_file("retrieval.csv", &|w| {
            Ok(write_retrieval_csv(&result.retrieval_log, w)?)
        })?;
    }
    if dumps.buffer {
        csv_file("buffer.csv", &|w| Ok(result.final_buffer.write_csv(w)?))?;
    }
    to_json_file(&dir.join("proxies.json"), &proxies_json(result))?;
    files.push("proxies.json".into());
    if dumps.model {
        to_json_file(&dir.join("model.json"), &model_json(&result.final_state))?;
        files.push("model.json".into());
    }
    let metrics = MetricsReport::from_matrix(&result.accuracy)?;
    to_json_file(&dir.join(METRICS), &metrics)?;
    files.push(METRICS.into());
    Ok(files)
}

/// Names `write_run` produces for these options, in the same order.
pub fn expected_files(diagnostics: Diagnostics, dumps: DumpOptions) -> Vec<String> {
    let mut v = vec!["accuracy.csv"];
    for (on, name) in [
        (diagnostics.drift, "drift.csv"),
        (diagnostics.diversity, "diversity.csv"),
        (diagnostics.alignment, "alignment.csv"),
        (diagnostics.retrieval_log, "retrieval.csv"),
        (dumps.buffer, "buffer.csv"),
    ] {
        if on {
            v.push(name);
        }
    }
    v.push("proxies.json");
    if dumps.model {
        v.push("model.json");
    }
    v.push(METRICS);
    v.into_iter().map(String::from).collect()
}

/// Relative path with forward slashes.
pub fn rel(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join("/")
}

/// Fingerprint of the configuration one run actually used.
pub fn run_fingerprint(config: &ExperimentConfig, train: &replaylab::TrainConfig) -> String {
    let mut c = config.clone();
    c.train = train.clone();
    c.seeds = vec![train.seed];
    c.fingerprint()
}

pub fn output_path(config: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.clone())
}
