//! Experiment runner behind the `replaylab` binary: single runs, ratio and
//! seed sweeps, synthetic data generation and report assembly.

pub mod config;
pub mod output;
pub mod sweep;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use replaylab::run_experiment;
use replaylab::streams::{write_csv_file, SyntheticSpec};

use config::{ExperimentConfig, SCHEMA_VERSION};
use output::{
    output_path, rel, run_fingerprint, write_run, DumpOptions, Manifest, RunEntry, METRICS,
};

pub use sweep::{cmd_sweep, parse_ratios, Ratio, SweepOptions};

/// Parses `"0,1,2"`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds = s
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<u64>()
                .with_context(|| format!("bad seed `{x}`"))
        })
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        bail!("empty seed list");
    }
    Ok(seeds)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub dumps: DumpOptions,
}

/// One run per seed, each in `seed_<n>/`, plus a manifest at the top.
pub fn cmd_run(config_path: &Path, opts: &RunOptions) -> Result<PathBuf> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seeds) = &opts.seeds {
        config.seeds = seeds.clone();
    }
    let out = output_path(&config, opts.out.as_deref());
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;

    let mut runs = Vec::new();
    let mut files = Vec::new();
    for &seed in &config.seeds {
        let train = config.train_config(seed);
        let stream = config.build_stream(seed)?;
        log::info!("run seed {seed} ({} tasks)", stream.len());
        let result = run_experiment(&stream, &train)?;
        let label = format!("seed_{seed}");
        let written = write_run(&out.join(&label), &result, config.diagnostics, opts.dumps)?;
        let written: Vec<String> = written.iter().map(|f| rel(&[&label, f])).collect();
        files.extend(written.iter().cloned());
        runs.push(RunEntry {
            label: label.clone(),
            seed,
            strategy: train.strategy.kind.to_string(),
            n1: train.strategy.n1,
            n2: train.strategy.n2,
            ratio: None,
            fingerprint: run_fingerprint(&config, &train),
            dir: label,
            files: written,
        });
    }
    Manifest {
        schema_version: SCHEMA_VERSION,
        command: "run".into(),
        runs,
        files,
    }
    .write(&out)?;
    Ok(out)
}

/// Writes the synthetic stream described by the JSON spec at `spec_path`.
pub fn cmd_gen_data(spec_path: Option<&Path>, out: &Path) -> Result<()> {
    let spec: SyntheticSpec = match spec_path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    let tasks = replaylab::streams::generate_synthetic(&spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_csv_file(&tasks, out).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportRow<'a> {
    source: String,
    run: &'a str,
    seed: u64,
    strategy: &'a str,
    n1: usize,
    n2: usize,
    ratio: &'a str,
    fingerprint: &'a str,
    acc: f64,
    fgt: Option<f64>,
    arr: Option<f64>,
}

/// One CSV row per run found in the manifests of `dirs`.
pub fn cmd_report<W: Write>(dirs: &[PathBuf], out: W) -> Result<()> {
    if dirs.is_empty() {
        bail!("no run directories given");
    }
    let mut w = csv_writer(out);
    for dir in dirs {
        let manifest = Manifest::read(dir)?;
        for run in &manifest.runs {
            let path = dir.join(&run.dir).join(METRICS);
            let text = fs::read_to_string(&path)
                .with_context(|| format!("{}: missing {}", dir.display(), path.display()))?;
            let m: serde_json::Value = serde_json::from_str(&text)
                .with_context(|| format!("{}: corrupted {}", dir.display(), path.display()))?;
            let field = |k: &str| m.get(k).and_then(serde_json::Value::as_f64);
            let acc = field("acc")
                .with_context(|| format!("{}: {} has no acc", dir.display(), path.display()))?;
            w.serialize(ReportRow {
                source: dir.display().to_string(),
                run: &run.label,
                seed: run.seed,
                strategy: &run.strategy,
                n1: run.n1,
                n2: run.n2,
                ratio: run.ratio.as_deref().unwrap_or(""),
                fingerprint: &run.fingerprint,
                acc,
                fgt: field("fgt"),
                arr: field("arr"),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::Writer::from_writer(out)
}

/// Reads a metrics file back.
pub fn read_metrics(path: &Path) -> Result<(f64, Option<f64>, Option<f64>)> {
    let text = fs::read_to_string(path)?;
    let m: serde_json::Value = serde_json::from_str(&text)?;
    let f = |k: &str| m.get(k).and_then(serde_json::Value::as_f64);
    Ok((f("acc").context("metrics without acc")?, f("fgt"), f("arr")))
}
