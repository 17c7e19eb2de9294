//! Ratio × seed sweeps, run in parallel and restartable.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use replaylab::analysis::median;
use replaylab::retrieval::ratio_to_counts;
use replaylab::{run_experiment, RetrievalStrategy};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::output::{
    expected_files, output_path, rel, run_fingerprint, write_atomic, write_run, DumpOptions,
    Manifest, RunEntry, METRICS,
};
use crate::{csv_writer, read_metrics};

/// An MIR:IMIR split of the replay budget (parts of 10), or random retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ratio {
    Split { mir: u32, imir: u32 },
    Random,
}

impl Ratio {
    pub const TABLE: [Ratio; 6] = [
        Ratio::Split { mir: 10, imir: 0 },
        Ratio::Split { mir: 7, imir: 3 },
        Ratio::Split { mir: 5, imir: 5 },
        Ratio::Split { mir: 3, imir: 7 },
        Ratio::Split { mir: 0, imir: 10 },
        Ratio::Random,
    ];

    /// Strategy with the budget and pool size of `base`.
    pub fn strategy(self, base: &RetrievalStrategy) -> Result<RetrievalStrategy> {
        let k = base.replay_budget;
        let pool = base.pool_size;
        Ok(match self {
            Ratio::Random => RetrievalStrategy::random(k),
            Ratio::Split { mir: 10, .. } => RetrievalStrategy::mir(k, pool),
            Ratio::Split { imir: 10, .. } => RetrievalStrategy::imir(k, pool),
            Ratio::Split { mir, imir } => {
                let (n1, n2) = ratio_to_counts(k, mir, imir)?;
                RetrievalStrategy::balanced(n1, n2, pool)
            }
        })
    }

    /// Directory-safe form, e.g. `7-3`.
    pub fn slug(self) -> String {
        match self {
            Ratio::Split { mir, imir } => format!("{mir}-{imir}"),
            Ratio::Random => "random".into(),
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Split { mir, imir } => write!(f, "{mir}:{imir}"),
            Ratio::Random => f.write_str("random"),
        }
    }
}

impl FromStr for Ratio {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("random") {
            return Ok(Ratio::Random);
        }
        let (a, b) = s
            .split_once(':')
            .with_context(|| format!("ratio `{s}` is neither `a:b` nor `random`"))?;
        let mir: u32 = a
            .trim()
            .parse()
            .with_context(|| format!("bad ratio `{s}`"))?;
        let imir: u32 = b
            .trim()
            .parse()
            .with_context(|| format!("bad ratio `{s}`"))?;
        if mir + imir != 10 {
            bail!("ratio `{s}` does not sum to 10");
        }
        Ok(Ratio::Split { mir, imir })
    }
}

/// Parses `"10:0,5:5,random"`; duplicates are rejected.
pub fn parse_ratios(s: &str) -> Result<Vec<Ratio>> {
    let mut out: Vec<Ratio> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let r: Ratio = part.parse()?;
        if out.contains(&r) {
            bail!("ratio {r} listed twice");
        }
        out.push(r);
    }
    if out.is_empty() {
        bail!("ratio list is empty");
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    /// Defaults to the full table when absent.
    pub ratios: Option<Vec<Ratio>>,
    /// Worker threads; all available cores when absent.
    pub jobs: Option<usize>,
    pub dumps: DumpOptions,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub ratio: Ratio,
    pub seed: u64,
    pub acc: f64,
    pub fgt: Option<f64>,
    pub arr: Option<f64>,
    pub reused: bool,
    entry: RunEntry,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub out: PathBuf,
    pub cells: Vec<CellResult>,
}

impl SweepOutcome {
    pub fn ran(&self) -> usize {
        self.cells.iter().filter(|c| !c.reused).count()
    }

    pub fn reused(&self) -> usize {
        self.cells.iter().filter(|c| c.reused).count()
    }
}

fn run_cell(
    config: &ExperimentConfig,
    out: &Path,
    ratio: Ratio,
    seed: u64,
    dumps: DumpOptions,
) -> Result<CellResult> {
    let mut train = config.train_config(seed);
    train.strategy = ratio.strategy(&config.train.strategy)?;
    let dir_rel = rel(&[&format!("ratio_{}", ratio.slug()), &format!("seed_{seed}")]);
    let dir = out.join(&dir_rel);
    let expected = expected_files(config.diagnostics, dumps);

    let complete = expected.iter().all(|f| dir.join(f).is_file());
    let (metrics, reused) = match complete.then(|| read_metrics(&dir.join(METRICS))) {
        Some(Ok(m)) => {
            log::info!("ratio {ratio} seed {seed}: reusing {}", dir.display());
            (m, true)
        }
        _ => {
            log::info!("ratio {ratio} seed {seed}: running");
            let stream = config.build_stream(seed)?;
            let result = run_experiment(&stream, &train)?;
            write_run(&dir, &result, config.diagnostics, dumps)?;
            (read_metrics(&dir.join(METRICS))?, false)
        }
    };
    let entry = RunEntry {
        label: dir_rel.clone(),
        seed,
        strategy: train.strategy.kind.to_string(),
        n1: train.strategy.n1,
        n2: train.strategy.n2,
        ratio: Some(ratio.to_string()),
        fingerprint: run_fingerprint(config, &train),
        files: expected.iter().map(|f| rel(&[&dir_rel, f])).collect(),
        dir: dir_rel,
    };
    Ok(CellResult {
        ratio,
        seed,
        acc: metrics.0,
        fgt: metrics.1,
        arr: metrics.2,
        reused,
        entry,
    })
}

#[derive(Serialize)]
struct SweepRow {
    ratio: String,
    seed: u64,
    acc: f64,
    fgt: Option<f64>,
    arr: Option<f64>,
}

#[derive(Serialize)]
struct SummaryRow {
    ratio: String,
    runs: usize,
    median_acc: f64,
    median_fgt: Option<f64>,
    median_arr: Option<f64>,
}

/// Runs every (ratio, seed) cell not already complete on disk and writes
/// `sweep.csv`, `sweep_summary.csv` and the manifest.
pub fn cmd_sweep(config_path: &Path, opts: &SweepOptions) -> Result<SweepOutcome> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seeds) = &opts.seeds {
        config.seeds = seeds.clone();
    }
    let ratios = opts.ratios.clone().unwrap_or_else(|| Ratio::TABLE.to_vec());
    if ratios.is_empty() {
        bail!("ratio list is empty");
    }
    for (i, r) in ratios.iter().enumerate() {
        if ratios[..i].contains(r) {
            bail!("ratio {r} listed twice");
        }
        r.strategy(&config.train.strategy)?.validate()?;
    }
    let out = output_path(&config, opts.out.as_deref());
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;

    let cells: Vec<(Ratio, u64)> = ratios
        .iter()
        .flat_map(|&r| config.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        if j == 0 {
            bail!("--jobs must be positive");
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build()?;
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(r, s)| run_cell(&config, &out, r, s, opts.dumps))
            .collect::<Result<Vec<_>>>()
    })?;

    write_atomic(&out.join("sweep.csv"), |w| {
        let mut c = csv_writer(w);
        for r in &results {
            c.serialize(SweepRow {
                ratio: r.ratio.to_string(),
                seed: r.seed,
                acc: r.acc,
                fgt: r.fgt,
                arr: r.arr,
            })?;
        }
        c.flush()?;
        Ok(())
    })?;
    write_atomic(&out.join("sweep_summary.csv"), |w| {
        let mut c = csv_writer(w);
        for &ratio in &ratios {
            let mine: Vec<&CellResult> = results.iter().filter(|r| r.ratio == ratio).collect();
            let col = |f: &dyn Fn(&CellResult) -> Option<f64>| -> Option<f64> {
                let v: Vec<f64> = mine.iter().filter_map(|r| f(r)).collect();
                median(&v)
            };
            c.serialize(SummaryRow {
                ratio: ratio.to_string(),
                runs: mine.len(),
                median_acc: col(&|r| Some(r.acc)).expect("every ratio has runs"),
                median_fgt: col(&|r| r.fgt),
                median_arr: col(&|r| r.arr),
            })?;
        }
        c.flush()?;
        Ok(())
    })?;

    let mut files: Vec<String> = results.iter().flat_map(|r| r.entry.files.clone()).collect();
    files.push("sweep.csv".into());
    files.push("sweep_summary.csv".into());
    Manifest {
        schema_version: SCHEMA_VERSION,
        command: "sweep".into(),
        runs: results.iter().map(|r| r.entry.clone()).collect(),
        files,
    }
    .write(&out)?;
    Ok(SweepOutcome {
        out,
        cells: results,
    })
}
