//! Experiment configuration file (JSON, versioned).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use replaylab::streams::{generate_synthetic, load_csv_file, SyntheticSpec, Task};
use replaylab::{ClassId, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StreamConfig {
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        /// Add the run seed to the stream seed so every run sees a fresh draw.
        #[serde(default)]
        vary_with_seed: bool,
    },
    Csv {
        path: PathBuf,
        /// Class lists, one per task, in training order.
        partition: Vec<Vec<ClassId>>,
    },
}

/// Which optional diagnostics each run writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Diagnostics {
    pub drift: bool,
    pub diversity: bool,
    pub alignment: bool,
    pub retrieval_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub stream: StreamConfig,
    /// `train.seed`, `train.diagnostics` and `train.log_retrieval` are set
    /// per run from `seeds` and `diagnostics`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    /// Parses and validates `path`; relative paths inside the file are
    /// resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let StreamConfig::Csv { path: p, .. } = &mut cfg.stream {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            );
        }
        if self.seeds.is_empty() {
            bail!("seed list is empty");
        }
        match &self.stream {
            StreamConfig::Synthetic { spec, .. } => spec.validate()?,
            StreamConfig::Csv { path, partition } => {
                if !path.is_file() {
                    bail!("stream file {} does not exist", path.display());
                }
                if partition.is_empty() || partition.iter().any(|t| t.is_empty()) {
                    bail!("partition needs at least one non-empty task");
                }
            }
        }
        self.train.validate()?;
        Ok(())
    }

    /// Training configuration for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            diagnostics: self.diagnostics.diversity || self.diagnostics.alignment,
            log_retrieval: self.diagnostics.retrieval_log,
            ..self.train.clone()
        }
    }

    pub fn build_stream(&self, seed: u64) -> Result<Vec<Task>> {
        match &self.stream {
            StreamConfig::Synthetic {
                spec,
                vary_with_seed,
            } => {
                let mut spec = spec.clone();
                if *vary_with_seed {
                    spec.seed = spec.seed.wrapping_add(seed);
                }
                Ok(generate_synthetic(&spec)?)
            }
            StreamConfig::Csv { path, partition } => {
                let mut map = BTreeMap::new();
                for (t, classes) in partition.iter().enumerate() {
                    for &c in classes {
                        if map.insert(c, t).is_some() {
                            bail!("class {c} appears in more than one task");
                        }
                    }
                }
                load_csv_file(path, &map).with_context(|| format!("loading {}", path.display()))
            }
        }
    }

    /// SHA-256 over the canonical JSON of everything except the output
    /// directory.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
