//! Proxy-contrastive continual learning with experience replay.
//!
//! A small MLP encoder maps features to unit embeddings that are compared
//! against trainable per-class proxies. Training runs over a stream of
//! class-incremental tasks; a reservoir memory supplies replay samples that
//! are chosen at random, by maximal interference (MIR), by minimal
//! interference (IMIR), or by a balanced mix of both.

pub mod analysis;
pub mod encoder;
pub mod error;
pub mod linalg;
pub mod memory;
pub mod retrieval;
pub mod streams;
pub mod trainer;

/// Dense class index, `0..num_classes`.
pub type ClassId = usize;

pub use analysis::MetricsReport;
pub use encoder::{GradientSet, ModelState};
pub use error::{LabError, Result};
pub use linalg::SeededRng;
pub use memory::ReservoirBuffer;
pub use retrieval::{RetrievalStrategy, StrategyKind};
pub use streams::{Sample, SyntheticSpec, Task};
pub use trainer::{run_experiment, AccuracyMatrix, ExperimentResult, TrainConfig};
