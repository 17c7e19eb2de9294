//! The continual-learning loop: virtual update, retrieval, joint step on
//! current plus replayed data, memory update, and per-task evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    distance_to_proxies, gradient_alignment, inner_distance, AlignmentRecord, DiversityRecord,
    ProxySnapshot,
};
use crate::encoder::{ModelState, DEFAULT_GAMMA};
use crate::error::{LabError, Result};
use crate::linalg::SeededRng;
use crate::memory::ReservoirBuffer;
use crate::retrieval::{
    select, Pick, RetrievalLogEntry, RetrievalStrategy, StepContext, StrategyKind,
};
use crate::streams::{validate_stream, Labeled, Sample, Task};
use crate::ClassId;

fn default_alpha() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    10
}
fn default_capacity() -> usize {
    200
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_eval_batch() -> usize {
    128
}
fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_embedding() -> usize {
    16
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_epochs")]
    pub epochs_per_task: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub strategy: RetrievalStrategy,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Chunk size for evaluation; has no effect on results.
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_embedding")]
    pub embedding_dim: usize,
    /// Record diversity and gradient-alignment diagnostics for every replay.
    #[serde(default)]
    pub diagnostics: bool,
    /// Keep the per-step retrieval log in the result.
    #[serde(default = "default_true")]
    pub log_retrieval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            epochs_per_task: default_epochs(),
            batch_size: default_batch_size(),
            strategy: RetrievalStrategy::default(),
            buffer_capacity: default_capacity(),
            gamma: default_gamma(),
            seed: 0,
            eval_batch_size: default_eval_batch(),
            hidden_dims: default_hidden(),
            embedding_dim: default_embedding(),
            diagnostics: false,
            log_retrieval: true,
        }
    }
}

impl TrainConfig {
    /// Single pass over each task.
    pub fn online() -> Self {
        Self {
            epochs_per_task: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(LabError::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(LabError::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        for (name, v) in [
            ("epochs_per_task", self.epochs_per_task),
            ("batch_size", self.batch_size),
            ("eval_batch_size", self.eval_batch_size),
            ("embedding_dim", self.embedding_dim),
        ] {
            if v == 0 {
                return Err(LabError::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_dims.contains(&0) {
            return Err(LabError::Config(
                "hidden layer widths must be positive".into(),
            ));
        }
        self.strategy.validate()
    }
}

/// `A[i][t]` for `i >= t`, filled one row per finished task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyMatrix {
    num_tasks: usize,
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(num_tasks: usize) -> Self {
        Self {
            num_tasks,
            rows: Vec::with_capacity(num_tasks),
        }
    }

    /// Complete matrix from its lower-triangular rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let i = self.rows.len();
        if i >= self.num_tasks {
            return Err(LabError::State(format!(
                "matrix already has {} rows",
                self.num_tasks
            )));
        }
        if row.len() != i + 1 {
            return Err(LabError::Dimension {
                expected: i + 1,
                got: row.len(),
            });
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(LabError::Config(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn filled_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.num_tasks
    }

    pub fn get(&self, i: usize, t: usize) -> Option<f64> {
        self.rows.get(i).and_then(|r| r.get(t)).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Rows are checkpoints, columns tasks; cells with `i < t` are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| LabError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["after_task".to_string()];
        header.extend((0..self.num_tasks).map(|t| format!("task_{t}")));
        w.write_record(&header).map_err(io)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(
                (0..self.num_tasks).map(|t| r.get(t).map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What one training step produced besides the parameter update.
#[derive(Debug, Clone, Default)]
pub struct StepOutcome {
    pub log: Option<RetrievalLogEntry>,
    pub replayed: usize,
    pub diversity: Option<DiversityRecord>,
    pub alignment: Vec<AlignmentRecord>,
}

fn distinct_labels<'a, S: Labeled + 'a>(samples: impl IntoIterator<Item = &'a S>) -> Vec<ClassId> {
    samples
        .into_iter()
        .map(|s| s.label())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn diagnose(
    phi: &ModelState,
    batch: &[Sample],
    batch_classes: &[ClassId],
    seen: &[ClassId],
    picks: &[Pick],
    kind: StrategyKind,
    ctx: StepContext,
    global_step: usize,
) -> Result<(DiversityRecord, Vec<AlignmentRecord>)> {
    let mut labelled = Vec::with_capacity(picks.len());
    for p in picks {
        labelled.push((
            phi.forward(&p.sample.sample.features)?,
            p.sample.sample.label,
        ));
    }
    let embeddings: Vec<Vec<f64>> = labelled.iter().map(|(h, _)| h.clone()).collect();
    let diversity = DiversityRecord {
        task_id: ctx.task_id,
        step: global_step,
        inner_distance: inner_distance(&embeddings).ok(),
        proxy_distance: distance_to_proxies(&labelled, &phi.proxy_bank).ok(),
    };
    let batch_grad = phi.backward(batch, batch_classes)?;
    let sample_grads = picks
        .iter()
        .map(|p| phi.sample_gradient(&p.sample.sample.features, p.sample.sample.label, seen))
        .collect::<Result<Vec<_>>>()?;
    let alignment = gradient_alignment(&batch_grad, &sample_grads)?
        .into_iter()
        .zip(picks)
        .map(|(a, p)| AlignmentRecord {
            task_id: ctx.task_id,
            step: global_step,
            strategy: kind,
            end: p.end,
            alignment: a,
        })
        .collect();
    Ok((diversity, alignment))
}

/// One iteration of the replay loop on `batch`:
/// 1. would-be parameters from an SGD step on the batch's own classes;
/// 2. retrieval from memory scored over all seen classes (skipped while
///    memory is empty or the budget is 0);
/// 3. one SGD step on the union, over the classes present in it;
/// 4. every batch sample offered to memory.
#[allow(clippy::too_many_arguments)]
pub fn train_batch_step(
    state: &mut ModelState,
    buffer: &mut ReservoirBuffer,
    batch: &[Sample],
    config: &TrainConfig,
    rng: &mut SeededRng,
    ctx: StepContext,
    global_step: usize,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(LabError::EmptyInput("batch"));
    }
    let strategy = &config.strategy;
    let batch_classes = distinct_labels(batch);
    let mut outcome = StepOutcome::default();

    let mut picks = Vec::new();
    if !buffer.is_empty() && strategy.replay_budget > 0 {
        let seen = state.proxy_bank.seen_classes();
        let phi_prime = if strategy.kind == StrategyKind::Random {
            // scores are never read
            state.clone()
        } else {
            state.virtual_step(batch, &batch_classes, config.alpha)?
        };
        let (p, entry) = select(strategy, buffer, state, &phi_prime, &seen, rng, ctx)?;
        picks = p;
        if config.diagnostics && !picks.is_empty() {
            let (d, a) = diagnose(
                state,
                batch,
                &batch_classes,
                &seen,
                &picks,
                strategy.kind,
                ctx,
                global_step,
            )?;
            outcome.diversity = Some(d);
            outcome.alignment = a;
        }
        if config.log_retrieval {
            outcome.log = Some(entry);
        }
    }
    outcome.replayed = picks.len();

    let mut joint: Vec<&Sample> = batch.iter().collect();
    joint.extend(picks.iter().map(|p| &p.sample.sample));
    let joint_classes = distinct_labels(joint.iter().copied());
    let grads = state.backward(&joint, &joint_classes)?;
    state.apply_sgd(&grads, config.alpha)?;

    for s in batch {
        buffer.offer(s.clone(), ctx.task_id);
    }
    Ok(outcome)
}

/// Accuracy on each of `tasks` with every seen class as a candidate.
pub fn evaluate(state: &ModelState, tasks: &[Task]) -> Result<Vec<f64>> {
    if tasks.is_empty() {
        return Err(LabError::EmptyInput("tasks"));
    }
    let seen = state.proxy_bank.seen_classes();
    tasks
        .iter()
        .map(|t| {
            if t.test.is_empty() {
                return Err(LabError::EmptyInput("test split"));
            }
            let mut correct = 0usize;
            for s in &t.test {
                if state.predict(&s.features, &seen)? == s.label {
                    correct += 1;
                }
            }
            Ok(correct as f64 / t.test.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: TrainConfig,
    pub accuracy: AccuracyMatrix,
    /// Every proxy right after initialization.
    pub initial_proxies: ProxySnapshot,
    /// One snapshot per finished task holding the proxies seen so far.
    pub proxy_snapshots: Vec<ProxySnapshot>,
    pub retrieval_log: Vec<RetrievalLogEntry>,
    pub diversity: Vec<DiversityRecord>,
    pub alignment: Vec<AlignmentRecord>,
    /// Class to task index.
    pub class_task: BTreeMap<ClassId, usize>,
    pub final_state: ModelState,
    pub final_buffer: ReservoirBuffer,
}

impl ExperimentResult {
    /// Initial snapshot followed by the per-task ones; drift between
    /// consecutive entries covers every task boundary.
    pub fn drift_snapshots(&self) -> Vec<ProxySnapshot> {
        let mut v = vec![self.initial_proxies.clone()];
        v.extend(self.proxy_snapshots.iter().cloned());
        v
    }
}

fn snapshot(state: &ModelState, boundary: usize, classes: &[ClassId]) -> Result<ProxySnapshot> {
    let mut proxies = BTreeMap::new();
    for &c in classes {
        proxies.insert(c, state.proxy_bank.proxy(c)?.to_vec());
    }
    Ok(ProxySnapshot { boundary, proxies })
}

/// Trains the tasks in order with per-epoch reshuffling and records an
/// accuracy row and proxy snapshot after each.
pub fn run_experiment(stream: &[Task], config: &TrainConfig) -> Result<ExperimentResult> {
    config.validate()?;
    validate_stream(stream)?;
    let input_dim = stream
        .iter()
        .flat_map(|t| t.train.iter().chain(&t.test))
        .map(|s| s.features.len())
        .next()
        .ok_or(LabError::EmptyInput("stream"))?;
    let num_classes = stream
        .iter()
        .flat_map(|t| t.class_set.iter())
        .max()
        .map_or(0, |&c| c + 1);
    let class_task: BTreeMap<ClassId, usize> = stream
        .iter()
        .enumerate()
        .flat_map(|(i, t)| t.class_set.iter().map(move |&c| (c, i)))
        .collect();

    let root = SeededRng::new(config.seed);
    let mut init_rng = root.derive("init");
    let mut shuffle_rng = root.derive("shuffle");
    let mut retrieval_rng = root.derive("retrieval");
    let mut state = ModelState::initialize(
        input_dim,
        &config.hidden_dims,
        config.embedding_dim,
        num_classes,
        config.gamma,
        &mut init_rng,
    )?;
    let mut buffer = ReservoirBuffer::new(config.buffer_capacity, root.derive("buffer"));
    let all: Vec<ClassId> = (0..num_classes).collect();
    let initial_proxies = snapshot(&state, 0, &all)?;

    let mut accuracy = AccuracyMatrix::new(stream.len());
    let mut proxy_snapshots = Vec::with_capacity(stream.len());
    let mut retrieval_log = Vec::new();
    let mut diversity = Vec::new();
    let mut alignment = Vec::new();
    let mut global_step = 0usize;

    for (task_idx, task) in stream.iter().enumerate() {
        if task.train.is_empty() {
            return Err(LabError::EmptyInput("train split"));
        }
        state.proxy_bank.mark_seen(&task.class_set)?;
        let mut order: Vec<usize> = (0..task.train.len()).collect();
        for epoch in 0..config.epochs_per_task {
            shuffle_rng.shuffle(&mut order);
            for (step, chunk) in order.chunks(config.batch_size).enumerate() {
                let batch: Vec<Sample> = chunk.iter().map(|&i| task.train[i].clone()).collect();
                let ctx = StepContext {
                    task_id: task_idx,
                    epoch,
                    step,
                };
                let out = train_batch_step(
                    &mut state,
                    &mut buffer,
                    &batch,
                    config,
                    &mut retrieval_rng,
                    ctx,
                    global_step,
                )?;
                retrieval_log.extend(out.log);
                diversity.extend(out.diversity);
                alignment.extend(out.alignment);
                global_step += 1;
            }
        }
        let row = evaluate(&state, &stream[..=task_idx])?;
        log::info!(
            "task {task_idx}: mean seen accuracy {:.4}",
            row.iter().sum::<f64>() / row.len() as f64
        );
        accuracy.push_row(row)?;
        proxy_snapshots.push(snapshot(
            &state,
            task_idx + 1,
            &state.proxy_bank.seen_classes(),
        )?);
    }

    Ok(ExperimentResult {
        config: config.clone(),
        accuracy,
        initial_proxies,
        proxy_snapshots,
        retrieval_log,
        diversity,
        alignment,
        class_task,
        final_state: state,
        final_buffer: buffer,
    })
}
