//! Post-hoc metrics and diagnostics: end accuracy, forgetting, retention,
//! proxy drift, retrieval diversity and gradient alignment.
//!
//! Task indices are 0-based here; `A[i][t]` is the accuracy on task `t`
//! after finishing task `i` and exists for `i >= t`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::encoder::{GradientSet, ProxyBank};
use crate::error::{LabError, Result};
use crate::linalg::{dot, euclidean_distance, norm};
use crate::retrieval::{PickEnd, StrategyKind};
use crate::trainer::AccuracyMatrix;
use crate::ClassId;

fn require_complete(a: &AccuracyMatrix) -> Result<usize> {
    if !a.is_complete() || a.num_tasks() == 0 {
        return Err(LabError::State(format!(
            "accuracy matrix has {} of {} rows",
            a.filled_rows(),
            a.num_tasks()
        )));
    }
    Ok(a.num_tasks())
}

/// Largest `A[i][t]` over checkpoints `i ∈ [t, T−1)`, i.e. before the final task.
fn best_before_final(a: &AccuracyMatrix, t: usize) -> f64 {
    let last = a.num_tasks() - 1;
    (t..last)
        .map(|i| a.get(i, t).expect("lower triangle"))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Mean of the final row.
pub fn avg_end_accuracy(a: &AccuracyMatrix) -> Result<f64> {
    let tasks = require_complete(a)?;
    let last = a.row(tasks - 1);
    Ok(last.iter().sum::<f64>() / tasks as f64)
}

/// `f_t = max_{t ≤ i < T} A[i][t] − A[T][t]` for every task but the last.
pub fn forgetting_per_task(a: &AccuracyMatrix) -> Result<Vec<f64>> {
    let tasks = require_complete(a)?;
    if tasks < 2 {
        return Err(LabError::UndefinedMetric(
            "forgetting needs at least two tasks".into(),
        ));
    }
    let last = a.row(tasks - 1);
    Ok((0..tasks - 1)
        .map(|t| best_before_final(a, t) - last[t])
        .collect())
}

pub fn avg_forgetting(a: &AccuracyMatrix) -> Result<f64> {
    let f = forgetting_per_task(a)?;
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

/// `r_t = A[T][t] / max_{t ≤ i < T} A[i][t]`; `None` where the maximum is 0.
pub fn retention_per_task(a: &AccuracyMatrix) -> Result<Vec<Option<f64>>> {
    let tasks = require_complete(a)?;
    if tasks < 2 {
        return Err(LabError::UndefinedMetric(
            "retention needs at least two tasks".into(),
        ));
    }
    let last = a.row(tasks - 1);
    Ok((0..tasks - 1)
        .map(|t| {
            let best = best_before_final(a, t);
            (best > 0.0).then(|| last[t] / best)
        })
        .collect())
}

pub fn avg_retention_rate(a: &AccuracyMatrix) -> Result<f64> {
    let r = retention_per_task(a)?;
    let mut total = 0.0;
    for (t, v) in r.iter().enumerate() {
        match v {
            Some(v) => total += v,
            None => {
                return Err(LabError::UndefinedMetric(format!(
                    "task {t} never had positive accuracy"
                )))
            }
        }
    }
    Ok(total / r.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionPoint {
    pub offset: usize,
    pub mean_accuracy: f64,
    /// Mean of `A[t+k][t] / max_{i∈[t,t+k]} A[i][t]`, skipping zero maxima.
    pub mean_retention: Option<f64>,
}

/// Average accuracy `k` tasks after each task was learned, for every `k`.
pub fn retention_curve(a: &AccuracyMatrix) -> Result<Vec<RetentionPoint>> {
    let tasks = require_complete(a)?;
    Ok((0..tasks)
        .map(|k| {
            let mut acc = Vec::new();
            let mut ret = Vec::new();
            for t in 0..tasks - k {
                let now = a.get(t + k, t).expect("lower triangle");
                acc.push(now);
                let best = (t..=t + k)
                    .map(|i| a.get(i, t).expect("lower triangle"))
                    .fold(f64::NEG_INFINITY, f64::max);
                if best > 0.0 {
                    ret.push(now / best);
                }
            }
            RetentionPoint {
                offset: k,
                mean_accuracy: mean(&acc).expect("non-empty"),
                mean_retention: mean(&ret),
            }
        })
        .collect())
}

/// Per-task breakdown inside [`MetricsReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerTaskMetrics {
    pub f_t: Vec<f64>,
    pub r_t: Vec<Option<f64>>,
}

/// Summary written as `metrics.json`: `{acc, fgt, arr, per_task: {f_t, r_t}}`.
/// `fgt` and `arr` are `null` for single-task streams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub fgt: Option<f64>,
    pub arr: Option<f64>,
    pub per_task: PerTaskMetrics,
    pub retention_curve: Vec<RetentionPoint>,
}

impl MetricsReport {
    pub fn from_matrix(a: &AccuracyMatrix) -> Result<Self> {
        let acc = avg_end_accuracy(a)?;
        let (fgt, arr, f_t, r_t) = if a.num_tasks() >= 2 {
            (
                Some(avg_forgetting(a)?),
                avg_retention_rate(a).ok(),
                forgetting_per_task(a)?,
                retention_per_task(a)?,
            )
        } else {
            (None, None, Vec::new(), Vec::new())
        };
        Ok(Self {
            acc,
            fgt,
            arr,
            per_task: PerTaskMetrics { f_t, r_t },
            retention_curve: retention_curve(a)?,
        })
    }
}

/// Copy of the proxies of every seen class at the end of a task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxySnapshot {
    pub boundary: usize,
    pub proxies: BTreeMap<ClassId, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftEntry {
    pub boundary: usize,
    pub class: ClassId,
    pub delta: f64,
}

/// A class present at a boundary but missing from the previous snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedDrift {
    pub boundary: usize,
    pub class: ClassId,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriftReport {
    pub entries: Vec<DriftEntry>,
    pub skipped: Vec<SkippedDrift>,
}

impl DriftReport {
    /// Mean drift over all classes at each boundary that has any entries.
    pub fn boundary_means(&self) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for e in &self.entries {
            acc.entry(e.boundary).or_default().push(e.delta);
        }
        acc.into_iter()
            .map(|(b, v)| (b, mean(&v).expect("non-empty")))
            .collect()
    }

    /// Mean drift per `(boundary, task)` with classes grouped by `class_task`.
    pub fn task_means(&self, class_task: &BTreeMap<ClassId, usize>) -> Vec<(usize, usize, f64)> {
        let mut acc: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for e in &self.entries {
            if let Some(&task) = class_task.get(&e.class) {
                acc.entry((e.boundary, task)).or_default().push(e.delta);
            }
        }
        acc.into_iter()
            .map(|((b, t), v)| (b, t, mean(&v).expect("non-empty")))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["boundary", "class", "delta"])
            .map_err(csv_err)?;
        for e in &self.entries {
            w.write_record([
                e.boundary.to_string(),
                e.class.to_string(),
                e.delta.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `‖p_c(t) − p_c(t−1)‖₂` between consecutive snapshots on the stored
/// (unnormalized) proxy vectors.
pub fn proxy_drift(snapshots: &[ProxySnapshot]) -> Result<DriftReport> {
    let mut report = DriftReport::default();
    for pair in snapshots.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        for (&class, p) in &cur.proxies {
            match prev.proxies.get(&class) {
                Some(q) => report.entries.push(DriftEntry {
                    boundary: cur.boundary,
                    class,
                    delta: euclidean_distance(p, q)?,
                }),
                None => {
                    log::debug!("class {class} absent before boundary {}", cur.boundary);
                    report.skipped.push(SkippedDrift {
                        boundary: cur.boundary,
                        class,
                    })
                }
            }
        }
    }
    Ok(report)
}

/// Mean pairwise Euclidean distance between embeddings.
pub fn inner_distance(embeddings: &[Vec<f64>]) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(LabError::UndefinedMetric(
            "inner distance needs at least two embeddings".into(),
        ));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            total += euclidean_distance(&embeddings[i], &embeddings[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Mean distance from each unit embedding to the unit proxy of its label.
pub fn distance_to_proxies(labelled: &[(Vec<f64>, ClassId)], bank: &ProxyBank) -> Result<f64> {
    if labelled.is_empty() {
        return Err(LabError::UndefinedMetric("no embeddings".into()));
    }
    let mut total = 0.0;
    for (h, c) in labelled {
        let u = bank.unit_proxy(*c)?;
        total += euclidean_distance(h, &u)?;
    }
    Ok(total / labelled.len() as f64)
}

/// Cosine similarity with 0 for a zero-norm side.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let d = dot(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine between the batch gradient and each sample gradient.
pub fn gradient_alignment(
    batch_grad: &GradientSet,
    sample_grads: &[GradientSet],
) -> Result<Vec<f64>> {
    let b = batch_grad.flatten();
    sample_grads
        .iter()
        .map(|g| {
            if !g.same_shape(batch_grad) {
                return Err(LabError::Dimension {
                    expected: batch_grad.len(),
                    got: g.len(),
                });
            }
            cosine(&b, &g.flatten())
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LabError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(LabError::UndefinedMetric(
            "spearman needs two points".into(),
        ));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let (ma, mb) = (mean(&ra).unwrap(), mean(&rb).unwrap());
    let ca: Vec<f64> = ra.iter().map(|x| x - ma).collect();
    let cb: Vec<f64> = rb.iter().map(|x| x - mb).collect();
    let denom = norm(&ca) * norm(&cb);
    if denom == 0.0 {
        return Err(LabError::UndefinedMetric("constant ranks".into()));
    }
    Ok(dot(&ca, &cb)? / denom)
}

/// Diversity of one replay selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityRecord {
    pub task_id: usize,
    pub step: usize,
    pub inner_distance: Option<f64>,
    pub proxy_distance: Option<f64>,
}

/// Alignment of one replayed sample's gradient with the batch gradient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentRecord {
    pub task_id: usize,
    pub step: usize,
    pub strategy: StrategyKind,
    pub end: PickEnd,
    pub alignment: f64,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::Io(e.to_string())
}

/// `task,step,inner_distance,proxy_distance`
pub fn write_diversity_csv<W: Write>(records: &[DiversityRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "step", "inner_distance", "proxy_distance"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.task_id.to_string(),
            r.step.to_string(),
            opt(r.inner_distance),
            opt(r.proxy_distance),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `task,step,strategy,alignment`
pub fn write_alignment_csv<W: Write>(records: &[AlignmentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "step", "strategy", "alignment"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.task_id.to_string(),
            r.step.to_string(),
            r.strategy.to_string(),
            r.alignment.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
