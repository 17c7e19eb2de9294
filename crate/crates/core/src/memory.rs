//! Replay memory maintained by reservoir sampling (Algorithm R).

use std::io::Write;

use crate::error::{LabError, Result};
use crate::linalg::{sample_without_replacement, SeededRng};
use crate::streams::{Labeled, Sample};
use crate::ClassId;

/// A sample as held in memory: raw features plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub sample: Sample,
    pub task_id: usize,
    /// Number of offers made before this one (0-based position in the stream).
    pub insertion_index: u64,
}

impl StoredSample {
    pub fn sample_id(&self) -> u64 {
        self.sample.sample_id
    }
}

impl Labeled for StoredSample {
    fn features(&self) -> &[f64] {
        &self.sample.features
    }
    fn label(&self) -> ClassId {
        self.sample.label
    }
}

#[derive(Debug, Clone)]
pub struct ReservoirBuffer {
    capacity: usize,
    items: Vec<StoredSample>,
    seen_count: u64,
    rng: SeededRng,
}

impl ReservoirBuffer {
    pub fn new(capacity: usize, rng: SeededRng) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            seen_count: 0,
            rng,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn items(&self) -> &[StoredSample] {
        &self.items
    }

    /// Offers one stream element. Below capacity it is always kept; after
    /// that it replaces a uniformly chosen slot with probability
    /// `M / (seen + 1)`.
    pub fn offer(&mut self, sample: Sample, task_id: usize) -> bool {
        let n = self.seen_count;
        self.seen_count += 1;
        let stored = StoredSample {
            sample,
            task_id,
            insertion_index: n,
        };
        if self.items.len() < self.capacity {
            self.items.push(stored);
            return true;
        }
        if self.capacity == 0 {
            return false;
        }
        let j = self.rng.below((n + 1) as usize);
        if j < self.capacity {
            self.items[j] = stored;
            true
        } else {
            false
        }
    }

    /// `min(pool_size, len)` distinct items, uniformly without replacement,
    /// in random order.
    pub fn sample_pool(&self, pool_size: usize, rng: &mut SeededRng) -> Result<Vec<StoredSample>> {
        if self.items.is_empty() {
            return Err(LabError::EmptyBuffer);
        }
        let k = pool_size.min(self.items.len());
        Ok(sample_without_replacement(rng, self.items.len(), k)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    /// Debug dump: `sample_id,task_id,label,f0..f{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.items.first().map_or(0, |s| s.sample.features.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sample_id".to_string(), "task_id".into(), "label".into()];
        header.extend((0..dim).map(|i| format!("f{i}")));
        w.write_record(&header)
            .map_err(|e| LabError::Io(e.to_string()))?;
        for s in &self.items {
            let mut rec = vec![
                s.sample.sample_id.to_string(),
                s.task_id.to_string(),
                s.sample.label.to_string(),
            ];
            rec.extend(s.sample.features.iter().map(|x| x.to_string()));
            w.write_record(&rec)
                .map_err(|e| LabError::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: u64) -> Sample {
        Sample {
            sample_id: id,
            features: vec![id as f64],
            label: 0,
        }
    }

    #[test]
    fn under_capacity_fill() {
        let mut buf = ReservoirBuffer::new(3, SeededRng::new(0));
        for i in 0..3 {
            assert!(buf.offer(s(i), 0));
        }
        let ids: Vec<u64> = buf.items().iter().map(|x| x.sample_id()).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(buf.seen_count(), 3);
    }

    #[test]
    fn zero_capacity_discards() {
        let mut buf = ReservoirBuffer::new(0, SeededRng::new(0));
        for i in 0..10 {
            assert!(!buf.offer(s(i), 0));
        }
        assert!(buf.is_empty());
        assert_eq!(buf.seen_count(), 10);
    }

    #[test]
    fn offer_replaces_at_most_one() {
        let mut buf = ReservoirBuffer::new(5, SeededRng::new(4));
        for i in 0..200 {
            let before: Vec<StoredSample> = buf.items().to_vec();
            buf.offer(s(i), 0);
            assert!(buf.len() <= 5);
            let changed = before
                .iter()
                .zip(buf.items())
                .filter(|(a, b)| a != b)
                .count();
            assert!(changed <= 1);
        }
    }

    #[test]
    fn offers_are_deterministic() {
        let run = || {
            let mut buf = ReservoirBuffer::new(7, SeededRng::new(42));
            for i in 0..500 {
                buf.offer(s(i), (i / 100) as usize);
            }
            buf.items().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pool_sampling() {
        let mut rng = SeededRng::new(3);
        let empty = ReservoirBuffer::new(4, SeededRng::new(0));
        assert!(matches!(
            empty.sample_pool(2, &mut rng),
            Err(LabError::EmptyBuffer)
        ));

        let mut buf = ReservoirBuffer::new(4, SeededRng::new(0));
        for i in 0..4 {
            buf.offer(s(i), 0);
        }
        let before = buf.items().to_vec();
        let mut all: Vec<u64> = buf
            .sample_pool(50, &mut rng)
            .unwrap()
            .iter()
            .map(|x| x.sample_id())
            .collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(buf.items(), &before[..]);

        // C = 1 frequency oracle
        let trials = 40_000;
        let mut counts = [0usize; 4];
        for _ in 0..trials {
            let p = buf.sample_pool(1, &mut rng).unwrap();
            counts[p[0].sample_id() as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.25).abs() < 0.01, "frequency {f}");
        }
    }

    #[test]
    fn reservoir_inclusion_is_uniform_small() {
        // capacity 3 over a stream of 12: every item kept with probability 1/4
        let trials = 20_000;
        let mut counts = [0usize; 12];
        for t in 0..trials {
            let mut buf = ReservoirBuffer::new(3, SeededRng::new(1).derive_indexed("trial", t));
            for i in 0..12 {
                buf.offer(s(i), 0);
            }
            for x in buf.items() {
                counts[x.sample_id() as usize] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.25).abs() < 0.015, "inclusion frequency {f}");
        }
    }

    #[test]
    fn csv_dump() {
        let mut buf = ReservoirBuffer::new(2, SeededRng::new(0));
        buf.offer(s(5), 1);
        let mut out = Vec::new();
        buf.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "sample_id,task_id,label,f0\n5,1,0,5\n"
        );
    }
}
