use crate::error::{Error, Result};
use crate::raster::{LabelMask, ScoreMap, LABEL_ID, LABEL_OOD};

/// Default histogram resolution (2^16 bins).
pub const DEFAULT_BINS: usize = 1 << 16;

#[derive(Debug, Clone)]
enum Backend {
    /// Stores every (score, label) pair; exact threshold sweeps.
    Exact { pos: Vec<f64>, neg: Vec<f64> },
    /// Mergeable fixed-range histograms; order-independent streaming.
    Histogram {
        lo: f64,
        hi: f64,
        clamp: bool,
        pos: Vec<u64>,
        neg: Vec<u64>,
    },
}

/// Mergeable positive/negative score accumulator. Positives are OoD (or
/// inaccurate) pixels, negatives in-distribution (or accurate) ones; void
/// pixels are ignored and only counted.
#[derive(Debug, Clone)]
pub struct BinaryEvalAccumulator {
    backend: Backend,
    positive_count: u64,
    negative_count: u64,
    ignored_count: u64,
}

impl BinaryEvalAccumulator {
    pub fn exact() -> Self {
        BinaryEvalAccumulator {
            backend: Backend::Exact { pos: Vec::new(), neg: Vec::new() },
            positive_count: 0,
            negative_count: 0,
            ignored_count: 0,
        }
    }

    /// Histogram over `[lo, hi]` with `bins` buckets. With `clamp`,
    /// out-of-range scores fold into the boundary bins; without it they
    /// are an error.
    pub fn histogram(bins: usize, lo: f64, hi: f64, clamp: bool) -> Result<Self> {
        if bins == 0 || !(lo < hi) {
            return Err(Error::contract("histogram needs bins > 0 and lo < hi"));
        }
        Ok(BinaryEvalAccumulator {
            backend: Backend::Histogram { lo, hi, clamp, pos: vec![0; bins], neg: vec![0; bins] },
            positive_count: 0,
            negative_count: 0,
            ignored_count: 0,
        })
    }

    pub fn positive_count(&self) -> u64 {
        self.positive_count
    }

    pub fn negative_count(&self) -> u64 {
        self.negative_count
    }

    pub fn ignored_count(&self) -> u64 {
        self.ignored_count
    }

    pub fn is_histogram(&self) -> bool {
        matches!(self.backend, Backend::Histogram { .. })
    }

    fn bin_index(lo: f64, hi: f64, bins: usize, score: f64) -> usize {
        let t = (score - lo) / (hi - lo);
        ((t * bins as f64) as usize).min(bins - 1)
    }

    /// Adds one score. In histogram mode, out-of-range scores either clamp
    /// into the boundary bins or are rejected depending on configuration.
    pub fn add(&mut self, score: f64, is_positive: bool) -> Result<()> {
        match &mut self.backend {
            Backend::Exact { pos, neg } => {
                if is_positive {
                    pos.push(score);
                } else {
                    neg.push(score);
                }
            }
            Backend::Histogram { lo, hi, clamp, pos, neg } => {
                let (lo, hi) = (*lo, *hi);
                if !*clamp && (score < lo || score > hi) {
                    return Err(Error::ScoreOutOfRange { count: 1, lo, hi });
                }
                let bins = pos.len();
                let idx = Self::bin_index(lo, hi, bins, score.clamp(lo, hi));
                if is_positive {
                    pos[idx] += 1;
                } else {
                    neg[idx] += 1;
                }
            }
        }
        if is_positive {
            self.positive_count += 1;
        } else {
            self.negative_count += 1;
        }
        Ok(())
    }

    /// Folds a score map and its label mask into the accumulator. Void
    /// pixels are skipped. Out-of-range scores in strict histogram mode
    /// fail the whole call before anything is mutated.
    pub fn accumulate(&mut self, scores: &ScoreMap, labels: &LabelMask) -> Result<()> {
        if scores.height != labels.height || scores.width != labels.width {
            return Err(Error::contract(format!(
                "score map {}x{} does not match mask {}x{}",
                scores.height, scores.width, labels.height, labels.width
            )));
        }
        if let Backend::Histogram { lo, hi, clamp: false, .. } = &self.backend {
            let (lo, hi) = (*lo, *hi);
            let out_of_range = scores
                .values()
                .iter()
                .zip(labels.labels())
                .filter(|&(&s, &l)| l != crate::raster::VOID_LABEL && (s < lo || s > hi))
                .count() as u64;
            if out_of_range > 0 {
                return Err(Error::ScoreOutOfRange { count: out_of_range, lo, hi });
            }
        }
        for (&s, &l) in scores.values().iter().zip(labels.labels()) {
            match l {
                LABEL_OOD => self.add(s, true)?,
                LABEL_ID => self.add(s, false)?,
                _ => self.ignored_count += 1,
            }
        }
        Ok(())
    }

    /// Merges another accumulator of identical configuration; totals add.
    pub fn merge(&mut self, other: &BinaryEvalAccumulator) -> Result<()> {
        match (&mut self.backend, &other.backend) {
            (Backend::Exact { pos, neg }, Backend::Exact { pos: op, neg: on }) => {
                pos.extend_from_slice(op);
                neg.extend_from_slice(on);
            }
            (
                Backend::Histogram { lo, hi, pos, neg, .. },
                Backend::Histogram { lo: ol, hi: oh, pos: op, neg: on, .. },
            ) => {
                if *lo != *ol || *hi != *oh || pos.len() != op.len() {
                    return Err(Error::contract(
                        "cannot merge histograms with different ranges or bin counts",
                    ));
                }
                for (a, b) in pos.iter_mut().zip(op) {
                    *a += b;
                }
                for (a, b) in neg.iter_mut().zip(on) {
                    *a += b;
                }
            }
            _ => return Err(Error::contract("cannot merge exact with histogram mode")),
        }
        self.positive_count += other.positive_count;
        self.negative_count += other.negative_count;
        self.ignored_count += other.ignored_count;
        Ok(())
    }

    /// Tie groups in descending score order: `(threshold, positives,
    /// negatives)` per group. Exact mode groups equal scores; histogram
    /// mode treats each occupied bin as one group keyed by its lower edge.
    pub(crate) fn descending_groups(&self) -> Vec<(f64, u64, u64)> {
        match &self.backend {
            Backend::Exact { pos, neg } => {
                let mut p = pos.clone();
                let mut n = neg.clone();
                p.sort_by(|a, b| b.total_cmp(a));
                n.sort_by(|a, b| b.total_cmp(a));
                let mut groups = Vec::new();
                let (mut i, mut j) = (0, 0);
                while i < p.len() || j < n.len() {
                    let s = match (p.get(i), n.get(j)) {
                        (Some(&a), Some(&b)) => a.max(b),
                        (Some(&a), None) => a,
                        (None, Some(&b)) => b,
                        (None, None) => unreachable!(),
                    };
                    let mut np = 0;
                    while i < p.len() && p[i] == s {
                        np += 1;
                        i += 1;
                    }
                    let mut nn = 0;
                    while j < n.len() && n[j] == s {
                        nn += 1;
                        j += 1;
                    }
                    groups.push((s, np, nn));
                }
                groups
            }
            Backend::Histogram { lo, hi, pos, neg, .. } => {
                let bins = pos.len();
                let width = (hi - lo) / bins as f64;
                (0..bins)
                    .rev()
                    .filter(|&b| pos[b] > 0 || neg[b] > 0)
                    .map(|b| (lo + b as f64 * width, pos[b], neg[b]))
                    .collect()
            }
        }
    }
}
