use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based rank of `scores[positive]`. Ties go against the positive: every
/// other candidate scoring at least as high is ranked above it.
pub fn rank_of(scores: &[f64], positive: usize) -> usize {
    let p = scores[positive];
    1 + scores.iter().enumerate().filter(|(j, s)| *j != positive && **s >= p).count()
}

/// Metrics of one ranked instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub rank: usize,
    pub mrr: f64,
    pub hr1: f64,
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

impl InstanceMetrics {
    pub fn from_rank(rank: usize) -> Self {
        let hit = |k: usize| f64::from(u8::from(rank <= k));
        let ndcg = |k: usize| if rank <= k { 1.0 / ((rank + 1) as f64).log2() } else { 0.0 };
        Self {
            rank,
            mrr: 1.0 / rank as f64,
            hr1: hit(1),
            hr5: hit(5),
            hr10: hit(10),
            ndcg5: ndcg(5),
            ndcg10: ndcg(10),
        }
    }
}

/// Scores one instance. `expected_len` enforces the candidate-list size
/// (1 positive + negatives) when given.
pub fn rank_metrics(scores: &[f64], positive: usize, expected_len: Option<usize>) -> Result<InstanceMetrics> {
    if let Some(n) = expected_len {
        if scores.len() != n {
            return Err(Error::invalid(format!("expected {n} candidate scores, got {}", scores.len())));
        }
    }
    if positive >= scores.len() {
        return Err(Error::OutOfRange { what: "positive index", index: positive, size: scores.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("candidate scores".into()));
    }
    Ok(InstanceMetrics::from_rank(rank_of(scores, positive)))
}

/// Mean metrics over a set of instances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub hr1: f64,
    pub hr5: f64,
    pub hr10: f64,
}

impl MetricSummary {
    pub fn mean(items: &[InstanceMetrics]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("cannot summarize zero instances"));
        }
        let n = items.len() as f64;
        let avg = |f: fn(&InstanceMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            count: items.len(),
            mrr: avg(|m| m.mrr),
            ndcg5: avg(|m| m.ndcg5),
            ndcg10: avg(|m| m.ndcg10),
            hr1: avg(|m| m.hr1),
            hr5: avg(|m| m.hr5),
            hr10: avg(|m| m.hr10),
        })
    }
}
