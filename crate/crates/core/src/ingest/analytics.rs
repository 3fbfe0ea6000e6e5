use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{build_user_sequences, Domain, InteractionLog};
use crate::error::{Error, Result};
use crate::temporal::DAY;

/// Population variance of the real gaps (sentinels dropped). `None` when
/// fewer than two usable gaps remain.
pub fn gap_variance(gaps: &[i64]) -> Option<f64> {
    let real: Vec<f64> = gaps.iter().filter(|g| **g >= 0).map(|g| *g as f64).collect();
    if real.len() < 2 {
        return None;
    }
    let mean = real.iter().sum::<f64>() / real.len() as f64;
    Some(real.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / real.len() as f64)
}

/// Assigns each keyed gap sequence to one of `n_buckets` groups of (near)
/// equal size by ascending gap variance; bucket 0 is the most regular.
/// Variance ties fall back to key order. Sequences with fewer than two real
/// gaps go to bucket 0 without taking part in the ranking.
pub fn bucket_by_interval_variance<'a>(
    sequences: impl IntoIterator<Item = (&'a str, &'a [i64])>,
    n_buckets: usize,
) -> Result<BTreeMap<String, usize>> {
    if n_buckets == 0 {
        return Err(Error::invalid("n_buckets must be positive"));
    }
    let mut out = BTreeMap::new();
    let mut ranked = Vec::new();
    let mut short = 0usize;
    for (key, gaps) in sequences {
        match gap_variance(gaps) {
            Some(v) => ranked.push((v, key)),
            None => {
                short += 1;
                out.insert(key.to_string(), 0);
            }
        }
    }
    if short > 0 {
        log::info!("{short} sequences with fewer than 2 gaps assigned to bucket 0");
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let n = ranked.len();
    for (rank, (_, key)) in ranked.into_iter().enumerate() {
        out.insert(key.to_string(), rank * n_buckets / n);
    }
    Ok(out)
}

/// Share of adjacent same-domain gaps in each duration bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalTable {
    pub bins: Vec<String>,
    /// Proportions per domain in bin order; domains with too little data are absent.
    pub domains: BTreeMap<Domain, Vec<f64>>,
    pub counts: BTreeMap<Domain, usize>,
}

pub const INTERVAL_BINS: [&str; 3] = ["<=1 day", "1 day-1 week", ">1 week"];

fn interval_bin(gap: i64) -> usize {
    if gap <= DAY {
        0
    } else if gap <= 7 * DAY {
        1
    } else {
        2
    }
}

pub fn analyze_intervals(log: &InteractionLog) -> Result<IntervalTable> {
    if log.is_empty() {
        return Err(Error::invalid("cannot analyze an empty log"));
    }
    let seqs = build_user_sequences(log, usize::MAX)?;
    let mut table = IntervalTable {
        bins: INTERVAL_BINS.iter().map(|s| s.to_string()).collect(),
        domains: BTreeMap::new(),
        counts: BTreeMap::new(),
    };
    for d in Domain::BOTH {
        let mut hist = [0usize; 3];
        for s in seqs.values() {
            let gaps = match d {
                Domain::A => &s.gaps_a,
                Domain::B => &s.gaps_b,
            };
            for g in gaps.iter().filter(|g| **g >= 0) {
                hist[interval_bin(*g)] += 1;
            }
        }
        let total: usize = hist.iter().sum();
        if total == 0 {
            log::warn!("domain {d} has no adjacent interaction pairs; omitted from interval table");
            continue;
        }
        table.domains.insert(d, hist.iter().map(|c| *c as f64 / total as f64).collect());
        table.counts.insert(d, total);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Interaction;

    #[test]
    fn variance_ignores_sentinel() {
        assert_eq!(gap_variance(&[-1, 10, 10]), Some(0.0));
        assert_eq!(gap_variance(&[-1, 0, 20]), Some(100.0));
        assert_eq!(gap_variance(&[-1, 5]), None);
    }

    #[test]
    fn nine_sequences_split_three_ways() {
        let data: Vec<(String, Vec<i64>)> =
            (0..9).map(|k| (format!("s{k}"), vec![-1, 0, 2 * k as i64])).collect();
        let buckets =
            bucket_by_interval_variance(data.iter().map(|(k, g)| (k.as_str(), g.as_slice())), 3).unwrap();
        let mut sizes = [0; 3];
        for (k, b) in &buckets {
            sizes[*b] += 1;
            let idx: usize = k[1..].parse().unwrap();
            assert_eq!(*b, idx / 3);
        }
        assert_eq!(sizes, [3, 3, 3]);
    }

    #[test]
    fn lower_variance_lower_bucket_and_ties_by_key() {
        let data = [("x", vec![-1, 10, 10]), ("y", vec![-1, 0, 20])];
        let b = bucket_by_interval_variance(data.iter().map(|(k, g)| (*k, g.as_slice())), 2).unwrap();
        assert!(b["x"] < b["y"]);
        let tied = [("b", vec![-1, 4, 4]), ("a", vec![-1, 7, 7])];
        let b = bucket_by_interval_variance(tied.iter().map(|(k, g)| (*k, g.as_slice())), 2).unwrap();
        assert_eq!((b["a"], b["b"]), (0, 1));
    }

    #[test]
    fn short_sequences_go_to_bucket_zero() {
        let data = [("a", vec![-1, 3]), ("b", vec![-1, 0, 90]), ("c", vec![-1, 1, 2])];
        let b = bucket_by_interval_variance(data.iter().map(|(k, g)| (*k, g.as_slice())), 2).unwrap();
        assert_eq!(b["a"], 0);
        assert_eq!((b["c"], b["b"]), (0, 1));
    }

    fn log_with_gaps(domain: Domain, gaps: &[i64]) -> InteractionLog {
        let mut t = 1_000;
        let mut its = vec![];
        for (k, g) in std::iter::once(&0).chain(gaps).enumerate() {
            t += g;
            its.push(Interaction {
                user_id: "u".into(),
                item_id: format!("i{k}"),
                domain,
                timestamp: t,
                title: None,
            });
        }
        InteractionLog::new(its).unwrap()
    }

    #[test]
    fn hourly_gaps_fill_first_bin() {
        let t = analyze_intervals(&log_with_gaps(Domain::A, &[3600, 3600, 3600])).unwrap();
        assert_eq!(t.domains[&Domain::A], vec![1.0, 0.0, 0.0]);
        assert!(!t.domains.contains_key(&Domain::B));
    }

    #[test]
    fn one_gap_per_bin() {
        let t = analyze_intervals(&log_with_gaps(Domain::B, &[DAY / 2, 3 * DAY, 10 * DAY])).unwrap();
        for p in &t.domains[&Domain::B] {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn proportions_sum_to_one() {
        let cfg = crate::ingest::SynthConfig { users: 30, ..crate::ingest::SynthConfig::desk(2) };
        let log = crate::ingest::generate_synthetic(&cfg, 2).unwrap();
        let t = analyze_intervals(&log).unwrap();
        for p in t.domains.values() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
