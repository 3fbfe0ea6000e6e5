use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::metrics::{rank_metrics, InstanceMetrics, MetricSummary};
use crate::error::{Error, Result};
use crate::ingest::{bucket_by_interval_variance, Domain};
use crate::trainer::{Dataset, Model, Part, SemanticFeatures, Variant, View};
use crate::util::rng_for;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: usize,
    pub domains: BTreeMap<Domain, MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub variant: Variant,
    pub part: Part,
    pub domains: BTreeMap<Domain, MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buckets: Option<Vec<BucketReport>>,
}

fn summarize(items: &[(Domain, InstanceMetrics)]) -> Result<BTreeMap<Domain, MetricSummary>> {
    let mut out = BTreeMap::new();
    for d in Domain::BOTH {
        let m: Vec<InstanceMetrics> = items.iter().filter(|(x, _)| *x == d).map(|(_, m)| *m).collect();
        if !m.is_empty() {
            out.insert(d, MetricSummary::mean(&m)?);
        }
    }
    Ok(out)
}

/// Per-instance metrics from candidate score lists (target first).
pub fn instance_metrics(ds: &Dataset, part: Part, scores: &[Vec<f64>], expected_len: Option<usize>) -> Result<Vec<(Domain, InstanceMetrics)>> {
    ds.part(part)
        .iter()
        .zip(scores)
        .map(|(inst, s)| Ok((inst.domain, rank_metrics(s, 0, expected_len)?)))
        .collect()
}

/// Builds the report from per-instance metrics. With `n_buckets`, instances
/// are also grouped by the gap variance of their mixed-view history.
pub fn build_report(
    ds: &Dataset,
    part: Part,
    metrics: &[(Domain, InstanceMetrics)],
    variant: Variant,
    config_hash: &str,
    n_buckets: Option<usize>,
) -> Result<MetricReport> {
    if metrics.is_empty() {
        return Err(Error::invalid(format!("no {part:?} instances to evaluate")));
    }
    let buckets = match n_buckets {
        None => None,
        Some(n) => {
            let keys: Vec<String> = (0..metrics.len()).map(|i| format!("{i:08}")).collect();
            let insts = ds.part(part);
            let assign = bucket_by_interval_variance(
                keys.iter().zip(insts).map(|(k, inst)| (k.as_str(), &inst.view(View::M).gaps[..])),
                n,
            )?;
            let mut out = Vec::new();
            for b in 0..n {
                let members: Vec<(Domain, InstanceMetrics)> =
                    keys.iter().zip(metrics).filter(|(k, _)| assign[k.as_str()] == b).map(|(_, m)| *m).collect();
                out.push(BucketReport { bucket: b, domains: summarize(&members)? });
            }
            Some(out)
        }
    };
    Ok(MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        variant,
        part,
        domains: summarize(metrics)?,
        buckets,
    })
}

/// Scores every instance of `part` and summarizes per domain.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    part: Part,
    sem: Option<&SemanticFeatures>,
    config_hash: &str,
    n_buckets: Option<usize>,
) -> Result<MetricReport> {
    let scores = model.score_part(ds, part, sem)?;
    let expected = model.config.num_negatives + 1;
    let metrics = instance_metrics(ds, part, &scores, Some(expected))?;
    build_report(ds, part, &metrics, model.variant(), config_hash, n_buckets)
}

/// Final-step fusion gates of sampled users, per domain view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionExport {
    pub users: Vec<String>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

/// Samples up to `sample` distinct users of `part` (their first instance)
/// and exports the gate vectors of the A and B views.
pub fn export_fusion_weights(
    model: &Model,
    ds: &Dataset,
    part: Part,
    sem: Option<&SemanticFeatures>,
    sample: usize,
    seed: u64,
) -> Result<FusionExport> {
    let mut first: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, inst) in ds.part(part).iter().enumerate() {
        first.entry(inst.user).or_insert(i);
    }
    let pool: Vec<usize> = first.into_values().collect();
    if pool.is_empty() {
        return Err(Error::invalid(format!("no {part:?} instances to sample")));
    }
    let k = sample.min(pool.len());
    let mut picked: Vec<usize> =
        index::sample(&mut rng_for(seed, "fusion-sample"), pool.len(), k).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    let weights = model
        .fusion_weights(ds, part, &picked, sem)?
        .ok_or_else(|| Error::invalid(format!("variant {} has no fusion gate", model.variant())))?;
    let rows = |m: &crate::autograd::Mat| m.rows().into_iter().map(|r| r.to_vec()).collect();
    Ok(FusionExport {
        users: picked.iter().map(|&i| ds.users[ds.part(part)[i].user].clone()).collect(),
        a: rows(&weights[0]),
        b: rows(&weights[1]),
    })
}
