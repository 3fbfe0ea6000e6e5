use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::MetricSummary;
use super::plots::grouped_bars;
use super::report::MetricReport;
use crate::error::{Error, Result};
use crate::ingest::{analyze_intervals, Domain, IntervalTable};
use crate::pipeline::{self, RunConfig};
use crate::trainer::Variant;
use crate::util::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Ablation,
    Buckets,
    Noise,
    Semantic,
    Intervals,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Ablation, Suite::Buckets, Suite::Noise, Suite::Semantic, Suite::Intervals];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Ablation => "ablation",
            Suite::Buckets => "buckets",
            Suite::Noise => "noise",
            Suite::Semantic => "semantic",
            Suite::Intervals => "intervals",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown suite {s:?}; valid names: ablation, buckets, noise, semantic, intervals"))
        })
    }
}

/// Test metrics of one trained model (and bucket, for the bucket study).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub seed: u64,
    pub variant: Variant,
    pub noise_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<usize>,
    pub domains: BTreeMap<Domain, MetricSummary>,
    /// Instance-weighted MRR over both domains.
    pub mrr: f64,
}

impl SuiteRow {
    fn new(seed: u64, variant: Variant, noise_ratio: f64, bucket: Option<usize>, domains: BTreeMap<Domain, MetricSummary>) -> Self {
        let n: usize = domains.values().map(|m| m.count).sum();
        let mrr = domains.values().map(|m| m.mrr * m.count as f64).sum::<f64>() / n.max(1) as f64;
        Self { seed, variant, noise_ratio, bucket, domains, mrr }
    }
}

/// Seed-mean of rows sharing variant, noise ratio and bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub variant: Variant,
    pub noise_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<usize>,
    pub seeds: usize,
    pub mrr: f64,
    pub domain_mrr: BTreeMap<Domain, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: Suite,
    pub config_hash: String,
    pub rows: Vec<SuiteRow>,
    pub summary: Vec<SuiteSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<IntervalTable>,
    /// Set when a sub-run failed; rows hold what finished before it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SuiteResult {
    /// Summary entry for a variant / noise ratio / bucket.
    pub fn mean(&self, variant: Variant, noise_ratio: f64, bucket: Option<usize>) -> Option<&SuiteSummary> {
        self.summary.iter().find(|s| s.variant == variant && s.noise_ratio == noise_ratio && s.bucket == bucket)
    }

    pub fn rows_for(&self, variant: Variant, noise_ratio: f64) -> Vec<&SuiteRow> {
        self.rows.iter().filter(|r| r.variant == variant && r.noise_ratio == noise_ratio && r.bucket.is_none()).collect()
    }
}

pub fn summarize(rows: &[SuiteRow]) -> Vec<SuiteSummary> {
    let mut groups: Vec<(Variant, f64, Option<usize>, Vec<&SuiteRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|g| g.0 == r.variant && g.1 == r.noise_ratio && g.2 == r.bucket) {
            Some(g) => g.3.push(r),
            None => groups.push((r.variant, r.noise_ratio, r.bucket, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(variant, noise_ratio, bucket, rs)| {
            let n = rs.len() as f64;
            let mut domain_mrr = BTreeMap::new();
            for d in Domain::BOTH {
                let vals: Vec<f64> = rs.iter().filter_map(|r| r.domains.get(&d).map(|m| m.mrr)).collect();
                if !vals.is_empty() {
                    domain_mrr.insert(d, vals.iter().sum::<f64>() / vals.len() as f64);
                }
            }
            SuiteSummary { variant, noise_ratio, bucket, seeds: rs.len(), mrr: rs.iter().map(|r| r.mrr).sum::<f64>() / n, domain_mrr }
        })
        .collect()
}

pub fn suite_dir(cfg: &RunConfig, suite: Suite) -> PathBuf {
    cfg.out_dir.join("experiments").join(format!("{}-{}", suite.name(), &cfg.hash()[..16]))
}

struct Recorder {
    dir: PathBuf,
    result: SuiteResult,
}

impl Recorder {
    fn push(&mut self, row: SuiteRow) -> Result<()> {
        self.result.rows.push(row);
        self.result.summary = summarize(&self.result.rows);
        self.flush()
    }

    fn flush(&self) -> Result<()> {
        write_atomic(&self.dir.join("results.json"), serde_json::to_string_pretty(&self.result)?.as_bytes())
    }

    fn fail(mut self, e: Error) -> Error {
        self.result.error = Some(e.to_string());
        if let Err(w) = self.flush() {
            log::error!("could not record partial results: {w}");
        }
        e
    }
}

fn report_row(cfg: &RunConfig, report: &MetricReport) -> SuiteRow {
    SuiteRow::new(cfg.seed, report.variant, cfg.data.noise_ratio, None, report.domains.clone())
}

fn seeded(cfg: &RunConfig) -> Vec<RunConfig> {
    cfg.eval.seeds.iter().map(|&s| cfg.with_seed(s)).collect()
}

fn run_rows(rec: &mut Recorder, configs: Vec<RunConfig>, force: bool) -> Result<()> {
    for c in configs {
        log::info!("suite {}: seed {} variant {} noise {}", rec.result.suite, c.seed, c.model.variant, c.data.noise_ratio);
        let report = pipeline::run_all(&c, force)?;
        rec.push(report_row(&c, &report))?;
    }
    Ok(())
}

fn bar_plot(path: &Path, title: &str, summary: &[SuiteSummary], label: impl Fn(&SuiteSummary) -> String) -> Result<()> {
    let categories: Vec<String> = summary.iter().map(&label).collect();
    let series: Vec<(String, Vec<f64>)> = Domain::BOTH
        .iter()
        .map(|d| (format!("domain {d}"), summary.iter().map(|s| s.domain_mrr.get(d).copied().unwrap_or(0.0)).collect()))
        .collect();
    grouped_bars(path, title, "MRR", &categories, &series)
}

/// Runs a study end to end (reusing finished sub-runs) and writes
/// `results.json` plus an SVG plot into the suite directory.
pub fn run_experiment_suite(cfg: &RunConfig, suite: Suite, force: bool) -> Result<SuiteResult> {
    let dir = suite_dir(cfg, suite);
    std::fs::create_dir_all(&dir)?;
    write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut rec = Recorder {
        dir: dir.clone(),
        result: SuiteResult { suite, config_hash: cfg.hash(), rows: vec![], summary: vec![], intervals: None, error: None },
    };
    let outcome = match suite {
        Suite::Ablation => {
            let configs = seeded(cfg)
                .into_iter()
                .flat_map(|c| Variant::ABLATION.map(|v| c.with_variant(v)))
                .collect();
            run_rows(&mut rec, configs, force).and_then(|_| {
                bar_plot(&dir.join("ablation.svg"), "Ablation (test MRR, seed mean)", &rec.result.summary, |s| {
                    s.variant.label().to_string()
                })
            })
        }
        Suite::Semantic => {
            let configs = seeded(cfg)
                .into_iter()
                .flat_map(|c| Variant::SEMANTIC_ONLY.map(|v| c.with_variant(v)))
                .collect();
            run_rows(&mut rec, configs, force).and_then(|_| {
                bar_plot(&dir.join("semantic.svg"), "Semantic-only variants (test MRR)", &rec.result.summary, |s| {
                    s.variant.label().to_string()
                })
            })
        }
        Suite::Noise => {
            let mut configs = vec![];
            for c in seeded(cfg) {
                for &r in &cfg.eval.noise_ratios {
                    let mut n = c.clone();
                    n.data.noise_ratio = r;
                    configs.push(n);
                }
            }
            run_rows(&mut rec, configs, force).and_then(|_| {
                bar_plot(&dir.join("noise.svg"), "Noise injection (test MRR)", &rec.result.summary, |s| {
                    format!("{:.0}%", s.noise_ratio * 100.0)
                })
            })
        }
        Suite::Buckets => run_buckets(&mut rec, cfg, force),
        Suite::Intervals => run_intervals(&mut rec, cfg, force),
    };
    match outcome {
        Ok(()) => {
            rec.flush()?;
            Ok(rec.result)
        }
        Err(e) => Err(rec.fail(e)),
    }
}

fn run_buckets(rec: &mut Recorder, cfg: &RunConfig, force: bool) -> Result<()> {
    let n = cfg.eval.buckets.max(1);
    let variants = [Variant::V1, cfg.model.variant];
    for c in seeded(cfg) {
        for v in variants {
            let c = c.with_variant(v);
            pipeline::prepare(&c, force)?;
            pipeline::train(&c, force)?;
            let report = pipeline::evaluate(&c, force, Some(n))?;
            for b in report.buckets.as_deref().unwrap_or_default() {
                rec.push(SuiteRow::new(c.seed, v, c.data.noise_ratio, Some(b.bucket), b.domains.clone()))?;
            }
        }
    }
    let categories: Vec<String> = (0..n).map(|b| format!("bucket {b}")).collect();
    let series: Vec<(String, Vec<f64>)> = variants
        .iter()
        .map(|v| {
            let vals = (0..n).map(|b| rec.result.mean(*v, cfg.data.noise_ratio, Some(b)).map_or(0.0, |s| s.mrr)).collect();
            (v.label().to_string(), vals)
        })
        .collect();
    grouped_bars(&rec.dir.join("buckets.svg"), "MRR by interval-variance bucket (low to high)", "MRR", &categories, &series)
}

fn run_intervals(rec: &mut Recorder, cfg: &RunConfig, force: bool) -> Result<()> {
    pipeline::prepare(cfg, force)?;
    let p = pipeline::load_prepared(cfg)?;
    let table = analyze_intervals(&p.log)?;
    let series: Vec<(String, Vec<f64>)> =
        table.domains.iter().map(|(d, v)| (format!("domain {d}"), v.clone())).collect();
    grouped_bars(&rec.dir.join("intervals.svg"), "Same-domain interval distribution", "share", &table.bins, &series)?;
    rec.result.intervals = Some(table);
    Ok(())
}
