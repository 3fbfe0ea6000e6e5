//! Run configuration and the prepare → train → evaluate steps.
//!
//! Layout under `out_dir`:
//! - `data/<data-hash>/`: interactions, split, instance listing, prompts and
//!   the embedding cache. Shared by every run with the same data settings.
//! - `runs/<run-hash>/`: resolved config, checkpoint, history, reports.
//!
//! Steps are idempotent: a step whose marker file exists is skipped unless
//! forced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate as eval_report, export_fusion_weights, FusionExport, MetricReport};
use crate::ingest::{
    generate_synthetic, inject_noise, parse_interactions, split_dataset, InteractionLog, Split, SplitSpec,
    SynthConfig,
};
use crate::semantic::{CacheHeader, EmbeddingCache, RemoteEncoder, StubEncoder, TextEncoder, STUB_NAME, STUB_VERSION};
use crate::temporal::{GapBucketizer, VocabConfig};
use crate::trainer::{
    load_checkpoint, save_checkpoint, train as train_model, Dataset, EpochRecord, Model, ModelConfig, Part,
    PromptRecord, SemanticFeatures, StopReason, Variant,
};
use crate::util::{canonical_hash, write_atomic};

/// Overrides the directory holding embedding caches.
pub const ENV_CACHE_DIR: &str = "TCDSR_CACHE_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines interaction file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interactions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthConfig>,
    /// Fraction of random interactions injected into training users.
    #[serde(default)]
    pub noise_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, valid: 0.1, test: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderBackend {
    /// Offline hash-based encoder.
    Stub,
    /// HTTP endpoint from the environment or `url`.
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub backend: EncoderBackend,
    pub dim: usize,
    pub version: String,
    pub seed: u64,
    pub concurrency: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { backend: EncoderBackend::Stub, dim: 64, version: STUB_VERSION.into(), seed: 0, concurrency: 4, url: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Interval-variance groups for the bucket study.
    pub buckets: usize,
    /// Users sampled when exporting fusion weights.
    pub fusion_sample: usize,
    /// Seeds of the multi-seed experiment suites.
    pub seeds: Vec<u64>,
    pub noise_ratios: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { buckets: 3, fusion_sample: 10, seeds: vec![0, 1, 2], noise_ratios: vec![0.0, 0.1, 0.2] }
    }
}

/// Everything a run depends on. `seed` drives the synthetic data, the
/// split, negatives, counterfactual sampling and model initialization;
/// `model.seed` is overwritten with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Sets `a.b.c = value` in a TOML tree; the value is parsed as a TOML
/// literal and falls back to a plain string.
fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?;
        node = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("{key}: parent is not a table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Value =
            text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolved()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    /// Applies the seed to the model and validates every section.
    pub fn resolved(mut self) -> Result<Self> {
        self.model.seed = self.seed;
        self.model.validate()?;
        self.split_spec().validate()?;
        match (&self.data.interactions, &self.data.synthetic) {
            (Some(_), None) => {}
            (None, Some(s)) => s.validate()?,
            _ => return Err(Error::Config("set exactly one of data.interactions and data.synthetic".into())),
        }
        if !(0.0..=1.0).contains(&self.data.noise_ratio) {
            return Err(Error::Config("data.noise_ratio must be in [0, 1]".into()));
        }
        if self.encoder.dim == 0 {
            return Err(Error::Config("encoder.dim must be positive".into()));
        }
        Ok(self)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { train: self.split.train, valid: self.split.valid, test: self.split.test, seed: self.seed }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything except the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        canonical_hash(&c)
    }

    /// Hash of the settings that shape the prepared dataset.
    pub fn data_hash(&self) -> String {
        #[derive(Serialize)]
        struct DataKey<'a> {
            seed: u64,
            data: &'a DataConfig,
            split: &'a SplitFractions,
            max_len: usize,
            num_negatives: usize,
            gap_scale: f64,
            gap_buckets: usize,
            abs_time_slots: usize,
        }
        let m = &self.model;
        canonical_hash(&DataKey {
            seed: self.seed,
            data: &self.data,
            split: &self.split,
            max_len: m.max_len,
            num_negatives: m.num_negatives,
            gap_scale: m.gap_scale,
            gap_buckets: m.gap_buckets,
            abs_time_slots: m.abs_time_slots,
        })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data").join(&self.data_hash()[..16])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join("runs").join(&self.hash()[..16])
    }

    pub fn with_variant(&self, v: Variant) -> Self {
        let mut c = self.clone();
        c.model.variant = v;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.model.seed = seed;
        if let Some(s) = &mut c.data.synthetic {
            s.seed = seed;
        }
        c
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

const PREPARED: &str = "prepared.json";
const TRAINED: &str = "train.json";
const CHECKPOINT: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub users: usize,
    pub interactions: usize,
    pub items: [usize; 2],
    pub instances: [usize; 3],
    pub prompts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop: StopReason,
    pub params: usize,
}

fn raw_log(cfg: &RunConfig) -> Result<InteractionLog> {
    match (&cfg.data.interactions, &cfg.data.synthetic) {
        (Some(p), _) => parse_interactions(p),
        (None, Some(s)) => generate_synthetic(s, s.seed),
        (None, None) => Err(Error::Config("no data source".into())),
    }
}

pub fn make_encoder(cfg: &EncoderConfig) -> Result<Box<dyn TextEncoder>> {
    Ok(match cfg.backend {
        EncoderBackend::Stub => Box::new(StubEncoder::new(cfg.dim, cfg.seed)),
        EncoderBackend::Remote => match &cfg.url {
            Some(url) => Box::new(RemoteEncoder::new(
                url.clone(),
                std::env::var(crate::semantic::ENV_ENCODER_TOKEN).ok(),
                cfg.dim,
                cfg.version.clone(),
            )),
            None => Box::new(RemoteEncoder::from_env(cfg.dim, cfg.version.clone())?),
        },
    })
}

fn open_cache(cfg: &RunConfig, encoder: &dyn TextEncoder) -> Result<EmbeddingCache> {
    let bucketizer = GapBucketizer::new(cfg.model.gap_scale, cfg.model.gap_buckets)?;
    let name = match cfg.encoder.backend {
        EncoderBackend::Stub => format!("{STUB_NAME}-{}", cfg.encoder.seed),
        EncoderBackend::Remote => encoder.name().to_string(),
    };
    let header = CacheHeader {
        encoder: name,
        version: encoder.version().to_string(),
        vocab_hash: VocabConfig::current(bucketizer).hash(),
        dim: encoder.dim(),
    };
    let dir = match std::env::var_os(ENV_CACHE_DIR) {
        Some(d) => PathBuf::from(d),
        None => cfg.data_dir(),
    };
    EmbeddingCache::open(&dir.join("embeddings.bin"), header)
}

/// Prepared inputs of a run, loaded from its data directory.
pub struct Prepared {
    pub log: InteractionLog,
    pub split: Split,
    pub dataset: Dataset,
}

fn prompt_records(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<PromptRecord>> {
    let v = cfg.model.variant;
    ds.prompt_records(v.prompt_mode(), v.counterfactual(), &cfg.model, cfg.seed)
}

/// Builds the dataset directory: interactions (with injected noise),
/// split, instance listing, prompts with counterfactuals for the configured
/// variant, and encodings of all of them in the embedding cache.
pub fn prepare(cfg: &RunConfig, force: bool) -> Result<PathBuf> {
    let dir = cfg.data_dir();
    let marker = dir.join(PREPARED);
    if marker.exists() && !force {
        log::info!("prepare: {} is up to date", dir.display());
        if cfg.model.variant.semantic() {
            // other variants share the directory but may need other prompts
            let p = load_prepared(cfg)?;
            semantic_features(cfg, &p.dataset)?;
        }
        return Ok(dir);
    }
    std::fs::create_dir_all(&dir)?;
    write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let raw = raw_log(cfg)?;
    let users: Vec<String> = raw.user_events().keys().cloned().collect();
    let split = split_dataset(&users, &cfg.split_spec())?;
    let log = if cfg.data.noise_ratio > 0.0 {
        inject_noise(&raw, &split.train, cfg.data.noise_ratio, cfg.seed)?
    } else {
        raw
    };
    log.write_jsonl(&dir.join("interactions.jsonl"))?;
    write_json(&dir.join("split.json"), &split)?;
    let ds = Dataset::build(&log, &split, &cfg.model, cfg.seed)?;

    #[derive(Serialize)]
    struct Listed<'a> {
        user: &'a str,
        domain: crate::ingest::Domain,
        target: usize,
        history: usize,
        negatives: &'a [usize],
    }
    let mut listing = String::new();
    for part in Part::ALL {
        for inst in ds.part(part) {
            let row = serde_json::json!({
                "part": part,
                "instance": Listed {
                    user: &ds.users[inst.user],
                    domain: inst.domain,
                    target: inst.target,
                    history: inst.view(crate::trainer::View::M).len(),
                    negatives: &inst.negatives,
                },
            });
            listing.push_str(&row.to_string());
            listing.push('\n');
        }
    }
    write_atomic(&dir.join("sequences.jsonl"), listing.as_bytes())?;

    let records = if cfg.model.variant.semantic() {
        let r = prompt_records(cfg, &ds)?;
        semantic_from_records(cfg, &ds, &r)?;
        r
    } else {
        vec![]
    };
    let summary = PrepareSummary {
        users: ds.users.len(),
        interactions: log.len(),
        items: ds.items,
        instances: [ds.train.len(), ds.valid.len(), ds.test.len()],
        prompts: records.len(),
    };
    write_json(&marker, &summary)?;
    log::info!("prepared {} ({} training instances)", dir.display(), ds.train.len());
    Ok(dir)
}

fn semantic_from_records(cfg: &RunConfig, ds: &Dataset, records: &[PromptRecord]) -> Result<SemanticFeatures> {
    let v = cfg.model.variant;
    let name = format!("prompts-{}{}.jsonl", serde_json::to_value(v.prompt_mode())?.as_str().unwrap_or("x"), if v.counterfactual() { "-cf" } else { "" });
    let path = cfg.data_dir().join(name);
    if !path.exists() {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        write_atomic(&path, text.as_bytes())?;
    }
    let encoder = make_encoder(&cfg.encoder)?;
    let mut cache = open_cache(cfg, encoder.as_ref())?;
    SemanticFeatures::build(ds, records, encoder.as_ref(), &mut cache, cfg.model.d_mid, cfg.encoder.concurrency)
}

/// Semantic features for the configured variant.
pub fn semantic_features(cfg: &RunConfig, ds: &Dataset) -> Result<SemanticFeatures> {
    let records = prompt_records(cfg, ds)?;
    semantic_from_records(cfg, ds, &records)
}

pub fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    let dir = cfg.data_dir();
    if !dir.join(PREPARED).exists() {
        return Err(Error::MissingArtifact { path: dir.join(PREPARED), command: "prepare" });
    }
    let log = parse_interactions(&dir.join("interactions.jsonl"))?;
    let split: Split = read_json(&dir.join("split.json"))?;
    let dataset = Dataset::build(&log, &split, &cfg.model, cfg.seed)?;
    Ok(Prepared { log, split, dataset })
}

/// Trains the configured variant and writes checkpoint and history. A
/// diverged run keeps its best checkpoint and reports an error.
pub fn train(cfg: &RunConfig, force: bool) -> Result<PathBuf> {
    let run = cfg.run_dir();
    if run.join(TRAINED).exists() && !force {
        log::info!("train: {} is up to date", run.display());
        return Ok(run);
    }
    let p = load_prepared(cfg)?;
    let sem = if cfg.model.variant.semantic() { Some(semantic_features(cfg, &p.dataset)?) } else { None };
    std::fs::create_dir_all(&run)?;
    write_atomic(&run.join("config.toml"), cfg.to_toml().as_bytes())?;
    let model = Model::new(cfg.model.clone(), p.dataset.shape(), sem.as_ref().map(|s| s.dim()))?;
    let outcome = train_model(model, &p.dataset, sem.as_ref())?;
    save_checkpoint(&outcome.model, &run.join(CHECKPOINT))?;
    write_json(&run.join("history.json"), &outcome.history)?;
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        stop: outcome.stop.clone(),
        params: outcome.model.param_count(),
    };
    if let StopReason::Diverged(what) = &outcome.stop {
        return Err(Error::NonFinite(format!("training diverged ({what}); best checkpoint kept in {}", run.display())));
    }
    write_json(&run.join(TRAINED), &summary)?;
    Ok(run)
}

pub fn load_trained(cfg: &RunConfig) -> Result<Model> {
    let path = cfg.run_dir().join(CHECKPOINT);
    if !path.exists() {
        return Err(Error::MissingArtifact { path, command: "train" });
    }
    load_checkpoint(&path)
}

pub fn history(cfg: &RunConfig) -> Result<Vec<EpochRecord>> {
    read_json(&cfg.run_dir().join("history.json"))
}

/// Test-split report, optionally with interval-variance buckets. Written
/// to `report.json` (`report-buckets.json` with buckets).
pub fn evaluate(cfg: &RunConfig, force: bool, buckets: Option<usize>) -> Result<MetricReport> {
    let name = if buckets.is_some() { "report-buckets.json" } else { "report.json" };
    let path = cfg.run_dir().join(name);
    if path.exists() && !force {
        return read_json(&path);
    }
    let model = load_trained(cfg)?;
    let p = load_prepared(cfg)?;
    let sem = if model.variant().semantic() { Some(semantic_features(cfg, &p.dataset)?) } else { None };
    let report = eval_report(&model, &p.dataset, Part::Test, sem.as_ref(), &cfg.hash(), buckets)?;
    write_json(&path, &report)?;
    Ok(report)
}

pub fn export_weights(cfg: &RunConfig) -> Result<FusionExport> {
    let model = load_trained(cfg)?;
    let p = load_prepared(cfg)?;
    let sem = if model.variant().semantic() { Some(semantic_features(cfg, &p.dataset)?) } else { None };
    let export = export_fusion_weights(&model, &p.dataset, Part::Test, sem.as_ref(), cfg.eval.fusion_sample, cfg.seed)?;
    write_json(&cfg.run_dir().join("fusion-weights.json"), &export)?;
    Ok(export)
}

/// prepare, train and evaluate in sequence.
pub fn run_all(cfg: &RunConfig, force: bool) -> Result<MetricReport> {
    prepare(cfg, force)?;
    train(cfg, force)?;
    evaluate(cfg, force, None)
}
