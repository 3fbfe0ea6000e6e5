//! Prepare / train / evaluate plumbing on a small synthetic configuration.

use std::path::Path;

use tcdsr::pipeline::{self, RunConfig};
use tcdsr::trainer::{load_checkpoint, Part, Variant};
use tcdsr::Error;

fn config(out: &Path, variant: &str) -> RunConfig {
    let text = format!(
        r#"
seed = 5
out_dir = "{}"
[data.synthetic]
users = 30
items_a = 40
items_b = 40
mean_gap_days_a = 0.5
mean_gap_days_b = 2.0
drift_rate = 0.05
seasonal_frac = 0.2
min_events = 6
max_events = 12
[model]
variant = "{variant}"
dim = 8
d_mid = 8
max_len = 6
batch_size = 16
epochs = 2
num_negatives = 19
[encoder]
dim = 16
[eval]
seeds = [5]
"#,
        out.display()
    );
    RunConfig::from_toml(&text, &[]).unwrap()
}

#[test]
fn prepare_writes_the_dataset_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "full");
    let dir = pipeline::prepare(&cfg, false).unwrap();
    for f in ["config.toml", "interactions.jsonl", "split.json", "sequences.jsonl", "prompts-tokens-cf.jsonl", "embeddings.bin", "prepared.json"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let prompts = std::fs::read_to_string(dir.join("prompts-tokens-cf.jsonl")).unwrap();
    for kind in ["\"orig\"", "\"small\"", "\"big\""] {
        assert!(prompts.contains(kind), "no {kind} prompts");
    }
    let listed = std::fs::read_to_string(dir.join("sequences.jsonl")).unwrap().lines().count();
    let p = pipeline::load_prepared(&cfg).unwrap();
    assert_eq!(listed, p.dataset.train.len() + p.dataset.valid.len() + p.dataset.test.len());
}

#[test]
fn missing_prerequisites_name_the_command() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "v1");
    match pipeline::train(&cfg, false) {
        Err(Error::MissingArtifact { command, .. }) => assert_eq!(command, "prepare"),
        other => panic!("{other:?}"),
    }
    pipeline::prepare(&cfg, false).unwrap();
    let err = pipeline::evaluate(&cfg, false, None).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact { command: "train", .. }));
    assert!(err.to_string().contains("train"));
}

#[test]
fn repeated_steps_are_skipped_and_outputs_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(&tmp.path().join("a"), "full");
    let report = pipeline::run_all(&cfg, false).unwrap();
    let ckpt = cfg.run_dir().join("checkpoint.json");
    let stamp = std::fs::metadata(&ckpt).unwrap().modified().unwrap();
    pipeline::train(&cfg, false).unwrap();
    assert_eq!(std::fs::metadata(&ckpt).unwrap().modified().unwrap(), stamp);

    // The run directory's config alone reproduces the report byte for byte.
    let saved = std::fs::read_to_string(cfg.run_dir().join("config.toml")).unwrap();
    let out_b = tmp.path().join("b");
    let again = RunConfig::from_toml(&saved, &[format!("out_dir={:?}", out_b.display().to_string())]).unwrap();
    assert_eq!(again.hash(), cfg.hash());
    let report_b = pipeline::run_all(&again, false).unwrap();
    assert_eq!(report, report_b);
    let bytes = |c: &RunConfig| std::fs::read(c.run_dir().join("report.json")).unwrap();
    assert_eq!(bytes(&cfg), bytes(&again));
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(again.run_dir().join("checkpoint.json")).unwrap());

    let export = pipeline::export_weights(&cfg).unwrap();
    assert!(!export.users.is_empty());
    for row in export.a.iter().chain(&export.b) {
        assert_eq!(row.len(), cfg.model.dim);
        assert!(row.iter().all(|w| *w > 0.0 && *w < 1.0));
    }
}

#[test]
fn checkpoint_round_trip_scores_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "v2");
    pipeline::prepare(&cfg, false).unwrap();
    pipeline::train(&cfg, false).unwrap();
    let model = load_checkpoint(&cfg.run_dir().join("checkpoint.json")).unwrap();
    let p = pipeline::load_prepared(&cfg).unwrap();
    let a = model.score_part(&p.dataset, Part::Test, None).unwrap();
    let b = pipeline::load_trained(&cfg).unwrap().score_part(&p.dataset, Part::Test, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(model.variant(), Variant::V2);
    // Re-saving the loaded model gives the same file.
    let again = tmp.path().join("again.json");
    tcdsr::trainer::save_checkpoint(&model, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(cfg.run_dir().join("checkpoint.json")).unwrap());
}

#[test]
fn noise_changes_only_training_users() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = config(tmp.path(), "v1");
    let mut noisy = clean.clone();
    noisy.data.noise_ratio = 0.2;
    assert_ne!(clean.data_dir(), noisy.data_dir());
    pipeline::prepare(&clean, false).unwrap();
    pipeline::prepare(&noisy, false).unwrap();
    let (c, n) = (pipeline::load_prepared(&clean).unwrap(), pipeline::load_prepared(&noisy).unwrap());
    assert!(n.log.len() > c.log.len());
    let held_out = |p: &pipeline::Prepared| {
        let keep: std::collections::BTreeSet<&String> = p.split.valid.iter().chain(&p.split.test).collect();
        p.log.interactions().iter().filter(|e| keep.contains(&e.user_id)).cloned().collect::<Vec<_>>()
    };
    assert_eq!(held_out(&c), held_out(&n));
}
