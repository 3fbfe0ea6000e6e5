use std::path::Path;
use std::process::{Command, Output};

fn tcdsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcdsr"))
        .current_dir(dir)
        .env("RUST_LOG", "info")
        .env_remove("TCDSR_CACHE_DIR")
        .args(args)
        .output()
        .unwrap()
}

const CONFIG: &str = r#"
seed = 1
out_dir = "out"
[data.synthetic]
users = 24
items_a = 30
items_b = 30
mean_gap_days_a = 0.5
mean_gap_days_b = 2.0
drift_rate = 0.05
seasonal_frac = 0.2
min_events = 6
max_events = 10
[model]
variant = "full"
dim = 8
d_mid = 8
max_len = 6
batch_size = 16
epochs = 1
num_negatives = 19
[encoder]
dim = 16
[eval]
seeds = [1]
fusion_sample = 4
"#;

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(tcdsr(tmp.path(), &[]).status.code(), Some(1));
    assert_eq!(tcdsr(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(tcdsr(tmp.path(), &["--help"]).status.code(), Some(0));
    let missing = tcdsr(tmp.path(), &["prepare", "--config", "nope.toml"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(text(&missing).contains("nope.toml"));
    std::fs::write(tmp.path().join("c.toml"), CONFIG).unwrap();
    let bad = tcdsr(tmp.path(), &["prepare", "-c", "c.toml", "--set", "model.variant=v9"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(text(&bad).contains("v9"));
}

#[test]
fn commands_run_in_order_and_skip_finished_work() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tcdsr.toml"), CONFIG).unwrap();
    let early = tcdsr(tmp.path(), &["evaluate"]);
    assert_eq!(early.status.code(), Some(1));
    assert!(text(&early).contains("`train`"), "{}", text(&early));

    let prep = tcdsr(tmp.path(), &["prepare"]);
    assert!(prep.status.success(), "{}", text(&prep));
    let train = tcdsr(tmp.path(), &["train"]);
    assert!(train.status.success(), "{}", text(&train));
    let again = tcdsr(tmp.path(), &["train"]);
    assert!(again.status.success());
    assert!(text(&again).contains("up to date"), "{}", text(&again));

    let eval = tcdsr(tmp.path(), &["evaluate", "--buckets", "2"]);
    assert!(eval.status.success(), "{}", text(&eval));
    let out = String::from_utf8_lossy(&eval.stdout);
    assert!(out.contains("MRR") && out.contains("bucket 1"), "{out}");

    let export = tcdsr(tmp.path(), &["export-weights"]);
    assert!(export.status.success(), "{}", text(&export));
    let analyze = tcdsr(tmp.path(), &["analyze"]);
    assert!(analyze.status.success(), "{}", text(&analyze));
    assert!(String::from_utf8_lossy(&analyze.stdout).contains("domain A"));

    let sem = tcdsr(tmp.path(), &["semantic-eval", "--set", "model.epochs=1"]);
    assert!(sem.status.success(), "{}", text(&sem));
    let s = String::from_utf8_lossy(&sem.stdout);
    for v in ["title_only", "title_time", "cf_enhance"] {
        assert!(s.contains(v), "{s}");
    }
}
