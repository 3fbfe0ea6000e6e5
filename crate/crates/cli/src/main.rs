use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tcdsr::eval::{run_experiment_suite, MetricReport, Suite, SuiteResult};
use tcdsr::pipeline::{self, RunConfig};
use tcdsr::trainer::Variant;
use tcdsr::Error;

/// Time-aware cross-domain sequential recommendation experiments.
#[derive(Parser, Debug)]
#[command(name = "tcdsr", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "tcdsr.toml")]
    config: PathBuf,

    /// Override a config key, e.g. `--set model.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Redo steps whose artifacts already exist.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the dataset directory: interactions, split, sequences, prompts, embeddings.
    Prepare,
    /// Train the configured variant.
    Train,
    /// Score the test split and write a metric report.
    Evaluate {
        /// Also report metrics per interval-variance bucket.
        #[arg(long)]
        buckets: Option<usize>,
        /// Evaluate another variant than the configured one.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Ablation study over V1..V5 and the full model.
    Ablate,
    /// Retrain under injected training noise.
    Noise,
    /// Compare variants across interval-variance buckets.
    Buckets,
    /// Semantic-only variants (title only, title + time, counterfactual).
    SemanticEval,
    /// Same-domain interval distribution of the dataset.
    Analyze,
    /// Export per-user fusion gate vectors of a trained model.
    ExportWeights,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let cfg = RunConfig::load(&cli.config, &cli.overrides)?;
    match &cli.command {
        Command::Evaluate { variant: Some(v), .. } => Ok(cfg.with_variant(*v)),
        _ => Ok(cfg),
    }
}

fn print_report(r: &MetricReport) {
    println!("{} ({:?}) config {}", r.variant, r.part, &r.config_hash[..16]);
    for (d, m) in &r.domains {
        println!(
            "  domain {d}: n={} MRR {:.4} NDCG@5 {:.4} NDCG@10 {:.4} HR@1 {:.4} HR@5 {:.4} HR@10 {:.4}",
            m.count, m.mrr, m.ndcg5, m.ndcg10, m.hr1, m.hr5, m.hr10
        );
    }
    for b in r.buckets.as_deref().unwrap_or_default() {
        let parts: Vec<String> = b.domains.iter().map(|(d, m)| format!("{d}: n={} MRR {:.4}", m.count, m.mrr)).collect();
        println!("  bucket {}: {}", b.bucket, parts.join(", "));
    }
}

fn print_suite(r: &SuiteResult) {
    println!("suite {} config {}", r.suite, &r.config_hash[..16]);
    if let Some(t) = &r.intervals {
        for (d, shares) in &t.domains {
            let cells: Vec<String> = t.bins.iter().zip(shares).map(|(b, s)| format!("{b} {s:.3}")).collect();
            println!("  domain {d}: {}", cells.join(", "));
        }
    }
    for s in &r.summary {
        let bucket = s.bucket.map(|b| format!(" bucket {b}")).unwrap_or_default();
        let domains: Vec<String> = s.domain_mrr.iter().map(|(d, m)| format!("{d} {m:.4}")).collect();
        println!(
            "  {:<12} noise {:.2}{bucket}: MRR {:.4} over {} seed(s) ({})",
            s.variant.name(),
            s.noise_ratio,
            s.mrr,
            s.seeds,
            domains.join(", ")
        );
    }
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let suite = |s: Suite| -> Result<(), Error> {
        let r = run_experiment_suite(cfg, s, cli.force)?;
        print_suite(&r);
        println!("results in {}", tcdsr::eval::suite_dir(cfg, s).display());
        Ok(())
    };
    match &cli.command {
        Command::Prepare => {
            let dir = pipeline::prepare(cfg, cli.force)?;
            println!("{}", dir.display());
        }
        Command::Train => {
            pipeline::prepare(cfg, false)?;
            let dir = pipeline::train(cfg, cli.force)?;
            println!("{}", dir.display());
        }
        Command::Evaluate { buckets, .. } => {
            let report = pipeline::evaluate(cfg, cli.force, *buckets)?;
            print_report(&report);
        }
        Command::Ablate => suite(Suite::Ablation)?,
        Command::Noise => suite(Suite::Noise)?,
        Command::Buckets => suite(Suite::Buckets)?,
        Command::SemanticEval => suite(Suite::Semantic)?,
        Command::Analyze => suite(Suite::Intervals)?,
        Command::ExportWeights => {
            let export = pipeline::export_weights(cfg)?;
            println!("exported fusion weights for {} users to {}", export.users.len(), cfg.run_dir().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::MissingArtifact { .. }) | Err(e @ Error::Config(_)) => {
            log::error!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(2)
        }
    }
}
