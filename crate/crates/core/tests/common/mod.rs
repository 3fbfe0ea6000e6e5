#![allow(dead_code)]

pub mod criteria;
pub mod grad;

use tcdsr::autograd::{Graph, Mat, Var};
use tcdsr::encoder::SequenceBatch;
use tcdsr::ingest::{generate_synthetic, split_dataset, SplitSpec, SynthConfig};
use tcdsr::nn::ParamStore;
use tcdsr::semantic::{CacheHeader, EmbeddingCache, StubEncoder};
use tcdsr::trainer::{Dataset, Model, ModelConfig, SemanticFeatures, Variant};

/// Tiny synthetic setup: d = 8, N = 4.
pub fn toy(variant: Variant, seed: u64) -> (Dataset, Option<SemanticFeatures>, Model) {
    let synth = SynthConfig { users: 12, items_a: 15, items_b: 15, min_events: 5, max_events: 8, ..SynthConfig::desk(seed) };
    let log = generate_synthetic(&synth, seed).unwrap();
    let users: Vec<String> = log.user_events().keys().cloned().collect();
    let split = split_dataset(&users, &SplitSpec { seed, ..Default::default() }).unwrap();
    let cfg = ModelConfig {
        dim: 8,
        max_len: 4,
        d_mid: 6,
        batch_size: 2,
        num_negatives: 5,
        variant,
        seed,
        ..ModelConfig::desk()
    };
    let ds = Dataset::build(&log, &split, &cfg, seed).unwrap();
    let sem = variant.semantic().then(|| {
        let dir = tempfile::tempdir().unwrap();
        let enc = StubEncoder::new(16, seed);
        let header = CacheHeader { encoder: "stub".into(), version: "1".into(), vocab_hash: "toy".into(), dim: 16 };
        let mut cache = EmbeddingCache::open(&dir.path().join("c.bin"), header).unwrap();
        let rec = ds.prompt_records(variant.prompt_mode(), variant.counterfactual(), &cfg, seed).unwrap();
        SemanticFeatures::build(&ds, &rec, &enc, &mut cache, cfg.d_mid, 1).unwrap()
    });
    let model = Model::new(cfg, ds.shape(), sem.as_ref().map(|s| s.dim())).unwrap();
    (ds, sem, model)
}

/// A padded batch from explicit per-sequence (gap, flag) lists.
pub fn seq_batch(seqs: &[Vec<(f64, usize)>], seq_len: usize) -> SequenceBatch {
    let mut sb = SequenceBatch { batch: seqs.len(), seq_len, ..Default::default() };
    for s in seqs {
        for t in 0..seq_len {
            let real = t < s.len();
            let (gap, flag) = if real { s[t] } else { (0.0, 0) };
            sb.items.push(if real { 1 + t } else { 0 });
            sb.rel.push(if real { 1 + t } else { 0 });
            sb.abs.push(if real { 1 } else { 0 });
            sb.norm_gap.push(gap);
            sb.flags.push(flag);
            sb.mask.push(real);
        }
        sb.lengths.push(s.len());
    }
    sb
}

pub fn mat(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |(r, c)| f(r, c))
}

/// Worst relative error, number of tensors compared, and the worst tensor.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub error: f64,
    pub compared: usize,
    pub worst: String,
}

impl GradReport {
    pub fn ok(&self, tol: f64) -> bool {
        self.compared > 0 && self.error < tol
    }
}

/// Largest per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the
/// analytic gradient and central differences, over at most `per_tensor`
/// entries of each parameter. Tensors whose gradient is zero on both sides
/// are skipped.
pub fn max_grad_error(ps: &ParamStore, per_tensor: usize, build: impl Fn(&ParamStore, &mut Graph) -> Var) -> GradReport {
    let mut g = Graph::new();
    let loss = build(ps, &mut g);
    let grads = g.backward(loss);
    let eval = |p: &ParamStore| {
        let mut g = Graph::new();
        let l = build(p, &mut g);
        g.scalar(l)
    };
    let mut worst = GradReport { error: 0.0, compared: 0, worst: String::new() };
    let mut work = ps.clone();
    for id in ps.ids() {
        let value = ps.get(id);
        let n = value.len();
        let stride = (n / per_tensor).max(1);
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for flat in (0..n).step_by(stride).take(per_tensor) {
            let (r, c) = (flat / value.ncols(), flat % value.ncols());
            let x = value[[r, c]];
            let h = 1e-5 * x.abs().max(1.0);
            work.get_mut(id)[[r, c]] = x + h;
            let up = eval(&work);
            work.get_mut(id)[[r, c]] = x - h;
            let down = eval(&work);
            work.get_mut(id)[[r, c]] = x;
            num.push((up - down) / (2.0 * h));
            ana.push(grads.get(id.0).map_or(0.0, |m| m[[r, c]]));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = num.iter().zip(&ana).map(|(a, b)| a - b).collect();
        let scale = norm(&num).max(norm(&ana));
        if scale < 1e-9 {
            continue;
        }
        worst.compared += 1;
        let err = norm(&diff) / scale;
        if err > worst.error {
            worst.error = err;
            worst.worst = ps.name(id).to_string();
        }
    }
    worst
}

/// Brute-force rank: sort all candidates by descending score, placing the
/// positive after every candidate it ties with, and read off its position.
pub fn oracle_rank(scores: &[f64], positive: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then((a == positive).cmp(&(b == positive))));
    order.iter().position(|&i| i == positive).unwrap() + 1
}

/// `[mrr, ndcg5, ndcg10, hr1, hr5, hr10]` averaged over instances given as
/// (scores, positive index).
pub fn oracle_means(instances: &[(Vec<f64>, usize)]) -> [f64; 6] {
    let mut sums = [0.0; 6];
    for (scores, pos) in instances {
        let r = oracle_rank(scores, *pos) as f64;
        let dcg = |k: f64| if r <= k { 1.0 / (r + 1.0).log2() } else { 0.0 };
        let hit = |k: f64| if r <= k { 1.0 } else { 0.0 };
        let vals = [1.0 / r, dcg(5.0), dcg(10.0), hit(1.0), hit(5.0), hit(10.0)];
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
        }
    }
    sums.map(|s| s / instances.len() as f64)
}

pub fn summary_vec(m: &tcdsr::eval::MetricSummary) -> [f64; 6] {
    [m.mrr, m.ndcg5, m.ndcg10, m.hr1, m.hr5, m.hr10]
}
