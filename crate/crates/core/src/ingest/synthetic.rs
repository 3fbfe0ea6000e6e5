//! Desk-scale synthetic interaction generator.
//!
//! Every user carries a latent preference per domain (a shared component
//! plus a domain-specific one) that random-walks between events with
//! variance proportional to elapsed time. The last consumed item adds a
//! short-term intent that fades with the gap. Items cluster into topics
//! shared by both domains; seasonal items get an affinity boost only inside
//! their active window. Titles read `"<domain>/<topic>/<item-id>"`.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Domain, Interaction, InteractionLog};
use crate::error::{Error, Result};
use crate::temporal::DAY;
use crate::util::{rng_for, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub items_a: usize,
    pub items_b: usize,
    /// Median gap between consecutive same-domain events, in days.
    pub mean_gap_days_a: f64,
    pub mean_gap_days_b: f64,
    /// Latent random-walk scale per square-root day.
    pub drift_rate: f64,
    pub seasonal_frac: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::min_events")]
    pub min_events: usize,
    #[serde(default = "defaults::max_events")]
    pub max_events: usize,
    #[serde(default = "defaults::topics")]
    pub topics: usize,
    #[serde(default = "defaults::latent_dim")]
    pub latent_dim: usize,
    /// Softmax inverse temperature of item choice.
    #[serde(default = "defaults::affinity")]
    pub affinity: f64,
    /// Log-space standard deviation of gaps.
    #[serde(default = "defaults::gap_log_std")]
    pub gap_log_std: f64,
    #[serde(default = "defaults::intent_strength")]
    pub intent_strength: f64,
    #[serde(default = "defaults::intent_decay_days")]
    pub intent_decay_days: f64,
    /// Weight of the cross-domain shared preference component, in [0, 1].
    #[serde(default = "defaults::shared_pref")]
    pub shared_pref: f64,
    #[serde(default = "defaults::season_days")]
    pub season_days: f64,
    #[serde(default = "defaults::seasonal_boost")]
    pub seasonal_boost: f64,
    #[serde(default = "defaults::start_epoch")]
    pub start_epoch: i64,
}

mod defaults {
    pub fn min_events() -> usize {
        15
    }
    pub fn max_events() -> usize {
        40
    }
    pub fn topics() -> usize {
        20
    }
    pub fn latent_dim() -> usize {
        8
    }
    pub fn affinity() -> f64 {
        6.0
    }
    pub fn gap_log_std() -> f64 {
        1.2
    }
    pub fn intent_strength() -> f64 {
        1.0
    }
    pub fn intent_decay_days() -> f64 {
        1.0
    }
    pub fn shared_pref() -> f64 {
        0.6
    }
    pub fn season_days() -> f64 {
        30.0
    }
    pub fn seasonal_boost() -> f64 {
        3.0
    }
    pub fn start_epoch() -> i64 {
        1_577_836_800
    }
}

impl SynthConfig {
    /// The desk-scale dataset used by the experiment suites.
    pub fn desk(seed: u64) -> Self {
        Self {
            users: 200,
            items_a: 500,
            items_b: 500,
            mean_gap_days_a: 0.5,
            mean_gap_days_b: 2.0,
            drift_rate: 0.05,
            seasonal_frac: 0.2,
            seed,
            min_events: defaults::min_events(),
            max_events: defaults::max_events(),
            topics: defaults::topics(),
            latent_dim: defaults::latent_dim(),
            affinity: defaults::affinity(),
            gap_log_std: defaults::gap_log_std(),
            intent_strength: defaults::intent_strength(),
            intent_decay_days: defaults::intent_decay_days(),
            shared_pref: defaults::shared_pref(),
            season_days: defaults::season_days(),
            seasonal_boost: defaults::seasonal_boost(),
            start_epoch: defaults::start_epoch(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: SynthConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("users", self.users),
            ("items_a", self.items_a),
            ("items_b", self.items_b),
            ("topics", self.topics),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.min_events < 4 || self.max_events < self.min_events {
            return Err(Error::Config("need 4 ≤ min_events ≤ max_events".into()));
        }
        for (name, v) in [
            ("mean_gap_days_a", self.mean_gap_days_a),
            ("mean_gap_days_b", self.mean_gap_days_b),
            ("season_days", self.season_days),
            ("intent_decay_days", self.intent_decay_days),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.drift_rate < 0.0 || !(0.0..=1.0).contains(&self.seasonal_frac) || !(0.0..=1.0).contains(&self.shared_pref) {
            return Err(Error::Config("drift_rate ≥ 0, seasonal_frac and shared_pref in [0,1]".into()));
        }
        Ok(())
    }
}

struct Catalog {
    domain: Domain,
    ids: Vec<String>,
    titles: Vec<String>,
    emb: Array2<f64>,
    /// Active window `[start, end)` of seasonal items.
    season: Vec<Option<(i64, i64)>>,
}

fn unit(rng: &mut Rng, dim: usize) -> Array1<f64> {
    let v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.dot(&v).sqrt().max(1e-12);
    v / n
}

fn normalize(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt().max(1e-12);
    v / n
}

fn catalog(cfg: &SynthConfig, domain: Domain, count: usize, topics: &[Array1<f64>], rng: &mut Rng) -> Catalog {
    let prefix = match domain {
        Domain::A => "a",
        Domain::B => "b",
    };
    let mut emb = Array2::zeros((count, cfg.latent_dim));
    let mut ids = Vec::with_capacity(count);
    let mut titles = Vec::with_capacity(count);
    for i in 0..count {
        let topic = i % topics.len();
        let noise = unit(rng, cfg.latent_dim) * 0.5;
        emb.row_mut(i).assign(&normalize(&topics[topic] + &noise));
        let id = format!("{prefix}{:04}", i + 1);
        titles.push(format!("{domain}/topic{topic:02}/{id}"));
        ids.push(id);
    }
    Catalog { domain, ids, titles, emb, season: vec![None; count] }
}

struct Timeline {
    user: String,
    events: Vec<(i64, Domain)>,
}

fn timeline(cfg: &SynthConfig, user: usize) -> Timeline {
    let mut rng = rng_for(cfg.seed, &format!("synthetic/timeline/{user}"));
    let n_total = rng.gen_range(cfg.min_events..=cfg.max_events);
    let (ra, rb) = (1.0 / cfg.mean_gap_days_a, 1.0 / cfg.mean_gap_days_b);
    let p_a = ra / (ra + rb);
    let mut n_a = (0..n_total).filter(|_| rng.gen_bool(p_a)).count();
    n_a = n_a.clamp(2, n_total - 2);
    let n_b = n_total - n_a;
    let start = cfg.start_epoch + rng.gen_range(0..180 * DAY);
    let mut events = Vec::with_capacity(n_total);
    for (domain, n, median) in [(Domain::A, n_a, cfg.mean_gap_days_a), (Domain::B, n_b, cfg.mean_gap_days_b)] {
        let dist = LogNormal::new((median * DAY as f64).ln(), cfg.gap_log_std).expect("valid lognormal");
        let mut t = start + rng.gen_range(0..(median * DAY as f64) as i64 + 1);
        for _ in 0..n {
            events.push((t, domain));
            t += (dist.sample(&mut rng).round() as i64).max(1);
        }
    }
    events.sort();
    events.dedup_by_key(|e| e.0);
    Timeline { user: format!("u{:04}", user + 1), events }
}

/// Generates a log deterministically from `cfg` and `seed`.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<InteractionLog> {
    generate_traced(cfg, seed).map(|(log, _)| log)
}

/// Per event: user, domain and the item with the highest long-run affinity.
type TopTrace = Vec<(String, Domain, usize)>;

fn generate_traced(cfg: &SynthConfig, seed: u64) -> Result<(InteractionLog, TopTrace)> {
    cfg.validate()?;
    let cfg = SynthConfig { seed, ..cfg.clone() };
    let mut rng = rng_for(seed, "synthetic/items");
    let topics: Vec<_> = (0..cfg.topics).map(|_| unit(&mut rng, cfg.latent_dim)).collect();
    let mut catalogs = [
        catalog(&cfg, Domain::A, cfg.items_a, &topics, &mut rng),
        catalog(&cfg, Domain::B, cfg.items_b, &topics, &mut rng),
    ];

    let timelines: Vec<Timeline> = (0..cfg.users).map(|u| timeline(&cfg, u)).collect();
    let t_min = timelines.iter().filter_map(|t| t.events.first()).map(|e| e.0).min().unwrap_or(cfg.start_epoch);
    let t_max = timelines.iter().filter_map(|t| t.events.last()).map(|e| e.0).max().unwrap_or(cfg.start_epoch);
    let season = (cfg.season_days * DAY as f64) as i64;
    for cat in catalogs.iter_mut() {
        let n = cat.ids.len();
        let n_seasonal = (n as f64 * cfg.seasonal_frac).round() as usize;
        for i in rand::seq::index::sample(&mut rng, n, n_seasonal) {
            let latest = (t_max - season).max(t_min);
            let s = rng.gen_range(t_min..=latest);
            cat.season[i] = Some((s, s + season));
        }
    }

    let mut out = Vec::new();
    let mut trace = Vec::new();
    let shared = cfg.shared_pref.sqrt();
    let own = (1.0 - cfg.shared_pref).sqrt();
    for tl in &timelines {
        let mut rng = rng_for(seed, &format!("synthetic/choices/{}", tl.user));
        let mut common = unit(&mut rng, cfg.latent_dim);
        let mut specific = [unit(&mut rng, cfg.latent_dim), unit(&mut rng, cfg.latent_dim)];
        let mut last: Option<(Array1<f64>, i64)> = None;
        let mut prev_t = None;
        for &(t, domain) in &tl.events {
            if let Some(p) = prev_t {
                let days = (t - p) as f64 / DAY as f64;
                let scale = cfg.drift_rate * days.sqrt();
                if scale > 0.0 {
                    common = normalize(&common + &(unit(&mut rng, cfg.latent_dim) * scale));
                    for s in specific.iter_mut() {
                        *s = normalize(&*s + &(unit(&mut rng, cfg.latent_dim) * scale));
                    }
                }
            }
            prev_t = Some(t);
            let pref = &common * shared + &specific[domain.index()] * own;
            let cat = &catalogs[domain.index()];
            let mut logits = cat.emb.dot(&pref) * cfg.affinity;
            let top = (0..logits.len()).max_by(|a, b| logits[*a].total_cmp(&logits[*b])).unwrap_or(0);
            trace.push((tl.user.clone(), domain, top));
            if let Some((v, lt)) = &last {
                let fade = (-((t - lt) as f64 / DAY as f64) / cfg.intent_decay_days).exp();
                logits = logits + cat.emb.dot(v) * (cfg.affinity * cfg.intent_strength * fade);
            }
            for (i, s) in cat.season.iter().enumerate() {
                if let Some((a, b)) = s {
                    if (*a..*b).contains(&t) {
                        logits[i] += cfg.seasonal_boost;
                    }
                }
            }
            let choice = sample_softmax(logits.as_slice().expect("contiguous"), &mut rng);
            last = Some((cat.emb.row(choice).to_owned(), t));
            out.push(Interaction {
                user_id: tl.user.clone(),
                item_id: cat.ids[choice].clone(),
                domain: cat.domain,
                timestamp: t,
                title: Some(cat.titles[choice].clone()),
            });
        }
    }
    Ok((InteractionLog::new(out)?, trace))
}

fn sample_softmax(logits: &[f64], rng: &mut Rng) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::build_user_sequences;
    use std::collections::HashMap;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { users: 40, items_a: 60, items_b: 60, ..SynthConfig::desk(seed) }
    }

    fn median(mut v: Vec<i64>) -> i64 {
        v.sort_unstable();
        v[v.len() / 2]
    }

    #[test]
    fn domain_gap_medians_follow_config() {
        let cfg = SynthConfig { users: 400, ..SynthConfig::desk(3) };
        let log = generate_synthetic(&cfg, 3).unwrap();
        assert!(log.len() >= 10_000, "{} events", log.len());
        let seqs = build_user_sequences(&log, 1_000).unwrap();
        let ga: Vec<i64> = seqs.values().flat_map(|s| s.gaps_a[1..].to_vec()).collect();
        let gb: Vec<i64> = seqs.values().flat_map(|s| s.gaps_b[1..].to_vec()).collect();
        assert!(median(ga) < median(gb));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic(&small(5), 5).unwrap();
        let b = generate_synthetic(&small(5), 5).unwrap();
        let c = generate_synthetic(&small(5), 6).unwrap();
        assert_eq!(a.interactions(), b.interactions());
        assert_ne!(a.interactions(), c.interactions());
    }

    #[test]
    fn titles_encode_domain_and_topic() {
        let log = generate_synthetic(&small(1), 1).unwrap();
        for it in log.interactions().iter().take(20) {
            let title = it.title.as_deref().unwrap();
            let parts: Vec<_> = title.split('/').collect();
            assert_eq!(parts.len(), 3);
            assert_eq!(parts[0], it.domain.to_string());
            assert!(parts[1].starts_with("topic"));
            assert_eq!(parts[2], it.item_id);
        }
    }

    fn top_changes(cfg: &SynthConfig) -> usize {
        let (_, trace) = generate_traced(cfg, cfg.seed).unwrap();
        let mut last: HashMap<(String, Domain), usize> = HashMap::new();
        let mut changes = 0;
        for (user, domain, top) in trace {
            if let Some(prev) = last.insert((user, domain), top) {
                changes += usize::from(prev != top);
            }
        }
        changes
    }

    #[test]
    fn frozen_latent_keeps_the_top_item() {
        assert_eq!(top_changes(&SynthConfig { drift_rate: 0.0, ..small(2) }), 0);
        assert!(top_changes(&SynthConfig { drift_rate: 0.3, ..small(2) }) > 0);
    }

    /// Pooled chi-square statistic of item timing against the overall event
    /// timing, per degree of freedom.
    fn timing_dispersion(log: &InteractionLog) -> f64 {
        let ts: Vec<i64> = log.interactions().iter().map(|i| i.timestamp).collect();
        let (lo, hi) = (*ts.iter().min().unwrap(), *ts.iter().max().unwrap() + 1);
        let bins = 6;
        let bin = |t: i64| (((t - lo) as f64 / (hi - lo) as f64) * bins as f64) as usize;
        let mut overall = vec![0f64; bins];
        let mut per_item: HashMap<&str, Vec<f64>> = HashMap::new();
        for it in log.interactions() {
            overall[bin(it.timestamp)] += 1.0;
            per_item.entry(&it.item_id).or_insert_with(|| vec![0.0; bins])[bin(it.timestamp)] += 1.0;
        }
        let total: f64 = overall.iter().sum();
        let (mut chi, mut dof) = (0.0, 0.0);
        for counts in per_item.values() {
            let n: f64 = counts.iter().sum();
            if n < 30.0 {
                continue;
            }
            for (c, o) in counts.iter().zip(&overall) {
                let e = n * o / total;
                if e > 0.0 {
                    chi += (c - e).powi(2) / e;
                }
            }
            dof += (bins - 1) as f64;
        }
        chi / dof
    }

    #[test]
    fn seasonal_items_concentrate_in_time() {
        let base = SynthConfig { users: 300, items_a: 100, items_b: 100, ..SynthConfig::desk(4) };
        let none = generate_synthetic(&SynthConfig { seasonal_frac: 0.0, ..base.clone() }, 4).unwrap();
        let lots = generate_synthetic(&SynthConfig { seasonal_frac: 0.5, seasonal_boost: 4.0, ..base }, 4).unwrap();
        let (d0, d1) = (timing_dispersion(&none), timing_dispersion(&lots));
        // without seasons the dispersion stays near the no-structure level
        assert!(d0 < 3.0, "dispersion without seasons {d0}");
        assert!(d1 > 1.5 * d0, "seasonal {d1} vs plain {d0}");
    }

    #[test]
    fn invalid_counts_are_rejected() {
        assert!(generate_synthetic(&SynthConfig { users: 0, ..small(0) }, 0).is_err());
        assert!(generate_synthetic(&SynthConfig { mean_gap_days_a: 0.0, ..small(0) }, 0).is_err());
    }

    #[test]
    fn parses_flat_key_value_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        use std::io::Write;
        writeln!(
            f,
            "users = 30\nitems_a = 40\nitems_b = 50\nmean_gap_days_a = 0.5\nmean_gap_days_b = 2.0\ndrift_rate = 0.1\nseasonal_frac = 0.2\nseed = 9"
        )
        .unwrap();
        let cfg = SynthConfig::from_file(f.path()).unwrap();
        assert_eq!((cfg.users, cfg.items_b, cfg.seed), (30, 50, 9));
        assert_eq!(cfg.topics, 20);
    }
}
