//! Interaction logs and everything derived from them before modelling.

mod analytics;
mod negatives;
mod noise;
mod split;
mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use analytics::{analyze_intervals, bucket_by_interval_variance, gap_variance, IntervalTable};
pub use negatives::sample_negatives;
pub use noise::inject_noise;
pub use split::{split_dataset, Split, SplitSpec};
pub use synthetic::{generate_synthetic, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::A, Domain::B];

    pub fn other(self) -> Domain {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Domain::A => 0,
            Domain::B => 1,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::A => "A",
            Domain::B => "B",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub domain: Domain,
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

/// Dense 1-based item indices for one domain; index 0 is reserved for padding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ItemVocab {
    ids: Vec<String>,
    titles: Vec<Option<String>>,
    index: HashMap<String, usize>,
}

impl ItemVocab {
    fn build(items: BTreeMap<String, Option<String>>) -> Self {
        let mut vocab = ItemVocab::default();
        for (id, title) in items {
            vocab.index.insert(id.clone(), vocab.ids.len() + 1);
            vocab.ids.push(id);
            vocab.titles.push(title);
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index - 1]
    }

    pub fn title(&self, index: usize) -> Option<&str> {
        self.titles[index - 1].as_deref()
    }
}

/// One interaction inside a user's timeline, with a domain-local item index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub item: usize,
    pub domain: Domain,
    pub timestamp: i64,
}

/// All interactions, sorted by `(user_id, timestamp)`, with per-domain vocabularies.
#[derive(Clone, Debug, Default)]
pub struct InteractionLog {
    interactions: Vec<Interaction>,
    items_a: ItemVocab,
    items_b: ItemVocab,
}

impl InteractionLog {
    pub fn new(mut interactions: Vec<Interaction>) -> Result<Self> {
        let mut seen = HashSet::new();
        for it in &interactions {
            if it.timestamp < 0 {
                return Err(Error::invalid(format!("negative timestamp for user {}", it.user_id)));
            }
            if !seen.insert((it.user_id.as_str(), it.item_id.as_str(), it.timestamp)) {
                return Err(Error::invalid(format!(
                    "duplicate interaction ({}, {}, {})",
                    it.user_id, it.item_id, it.timestamp
                )));
            }
        }
        interactions.sort_by(|a, b| {
            (&a.user_id, a.timestamp, a.domain, &a.item_id)
                .cmp(&(&b.user_id, b.timestamp, b.domain, &b.item_id))
        });
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        for it in &interactions {
            let table = match it.domain {
                Domain::A => &mut a,
                Domain::B => &mut b,
            };
            let entry: &mut Option<String> = table.entry(it.item_id.clone()).or_default();
            if entry.is_none() {
                *entry = it.title.clone();
            }
        }
        Ok(Self { interactions, items_a: ItemVocab::build(a), items_b: ItemVocab::build(b) })
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn vocab(&self, domain: Domain) -> &ItemVocab {
        match domain {
            Domain::A => &self.items_a,
            Domain::B => &self.items_b,
        }
    }

    pub fn item_count(&self, domain: Domain) -> usize {
        self.vocab(domain).len()
    }

    pub fn event(&self, it: &Interaction) -> Event {
        let item = self.vocab(it.domain).index_of(&it.item_id).expect("item in vocabulary");
        Event { item, domain: it.domain, timestamp: it.timestamp }
    }

    /// Chronological events per user.
    pub fn user_events(&self) -> BTreeMap<String, Vec<Event>> {
        let mut out: BTreeMap<String, Vec<Event>> = BTreeMap::new();
        for it in &self.interactions {
            out.entry(it.user_id.clone()).or_default().push(self.event(it));
        }
        out
    }

    pub fn first_timestamp(&self) -> Option<i64> {
        self.interactions.iter().map(|i| i.timestamp).min()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for it in &self.interactions {
            serde_json::to_writer(&mut f, it)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawInteraction {
    user_id: String,
    item_id: String,
    domain: String,
    timestamp: i64,
    #[serde(default)]
    title: Option<String>,
}

/// Reads a JSON-lines interaction file. Blank lines are skipped.
pub fn parse_interactions(path: &Path) -> Result<InteractionLog> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
        let raw: RawInteraction = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let domain = match raw.domain.as_str() {
            "A" => Domain::A,
            "B" => Domain::B,
            other => return Err(err(format!("unknown domain {other:?}, expected \"A\" or \"B\""))),
        };
        if raw.timestamp < 0 {
            return Err(err(format!("negative timestamp {}", raw.timestamp)));
        }
        out.push(Interaction {
            user_id: raw.user_id,
            item_id: raw.item_id,
            domain,
            timestamp: raw.timestamp,
            title: raw.title,
        });
    }
    InteractionLog::new(out)
}

/// Per-user chronological views with gap sequences. The first gap of every
/// view is the start sentinel `-1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSequences {
    pub user_id: String,
    pub seq_a: Vec<(usize, i64)>,
    pub seq_b: Vec<(usize, i64)>,
    pub seq_m: Vec<Event>,
    pub gaps_a: Vec<i64>,
    pub gaps_b: Vec<i64>,
    pub gaps_m: Vec<i64>,
}

pub fn gaps_of(timestamps: impl IntoIterator<Item = i64>) -> Vec<i64> {
    let mut prev = None;
    timestamps
        .into_iter()
        .map(|t| {
            let g = prev.map_or(-1, |p| t - p);
            prev = Some(t);
            g
        })
        .collect()
}

fn tail<T: Clone>(v: &[T], max_len: usize) -> Vec<T> {
    v[v.len().saturating_sub(max_len)..].to_vec()
}

impl UserSequences {
    /// Builds all three views from chronological events, each truncated to
    /// its most recent `max_len` entries.
    pub fn from_events(user_id: &str, events: &[Event], max_len: usize) -> Self {
        let domain_seq = |d: Domain| -> Vec<(usize, i64)> {
            let all: Vec<_> =
                events.iter().filter(|e| e.domain == d).map(|e| (e.item, e.timestamp)).collect();
            tail(&all, max_len)
        };
        let seq_a = domain_seq(Domain::A);
        let seq_b = domain_seq(Domain::B);
        let seq_m = tail(events, max_len);
        Self {
            user_id: user_id.to_string(),
            gaps_a: gaps_of(seq_a.iter().map(|x| x.1)),
            gaps_b: gaps_of(seq_b.iter().map(|x| x.1)),
            gaps_m: gaps_of(seq_m.iter().map(|e| e.timestamp)),
            seq_a,
            seq_b,
            seq_m,
        }
    }

    pub fn domain_seq(&self, d: Domain) -> &[(usize, i64)] {
        match d {
            Domain::A => &self.seq_a,
            Domain::B => &self.seq_b,
        }
    }
}

pub const MIN_USER_INTERACTIONS: usize = 3;

/// Users with fewer than three interactions are dropped.
pub fn build_user_sequences(
    log: &InteractionLog,
    max_len: usize,
) -> Result<BTreeMap<String, UserSequences>> {
    if max_len < 2 {
        return Err(Error::Config(format!("max_len must be ≥ 2, got {max_len}")));
    }
    let mut out = BTreeMap::new();
    let mut dropped = 0usize;
    for (user, events) in log.user_events() {
        if events.len() < MIN_USER_INTERACTIONS {
            dropped += 1;
            continue;
        }
        out.insert(user.clone(), UserSequences::from_events(&user, &events, max_len));
    }
    if dropped > 0 {
        log::info!("dropped {dropped} users with fewer than {MIN_USER_INTERACTIONS} interactions");
    }
    Ok(out)
}
