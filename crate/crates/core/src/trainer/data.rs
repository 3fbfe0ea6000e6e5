//! Training and evaluation instances, padded batches, and the frozen
//! semantic features that go with them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::autograd::Mat;
use crate::encoder::{AbsoluteTime, ItemTable, SequenceBatch};
use crate::error::{Error, Result};
use crate::ingest::{
    gaps_of, sample_negatives, Domain, Event, InteractionLog, Split, UserSequences, MIN_USER_INTERACTIONS,
};
use crate::semantic::{build_prompt, encode_cached, perturb, EmbeddingCache, Pca, PerturbMode, PromptMode, TextEncoder};
use crate::temporal::{GapBucketizer, IntervalNormalizer};
use crate::transfer::domain_flag;
use crate::util::rng_for;

/// Events required before a target.
pub const MIN_HISTORY: usize = 2;

/// The three sequence views of a user history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    A,
    B,
    M,
}

impl View {
    pub const ALL: [View; 3] = [View::A, View::B, View::M];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn of(d: Domain) -> View {
        match d {
            Domain::A => View::A,
            Domain::B => View::B,
        }
    }

    pub fn item_table(self) -> ItemTable {
        match self {
            View::A => ItemTable::A,
            View::B => ItemTable::B,
            View::M => ItemTable::Mixed,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::A => "A",
            View::B => "B",
            View::M => "M",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Valid,
    Test,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Train, Part::Valid, Part::Test];
}

/// One view of a history, already mapped to table indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewSeq {
    pub events: Vec<Event>,
    /// Raw gaps; the first is the start sentinel.
    pub gaps: Vec<i64>,
    pub items: Vec<usize>,
    pub rel: Vec<usize>,
    pub abs: Vec<usize>,
    pub norm_gap: Vec<f64>,
}

impl ViewSeq {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// A history and the next item to predict in one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub user: usize,
    pub domain: Domain,
    pub target: usize,
    /// Sampled negatives for ranking; empty for training instances.
    pub negatives: Vec<usize>,
    pub views: [ViewSeq; 3],
}

impl Instance {
    pub fn view(&self, v: View) -> &ViewSeq {
        &self.views[v.index()]
    }

    /// Candidates with the target first.
    pub fn candidates(&self) -> Vec<usize> {
        std::iter::once(self.target).chain(self.negatives.iter().copied()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub users: Vec<String>,
    pub items: [usize; 2],
    titles: [Vec<String>; 2],
    pub abs_time: AbsoluteTime,
    pub bucketizer: GapBucketizer,
    pub normalizers: [IntervalNormalizer; 3],
    pub max_len: usize,
    pub train: Vec<Instance>,
    pub valid: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Sizes the model needs to allocate its tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataShape {
    pub items: [usize; 2],
    pub abs_rows: usize,
    pub rel_rows: usize,
}

impl Dataset {
    /// Builds instances for every part. Training users contribute one
    /// instance per event that has at least two earlier events; validation
    /// and test users contribute the last event of each domain, ranked
    /// against `num_negatives` sampled items. Negatives depend only on
    /// `seed`, the user and the domain, so all variants share them.
    pub fn build(log: &InteractionLog, split: &Split, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let bucketizer = GapBucketizer::new(cfg.gap_scale, cfg.gap_buckets)?;
        let items = [log.item_count(Domain::A), log.item_count(Domain::B)];
        if items.contains(&0) {
            return Err(Error::invalid("both domains need at least one item"));
        }
        let titles = Domain::BOTH.map(|d| {
            let vocab = log.vocab(d);
            (1..=vocab.len()).map(|i| vocab.title(i).unwrap_or(vocab.id(i)).to_string()).collect()
        });
        let origin = log.first_timestamp().ok_or_else(|| Error::invalid("empty interaction log"))?;
        let timelines = log.user_events();
        let mut users: Vec<String> = Vec::new();
        let mut user_index = BTreeMap::new();
        for (u, ev) in &timelines {
            if ev.len() >= MIN_USER_INTERACTIONS {
                user_index.insert(u.clone(), users.len());
                users.push(u.clone());
            }
        }

        let mut fit_gaps: [Vec<i64>; 3] = Default::default();
        for u in &split.train {
            let Some(ev) = timelines.get(u) else { continue };
            for d in Domain::BOTH {
                fit_gaps[View::of(d).index()].extend(gaps_of(ev.iter().filter(|e| e.domain == d).map(|e| e.timestamp)));
            }
            fit_gaps[View::M.index()].extend(gaps_of(ev.iter().map(|e| e.timestamp)));
        }
        let normalizers = fit_gaps.map(IntervalNormalizer::fit);

        let mut ds = Dataset {
            users,
            items,
            titles,
            abs_time: AbsoluteTime::new(origin, cfg.abs_time_slots),
            bucketizer,
            normalizers,
            max_len: cfg.max_len,
            train: vec![],
            valid: vec![],
            test: vec![],
        };
        for (part, names) in [(Part::Train, &split.train), (Part::Valid, &split.valid), (Part::Test, &split.test)] {
            let mut out = Vec::new();
            for name in names {
                let (Some(&user), Some(events)) = (user_index.get(name), timelines.get(name)) else { continue };
                let cuts: Vec<usize> = match part {
                    Part::Train => (MIN_HISTORY..events.len()).collect(),
                    _ => Domain::BOTH
                        .iter()
                        .filter_map(|d| events.iter().rposition(|e| e.domain == *d))
                        .filter(|k| *k >= MIN_HISTORY)
                        .collect(),
                };
                for k in cuts {
                    let target = events[k];
                    let negatives = if part == Part::Train {
                        vec![]
                    } else {
                        let mut rng = rng_for(seed, &format!("negatives/{name}/{}", target.domain));
                        sample_negatives(target.item, items[target.domain.index()], cfg.num_negatives, &mut rng)?
                    };
                    let views = ds.views(name, &events[..k])?;
                    out.push(Instance { user, domain: target.domain, target: target.item, negatives, views });
                }
            }
            match part {
                Part::Train => ds.train = out,
                Part::Valid => ds.valid = out,
                Part::Test => ds.test = out,
            }
        }
        if ds.train.is_empty() {
            return Err(Error::invalid("no training instances"));
        }
        Ok(ds)
    }

    fn views(&self, user: &str, history: &[Event]) -> Result<[ViewSeq; 3]> {
        let seqs = UserSequences::from_events(user, history, self.max_len);
        let a: Vec<Event> =
            seqs.seq_a.iter().map(|&(item, timestamp)| Event { item, domain: Domain::A, timestamp }).collect();
        let b: Vec<Event> =
            seqs.seq_b.iter().map(|&(item, timestamp)| Event { item, domain: Domain::B, timestamp }).collect();
        Ok([
            self.view_seq(View::A, a, seqs.gaps_a)?,
            self.view_seq(View::B, b, seqs.gaps_b)?,
            self.view_seq(View::M, seqs.seq_m, seqs.gaps_m)?,
        ])
    }

    fn view_seq(&self, view: View, events: Vec<Event>, gaps: Vec<i64>) -> Result<ViewSeq> {
        let norm = self.normalizers[view.index()];
        let mut s = ViewSeq::default();
        for (i, (e, &gap)) in events.iter().zip(&gaps).enumerate() {
            s.items.push(self.table_item(view, e));
            s.rel.push(self.bucketizer.discretize(gap)? + 1);
            s.abs.push(self.abs_time.index(e.timestamp));
            s.norm_gap.push(if i == 0 { 0.0 } else { norm.normalize(gap) });
        }
        s.events = events;
        s.gaps = gaps;
        Ok(s)
    }

    /// Row of an event in the view's item table; the mixed table lists all
    /// A items first, then all B items.
    pub fn table_item(&self, view: View, e: &Event) -> usize {
        match (view, e.domain) {
            (View::M, Domain::B) => self.items[0] + e.item,
            _ => e.item,
        }
    }

    pub fn shape(&self) -> DataShape {
        DataShape {
            items: self.items,
            abs_rows: self.abs_time.table_rows(),
            rel_rows: self.bucketizer.buckets + 1,
        }
    }

    pub fn part(&self, p: Part) -> &[Instance] {
        match p {
            Part::Train => &self.train,
            Part::Valid => &self.valid,
            Part::Test => &self.test,
        }
    }

    pub fn title(&self, d: Domain, item: usize) -> &str {
        &self.titles[d.index()][item - 1]
    }

    /// Prompt text for one view of an instance, `None` for an empty view.
    pub fn prompt_text(&self, inst: &Instance, view: View, mode: PromptMode) -> Result<Option<String>> {
        Ok(self.prompt(inst, view, mode)?.map(|p| p.render()))
    }

    fn prompt(&self, inst: &Instance, view: View, mode: PromptMode) -> Result<Option<crate::semantic::Prompt>> {
        let s = inst.view(view);
        if s.is_empty() {
            return Ok(None);
        }
        let events: Vec<(Domain, String)> =
            s.events.iter().map(|e| (e.domain, self.title(e.domain, e.item).to_string())).collect();
        build_prompt(&events, &s.gaps, mode).map(Some)
    }

    /// Every prompt the semantic branch needs: the original prompt of each
    /// non-empty view, plus small and big counterfactuals for training
    /// instances when requested. Order is deterministic.
    pub fn prompt_records(&self, mode: PromptMode, counterfactual: bool, cfg: &ModelConfig, seed: u64) -> Result<Vec<PromptRecord>> {
        let mut out = Vec::new();
        let mut replaced = [0usize; 2];
        let mut gaps = [0usize; 2];
        for part in Part::ALL {
            for (index, inst) in self.part(part).iter().enumerate() {
                for view in View::ALL {
                    let Some(prompt) = self.prompt(inst, view, mode)? else { continue };
                    out.push(PromptRecord { part, index, view, kind: PromptKind::Orig, text: prompt.render() });
                    if !(counterfactual && part == Part::Train) {
                        continue;
                    }
                    for (i, (kind, pm, alpha)) in [
                        (PromptKind::Small, PerturbMode::Small, cfg.alpha_small),
                        (PromptKind::Big, PerturbMode::Big, cfg.alpha_big),
                    ]
                    .into_iter()
                    .enumerate()
                    {
                        let mut rng = rng_for(seed, &format!("cf/{index}/{view}/{kind:?}"));
                        let (p, stats) = perturb(&prompt, pm, alpha, &mut rng);
                        replaced[i] += stats.replaced;
                        gaps[i] += stats.gaps;
                        out.push(PromptRecord { part, index, view, kind, text: p.render() });
                    }
                }
            }
        }
        if counterfactual {
            log::info!(
                "counterfactual replacement rates: small {:.3}, big {:.3}",
                replaced[0] as f64 / gaps[0].max(1) as f64,
                replaced[1] as f64 / gaps[1].max(1) as f64
            );
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Orig,
    Small,
    Big,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub part: Part,
    pub index: usize,
    pub view: View,
    pub kind: PromptKind,
    pub text: String,
}

/// PCA-projected prompt encodings of one view.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SemVec {
    pub orig: Vec<f64>,
    pub small: Option<Vec<f64>>,
    pub big: Option<Vec<f64>>,
}

/// Frozen semantic inputs for every instance, in the PCA space.
#[derive(Clone, Debug)]
pub struct SemanticFeatures {
    pub pca: Pca,
    features: BTreeMap<Part, Vec<[Option<SemVec>; 3]>>,
}

impl SemanticFeatures {
    /// Encodes all prompts (through the cache), fits PCA on the original
    /// training prompts and projects everything. The projection width is
    /// `d_mid`, clamped to the encoder width.
    pub fn build(
        ds: &Dataset,
        records: &[PromptRecord],
        encoder: &dyn TextEncoder,
        cache: &mut EmbeddingCache,
        d_mid: usize,
        concurrency: usize,
    ) -> Result<Self> {
        let texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
        let enc = encode_cached(cache, encoder, &texts, concurrency)?;
        let width = encoder.dim();
        let k = if d_mid > width {
            log::warn!("d_mid {d_mid} exceeds encoder width {width}; using {width}");
            width
        } else {
            d_mid
        };
        let corpus_rows: Vec<&Vec<f64>> = records
            .iter()
            .zip(&enc)
            .filter(|(r, _)| r.part == Part::Train && r.kind == PromptKind::Orig)
            .map(|(_, v)| v)
            .collect();
        let corpus = Mat::from_shape_fn((corpus_rows.len(), width), |(i, j)| corpus_rows[i][j]);
        let pca = Pca::fit(&corpus, k)?;
        let mut features = BTreeMap::new();
        for part in Part::ALL {
            features.insert(part, vec![Default::default(); ds.part(part).len()]);
        }
        for (r, v) in records.iter().zip(&enc) {
            let slot: &mut [Option<SemVec>; 3] = &mut features.get_mut(&r.part).expect("part")[r.index];
            let entry = slot[r.view.index()].get_or_insert_with(SemVec::default);
            let p = pca.transform(v)?;
            match r.kind {
                PromptKind::Orig => entry.orig = p,
                PromptKind::Small => entry.small = Some(p),
                PromptKind::Big => entry.big = Some(p),
            }
        }
        Ok(Self { pca, features })
    }

    pub fn dim(&self) -> usize {
        self.pca.output_dim()
    }

    pub fn get(&self, part: Part, index: usize, view: View) -> Option<&SemVec> {
        self.features.get(&part)?.get(index)?[view.index()].as_ref()
    }
}

/// Semantic inputs of a batch, `batch × d_mid` per view; inactive rows are zero.
#[derive(Clone, Debug)]
pub struct SemBatch {
    pub orig: [Mat; 3],
    pub small: Option<[Mat; 3]>,
    pub big: Option<[Mat; 3]>,
    pub active: [Vec<bool>; 3],
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub views: [SequenceBatch; 3],
    pub targets: Vec<(Domain, usize)>,
    pub users: Vec<usize>,
    pub sem: Option<SemBatch>,
}

fn sequence_batch(seqs: &[&ViewSeq], view: View) -> SequenceBatch {
    let n = seqs.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
    let mut sb = SequenceBatch { batch: seqs.len(), seq_len: n, ..Default::default() };
    for s in seqs {
        for t in 0..n {
            let real = t < s.len();
            sb.items.push(if real { s.items[t] } else { 0 });
            sb.rel.push(if real { s.rel[t] } else { 0 });
            sb.abs.push(if real { s.abs[t] } else { 0 });
            sb.norm_gap.push(if real { s.norm_gap[t] } else { 0.0 });
            sb.flags.push(if real {
                match view {
                    View::M => domain_flag(s.events[t].domain),
                    _ => domain_flag(s.events[0].domain),
                }
            } else {
                0
            });
            sb.mask.push(real);
        }
        sb.lengths.push(s.len());
    }
    sb
}

/// Pads the chosen instances of `part` into a batch. Each view is padded to
/// its own longest sequence.
pub fn make_batch(ds: &Dataset, part: Part, idx: &[usize], sem: Option<&SemanticFeatures>, counterfactual: bool) -> Batch {
    let insts: Vec<&Instance> = idx.iter().map(|&i| &ds.part(part)[i]).collect();
    let views = View::ALL.map(|v| {
        let seqs: Vec<&ViewSeq> = insts.iter().map(|inst| inst.view(v)).collect();
        sequence_batch(&seqs, v)
    });
    let sem = sem.map(|f| {
        let k = f.dim();
        let rows = idx.len();
        let mut active: [Vec<bool>; 3] = Default::default();
        let mut orig = [(); 3].map(|_| Mat::zeros((rows, k)));
        let mut small = [(); 3].map(|_| Mat::zeros((rows, k)));
        let mut big = [(); 3].map(|_| Mat::zeros((rows, k)));
        let mut has_cf = counterfactual;
        for v in View::ALL {
            for (r, &i) in idx.iter().enumerate() {
                let entry = f.get(part, i, v);
                active[v.index()].push(entry.is_some());
                let Some(e) = entry else { continue };
                orig[v.index()].row_mut(r).assign(&ndarray::ArrayView1::from(&e.orig[..]));
                match (&e.small, &e.big) {
                    (Some(s), Some(b)) => {
                        small[v.index()].row_mut(r).assign(&ndarray::ArrayView1::from(&s[..]));
                        big[v.index()].row_mut(r).assign(&ndarray::ArrayView1::from(&b[..]));
                    }
                    _ => has_cf = false,
                }
            }
        }
        SemBatch {
            orig,
            small: has_cf.then_some(small),
            big: has_cf.then_some(big),
            active,
        }
    });
    Batch {
        size: idx.len(),
        views,
        targets: insts.iter().map(|i| (i.domain, i.target)).collect(),
        users: insts.iter().map(|i| i.user).collect(),
        sem,
    }
}
