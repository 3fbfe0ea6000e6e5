//! Item and time embeddings plus the causal transformer layer that turns a
//! padded sequence batch into instantaneous preferences.

use crate::autograd::{AttentionSpec, Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{embedding_table, Activation, LayerNorm, Linear, Mlp, ParamId, ParamStore};
use crate::util::Rng;

/// Maps timestamps to calendar-month slots counted from the dataset start.
/// Slot 0 of the embedding table is padding, so month `m` lands on row `m + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AbsoluteTime {
    pub origin: i64,
    pub slots: usize,
}

/// Days since 1970-01-01 to (year, month) in the proleptic Gregorian calendar.
fn civil_month(days: i64) -> (i64, u32) {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let year = yoe + era * 400 + i64::from(month <= 2);
    (year, month)
}

fn month_number(ts: i64) -> i64 {
    let (y, m) = civil_month(ts.div_euclid(86_400));
    y * 12 + i64::from(m) - 1
}

impl AbsoluteTime {
    pub fn new(origin: i64, slots: usize) -> Self {
        Self { origin, slots }
    }

    /// Table row for `ts`; months past the last slot share it.
    pub fn index(&self, ts: i64) -> usize {
        let m = (month_number(ts) - month_number(self.origin)).max(0) as usize;
        m.min(self.slots - 1) + 1
    }

    pub fn table_rows(&self) -> usize {
        self.slots + 1
    }
}

/// One view of a user batch, flattened row-major: row `b * seq_len + t`.
/// Real events occupy a prefix of each row; the rest is padding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceBatch {
    pub batch: usize,
    pub seq_len: usize,
    pub items: Vec<usize>,
    /// Relative-time rows: discretized gap plus one, 0 for padding.
    pub rel: Vec<usize>,
    pub abs: Vec<usize>,
    /// Normalized gap preceding each event (0 at the start and on padding).
    pub norm_gap: Vec<f64>,
    /// Domain flag per position: 1 = A, 2 = B, 0 = padding.
    pub flags: Vec<usize>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
}

impl SequenceBatch {
    pub fn rows(&self) -> usize {
        self.batch * self.seq_len
    }

    pub fn mask_column(&self) -> Mat {
        Mat::from_shape_fn((self.rows(), 1), |(r, _)| f64::from(u8::from(self.mask[r])))
    }

    /// Column of the mask at step `t` across the batch.
    pub fn step_mask(&self, t: usize) -> Vec<f64> {
        (0..self.batch).map(|b| f64::from(u8::from(self.mask[b * self.seq_len + t]))).collect()
    }

    pub fn step_rows(&self, t: usize) -> Vec<usize> {
        (0..self.batch).map(|b| b * self.seq_len + t).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows();
        let lens = [self.items.len(), self.rel.len(), self.abs.len(), self.norm_gap.len(), self.flags.len(), self.mask.len()];
        if lens.iter().any(|l| *l != n) || self.lengths.len() != self.batch {
            return Err(Error::invalid("sequence batch fields disagree in length"));
        }
        for b in 0..self.batch {
            for t in 0..self.seq_len {
                if self.mask[b * self.seq_len + t] != (t < self.lengths[b]) {
                    return Err(Error::invalid("sequence batch padding must be trailing"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    pub item_a: ParamId,
    pub item_b: ParamId,
    pub item_m: ParamId,
    pub abs_time: ParamId,
    pub rel_time: ParamId,
    pub dim: usize,
}

/// Which item table a view reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ItemTable {
    A,
    B,
    Mixed,
}

impl EmbeddingTables {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Rng,
        items: (usize, usize),
        abs_rows: usize,
        rel_rows: usize,
        dim: usize,
    ) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        Self {
            item_a: ps.add("emb.item_a", embedding_table(rng, items.0 + 1, dim, std)),
            item_b: ps.add("emb.item_b", embedding_table(rng, items.1 + 1, dim, std)),
            item_m: ps.add("emb.item_m", embedding_table(rng, items.0 + items.1 + 1, dim, std)),
            abs_time: ps.add("emb.abs_time", embedding_table(rng, abs_rows, dim, std)),
            rel_time: ps.add("emb.rel_time", embedding_table(rng, rel_rows, dim, std)),
            dim,
        }
    }

    pub fn item_table(&self, which: ItemTable) -> ParamId {
        match which {
            ItemTable::A => self.item_a,
            ItemTable::B => self.item_b,
            ItemTable::Mixed => self.item_m,
        }
    }
}

fn check_range(what: &'static str, idx: &[usize], size: usize) -> Result<()> {
    match idx.iter().find(|i| **i >= size) {
        Some(&index) => Err(Error::OutOfRange { what, index, size }),
        None => Ok(()),
    }
}

/// Sum of item, absolute-time and relative-time embeddings per position.
/// Padding positions are exactly zero since every index there is 0.
pub fn embed_sequence(
    g: &mut Graph,
    ps: &ParamStore,
    tables: &EmbeddingTables,
    which: ItemTable,
    batch: &SequenceBatch,
) -> Result<Var> {
    let item_id = tables.item_table(which);
    check_range("item index", &batch.items, ps.get(item_id).nrows())?;
    check_range("absolute-time index", &batch.abs, ps.get(tables.abs_time).nrows())?;
    check_range("relative-time index", &batch.rel, ps.get(tables.rel_time).nrows())?;
    let item = ps.var(g, item_id);
    let abs = ps.var(g, tables.abs_time);
    let rel = ps.var(g, tables.rel_time);
    let e_item = g.embedding(item, &batch.items);
    let e_abs = g.embedding(abs, &batch.abs);
    let e_rel = g.embedding(rel, &batch.rel);
    let s = g.add(e_item, e_abs);
    Ok(g.add(s, e_rel))
}

/// Pre-norm transformer encoder layer with causal multi-head attention.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub norm2: LayerNorm,
    pub ffn: Mlp,
    pub heads: usize,
}

impl TransformerLayer {
    pub fn new(ps: &mut ParamStore, name: &str, rng: &mut Rng, dim: usize, heads: usize) -> Self {
        Self {
            norm1: LayerNorm::new(ps, &format!("{name}.ln1"), dim),
            q: Linear::new(ps, &format!("{name}.q"), rng, dim, dim),
            k: Linear::new(ps, &format!("{name}.k"), rng, dim, dim),
            v: Linear::new(ps, &format!("{name}.v"), rng, dim, dim),
            out: Linear::new(ps, &format!("{name}.o"), rng, dim, dim),
            norm2: LayerNorm::new(ps, &format!("{name}.ln2"), dim),
            ffn: Mlp::new(ps, &format!("{name}.ffn"), rng, (dim, 4 * dim, dim), Activation::Gelu),
            heads,
        }
    }

    /// Instantaneous preferences `E`; padded rows come out as zero.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var, batch: &SequenceBatch) -> Var {
        let h = self.norm1.forward(g, ps, x);
        let q = self.q.forward(g, ps, h);
        let k = self.k.forward(g, ps, h);
        let v = self.v.forward(g, ps, h);
        let spec = AttentionSpec {
            heads: self.heads,
            seq_len: batch.seq_len,
            key_mask: batch.mask.clone(),
            causal: true,
        };
        let a = g.attention(q, k, v, spec);
        let a = self.out.forward(g, ps, a);
        let x1 = g.add(x, a);
        let h2 = self.norm2.forward(g, ps, x1);
        let f = self.ffn.forward(g, ps, h2);
        let x2 = g.add(x1, f);
        let mask = g.constant(batch.mask_column());
        g.mul_col(x2, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;
    use approx::assert_abs_diff_eq;

    fn batch(items: &[&[usize]], n: usize) -> SequenceBatch {
        let mut sb = SequenceBatch { batch: items.len(), seq_len: n, ..Default::default() };
        for seq in items {
            for t in 0..n {
                let real = t < seq.len();
                sb.items.push(if real { seq[t] } else { 0 });
                sb.rel.push(if real { t + 1 } else { 0 });
                sb.abs.push(if real { 1 } else { 0 });
                sb.norm_gap.push(0.0);
                sb.flags.push(usize::from(real));
                sb.mask.push(real);
            }
            sb.lengths.push(seq.len());
        }
        sb
    }

    fn setup(dim: usize) -> (ParamStore, EmbeddingTables, TransformerLayer) {
        let mut rng = rng_for(0, "encoder-test");
        let mut ps = ParamStore::new();
        let tables = EmbeddingTables::new(&mut ps, &mut rng, (6, 6), 5, 20, dim);
        let layer = TransformerLayer::new(&mut ps, "tf", &mut rng, dim, 2);
        (ps, tables, layer)
    }

    #[test]
    fn month_slots_follow_the_calendar() {
        // 2020-01-31 and 2020-02-01 straddle a month boundary.
        let at = AbsoluteTime::new(1_577_836_800, 4);
        assert_eq!(at.index(1_577_836_800 + 30 * 86_400), 1);
        assert_eq!(at.index(1_577_836_800 + 31 * 86_400), 2);
        assert_eq!(at.index(1_577_836_800 + 3_000 * 86_400), 4);
        assert_eq!(civil_month(0), (1970, 1));
        assert_eq!(civil_month(59), (1970, 3));
    }

    #[test]
    fn padding_embeds_to_zero_and_out_of_range_fails() {
        let (ps, tables, _) = setup(4);
        let mut g = Graph::new();
        let sb = batch(&[&[], &[2]], 3);
        let e = embed_sequence(&mut g, &ps, &tables, ItemTable::A, &sb).unwrap();
        let v = g.value(e);
        for r in [0, 1, 2, 4, 5] {
            assert!(v.row(r).iter().all(|x| *x == 0.0));
        }
        assert!(v.row(3).iter().any(|x| *x != 0.0));
        let bad = batch(&[&[7]], 1);
        assert!(matches!(
            embed_sequence(&mut g, &ps, &tables, ItemTable::A, &bad),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn absolute_time_contributes_additively() {
        let (ps, tables, _) = setup(4);
        let mut g = Graph::new();
        let a = batch(&[&[3]], 1);
        let mut b = a.clone();
        b.abs[0] = 2;
        let ea = embed_sequence(&mut g, &ps, &tables, ItemTable::B, &a).unwrap();
        let eb = embed_sequence(&mut g, &ps, &tables, ItemTable::B, &b).unwrap();
        let table = ps.get(tables.abs_time);
        let diff = g.value(eb) - g.value(ea);
        let expected = &table.row(2) - &table.row(1);
        for (x, y) in diff.row(0).iter().zip(expected.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    fn encode(ps: &ParamStore, tables: &EmbeddingTables, layer: &TransformerLayer, sb: &SequenceBatch) -> Mat {
        let mut g = Graph::new();
        let e = embed_sequence(&mut g, ps, tables, ItemTable::Mixed, sb).unwrap();
        let out = layer.forward(&mut g, ps, e, sb);
        g.value(out).clone()
    }

    #[test]
    fn causal_and_padding_transparent() {
        let (ps, tables, layer) = setup(8);
        let a = encode(&ps, &tables, &layer, &batch(&[&[1, 2, 3]], 3));
        let b = encode(&ps, &tables, &layer, &batch(&[&[1, 5, 4]], 3));
        for c in 0..8 {
            assert_abs_diff_eq!(a[[0, c]], b[[0, c]], epsilon = 1e-12);
        }
        assert!((0..8).any(|c| (a[[1, c]] - b[[1, c]]).abs() > 1e-9));
        let padded = encode(&ps, &tables, &layer, &batch(&[&[1, 2, 3]], 13));
        assert_eq!(padded.dim(), (13, 8));
        for r in 0..3 {
            for c in 0..8 {
                assert_abs_diff_eq!(a[[r, c]], padded[[r, c]], epsilon = 1e-12);
            }
        }
        assert!(padded.rows().into_iter().skip(3).all(|row| row.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn single_event_depends_only_on_itself() {
        let (ps, tables, layer) = setup(8);
        let one = encode(&ps, &tables, &layer, &batch(&[&[4]], 1));
        let again = encode(&ps, &tables, &layer, &batch(&[&[4, 1]], 2));
        for c in 0..8 {
            assert_abs_diff_eq!(one[[0, c]], again[[0, c]], epsilon = 1e-12);
        }
    }
}
