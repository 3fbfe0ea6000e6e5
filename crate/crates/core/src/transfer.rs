//! Time-preference guided transfer: encodes each view's (domain, gap)
//! pattern, pools cross-domain preference factors from the mixed view and
//! turns both into per-user transfer weights.

use crate::autograd::{AttentionSpec, Graph, Mat, Var};
use crate::encoder::SequenceBatch;
use crate::ingest::Domain;
use crate::nn::{embedding_table, Activation, Linear, Mlp, ParamId, ParamStore};
use crate::util::Rng;

/// Flag row of a domain in the pattern tables (0 is padding).
pub fn domain_flag(d: Domain) -> usize {
    d.index() + 1
}

/// Averages the real rows of each sequence (`batch × d`); an empty
/// sequence pools to zero.
pub fn masked_mean_pool(g: &mut Graph, x: Var, batch: &SequenceBatch) -> Var {
    let mut p = Mat::zeros((batch.batch, batch.rows()));
    for b in 0..batch.batch {
        let len = batch.lengths[b];
        for t in 0..len {
            p[[b, b * batch.seq_len + t]] = 1.0 / len as f64;
        }
    }
    let p = g.constant(p);
    g.matmul(p, x)
}

#[derive(Clone, Debug)]
pub struct PatternEncoder {
    pub flags: ParamId,
    pub gaps: ParamId,
    pub positions: ParamId,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub heads: usize,
}

impl PatternEncoder {
    /// `shared_gaps` reuses an existing relative-time table instead of a
    /// dedicated one.
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut Rng,
        dim: usize,
        gap_rows: usize,
        max_len: usize,
        heads: usize,
        shared_gaps: Option<ParamId>,
    ) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let flags = ps.add("pattern.flags", embedding_table(rng, 3, dim, std));
        let gaps = shared_gaps.unwrap_or_else(|| ps.add("pattern.gaps", embedding_table(rng, gap_rows, dim, std)));
        Self {
            flags,
            gaps,
            positions: ps.add("pattern.positions", embedding_table(rng, max_len + 1, dim, std)),
            q: Linear::new(ps, "pattern.q", rng, dim, dim),
            k: Linear::new(ps, "pattern.k", rng, dim, dim),
            v: Linear::new(ps, "pattern.v", rng, dim, dim),
            heads,
        }
    }

    /// Pooled pattern vector `u` per sequence (`batch × d`).
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, batch: &SequenceBatch) -> Var {
        let pos: Vec<usize> =
            (0..batch.rows()).map(|r| if batch.mask[r] { r % batch.seq_len + 1 } else { 0 }).collect();
        let ft = ps.var(g, self.flags);
        let gt = ps.var(g, self.gaps);
        let pt = ps.var(g, self.positions);
        let f = g.embedding(ft, &batch.flags);
        let gp = g.embedding(gt, &batch.rel);
        let p = g.embedding(pt, &pos);
        let fg = g.add(f, gp);
        let x = g.add(fg, p);
        let q = self.q.forward(g, ps, x);
        let k = self.k.forward(g, ps, x);
        let v = self.v.forward(g, ps, x);
        let spec = AttentionSpec { heads: self.heads, seq_len: batch.seq_len, key_mask: batch.mask.clone(), causal: false };
        let a = g.attention(q, k, v, spec);
        let h = g.add(x, a);
        masked_mean_pool(g, h, batch)
    }
}

/// Cross-domain preference factors from the mixed-view step states.
/// `z_steps[t]` is `batch × d` at step `t`. Each factor is the mean of the
/// steps whose event belongs to that domain (zero when none do), plus the
/// mixed-view semantic vector when given.
pub fn preference_factors(
    g: &mut Graph,
    z_steps: &[Var],
    batch: &SequenceBatch,
    z_llm: Option<Var>,
) -> (Var, Var) {
    let stacked = g.concat_rows(z_steps);
    let mut out = Vec::with_capacity(2);
    for d in Domain::BOTH {
        let flag = domain_flag(d);
        let mut p = Mat::zeros((batch.batch, batch.rows()));
        for b in 0..batch.batch {
            let hits: Vec<usize> =
                (0..batch.seq_len).filter(|t| batch.flags[b * batch.seq_len + t] == flag).collect();
            for t in &hits {
                p[[b, t * batch.batch + b]] = 1.0 / hits.len() as f64;
            }
        }
        let p = g.constant(p);
        let r = g.matmul(p, stacked);
        out.push(match z_llm {
            Some(s) => g.add(r, s),
            None => r,
        });
    }
    (out[0], out[1])
}

/// Per-domain projections and the shared gate producing `w ∈ (0, 1)`.
#[derive(Clone, Debug)]
pub struct TransferGate {
    pub w_t: [Linear; 2],
    pub w_r: [Linear; 2],
    pub f_gate: Mlp,
}

impl TransferGate {
    pub fn new(ps: &mut ParamStore, rng: &mut Rng, dim: usize) -> Self {
        let lin = |ps: &mut ParamStore, rng: &mut Rng, n: &str| Linear::new(ps, n, rng, 2 * dim, dim);
        Self {
            w_t: [lin(ps, rng, "transfer.w_t_a"), lin(ps, rng, "transfer.w_t_b")],
            w_r: [lin(ps, rng, "transfer.w_r_a"), lin(ps, rng, "transfer.w_r_b")],
            f_gate: Mlp::new(ps, "transfer.f_gate", rng, (2 * dim, dim, 1), Activation::Tanh),
        }
    }

    /// `σ(f_gate([W_t[u_D, u_M], W_r[r_D, r_other]]))` as a `batch × 1` column.
    pub fn weight(&self, g: &mut Graph, ps: &ParamStore, d: Domain, u_d: Var, u_m: Var, r_d: Var, r_other: Var) -> Var {
        let i = d.index();
        let tu = g.concat_cols(&[u_d, u_m]);
        let t = self.w_t[i].forward(g, ps, tu);
        let rr = g.concat_cols(&[r_d, r_other]);
        let r = self.w_r[i].forward(g, ps, rr);
        let both = g.concat_cols(&[t, r]);
        let logit = self.f_gate.forward(g, ps, both);
        g.sigmoid(logit)
    }
}
