//! The assembled recommender: per-view encoders and evolution, the semantic
//! adapters, transfer weights, prediction heads and the training objective.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Variant};
use super::data::{make_batch, Batch, DataShape, Dataset, Part, SemanticFeatures, View};
use crate::autograd::{Graph, Mat, Var};
use crate::encoder::{embed_sequence, EmbeddingTables, TransformerLayer};
use crate::error::{Error, Result};
use crate::evolution::{long_term_reg, roll_sequence, short_term_reg, EvolutionParams};
use crate::ingest::Domain;
use crate::nn::{normal, ParamId, ParamStore};
use crate::semantic::{counterfactual_loss, Adapter};
use crate::transfer::{preference_factors, PatternEncoder, TransferGate};
use crate::util::{rng_for, Rng};

/// Inverted dropout: zeroes entries with probability `p` and rescales the rest.
fn dropout(g: &mut Graph, x: Var, p: f64, rng: Option<&mut Rng>) -> Var {
    let Some(rng) = rng else { return x };
    if p <= 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - p);
    let mask = Mat::from_shape_fn(g.shape(x), |_| if rng.gen_bool(p) { 0.0 } else { keep });
    let m = g.constant(mask);
    g.mul(x, m)
}

#[derive(Clone, Debug)]
struct Behavioral {
    tables: EmbeddingTables,
    transformers: Vec<TransformerLayer>,
    evolution: Vec<EvolutionParams>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub shape: DataShape,
    /// Width of the semantic input (the PCA space), when the variant has one.
    pub sem_dim: Option<usize>,
    pub ps: ParamStore,
    behavioral: Option<Behavioral>,
    adapters: Vec<Adapter>,
    pattern: Option<PatternEncoder>,
    gate: Option<TransferGate>,
    global_transfer: Option<ParamId>,
    heads: [ParamId; 2],
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Final representation per domain, `batch × d`.
    pub repr: [Var; 2],
    /// Transfer weight per domain, `batch × 1`.
    pub transfer: Option<[Var; 2]>,
    /// Fusion gate at the last real step of the A and B views.
    pub fusion: Option<[Var; 2]>,
    /// Sum of the temporal regularizers over the three views.
    pub ode: Option<Var>,
    /// Sum of the counterfactual objectives over the three views.
    pub sem: Option<Var>,
}

/// Scalar values of the objective's parts for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub main: f64,
    pub ode: f64,
    pub sem: f64,
    pub total: f64,
}

/// `L_main + λ1·L_ODE + λ2·L_sem`, rejecting non-finite parts.
pub fn total_loss(main: f64, ode: f64, sem: f64, lambda_ode: f64, lambda_sem: f64) -> Result<f64> {
    for (name, v) in [("L_main", main), ("L_ODE", ode), ("L_sem", sem)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss part {name} = {v}")));
        }
    }
    Ok(main + lambda_ode * ode + lambda_sem * sem)
}

impl Model {
    /// Allocates parameters for `config.variant`. `sem_dim` is required for
    /// variants with a semantic branch.
    pub fn new(config: ModelConfig, shape: DataShape, sem_dim: Option<usize>) -> Result<Self> {
        config.validate()?;
        let v = config.variant;
        if v.semantic() && sem_dim.is_none() {
            return Err(Error::Config(format!("variant {v} needs semantic features")));
        }
        let sem_dim = if v.semantic() { sem_dim } else { None };
        let d = config.dim;
        let mut rng = rng_for(config.seed, "init");
        let mut ps = ParamStore::new();
        let behavioral = v.behavioral().then(|| {
            let tables = EmbeddingTables::new(
                &mut ps,
                &mut rng,
                (shape.items[0], shape.items[1]),
                shape.abs_rows,
                shape.rel_rows,
                d,
            );
            let mut transformers = vec![];
            let mut evolution = vec![];
            for view in View::ALL {
                transformers.push(TransformerLayer::new(&mut ps, &format!("enc.{view}"), &mut rng, d, config.heads));
                evolution.push(EvolutionParams::new(&mut ps, &format!("evo.{view}"), &mut rng, d, v.evolution_mode()));
            }
            Behavioral { tables, transformers, evolution }
        });
        let adapters = match sem_dim {
            Some(k) => View::ALL.iter().map(|view| Adapter::new(&mut ps, &format!("adapter.{view}"), &mut rng, k, d)).collect(),
            None => vec![],
        };
        let (pattern, gate, global_transfer) = if v.guided_transfer() {
            let shared = config.share_pattern_gaps.then(|| behavioral.as_ref().expect("behavioral").tables.rel_time);
            let pattern = PatternEncoder::new(&mut ps, &mut rng, d, shape.rel_rows, config.max_len, config.heads, shared);
            (Some(pattern), Some(TransferGate::new(&mut ps, &mut rng, d)), None)
        } else if v.behavioral() {
            (None, None, Some(ps.add("transfer.global", Mat::zeros((1, 2)))))
        } else {
            (None, None, None)
        };
        let std = 1.0 / (d as f64).sqrt();
        let heads = [
            ps.add("head.a", normal(&mut rng, d, shape.items[0], std)),
            ps.add("head.b", normal(&mut rng, d, shape.items[1], std)),
        ];
        Ok(Self { config, shape, sem_dim, ps, behavioral, adapters, pattern, gate, global_transfer, heads })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// With `train`, the regularizers are built; dropout is applied when an
    /// RNG is supplied as well.
    pub fn forward(&self, g: &mut Graph, batch: &Batch, train: bool, mut rng: Option<&mut Rng>) -> Result<Forward> {
        let v = self.variant();
        let p_drop = if train { self.config.dropout } else { 0.0 };
        let ps = &self.ps;
        let rows = batch.size;
        let mut sem_loss = None;

        let z_llm: Option<[Var; 3]> = match (&batch.sem, self.adapters.is_empty()) {
            (_, true) => None,
            (None, false) => return Err(Error::invalid("semantic variant needs semantic batch inputs")),
            (Some(sem), false) => {
                let mut zs = Vec::with_capacity(3);
                let mut cf_terms = vec![];
                for view in View::ALL {
                    let i = view.index();
                    let active: Vec<f64> = sem.active[i].iter().map(|a| f64::from(u8::from(*a))).collect();
                    let mask = g.column(&active);
                    let x = g.constant(sem.orig[i].clone());
                    let z = self.adapters[i].forward(g, ps, x);
                    let z = g.mul_col(z, mask);
                    zs.push(z);
                    if train && v.counterfactual() {
                        if let (Some(small), Some(big)) = (&sem.small, &sem.big) {
                            let xs = g.constant(small[i].clone());
                            let xb = g.constant(big[i].clone());
                            let zsm = self.adapters[i].forward(g, ps, xs);
                            let zbg = self.adapters[i].forward(g, ps, xb);
                            cf_terms.push(counterfactual_loss(
                                g,
                                z,
                                zsm,
                                zbg,
                                &sem.active[i],
                                &batch.users,
                                self.config.tau_cf,
                                self.config.top_k,
                            ));
                        }
                    }
                }
                if !cf_terms.is_empty() {
                    let mut s = cf_terms[0];
                    for t in &cf_terms[1..] {
                        s = g.add(s, *t);
                    }
                    sem_loss = Some(s);
                }
                Some([zs[0], zs[1], zs[2]])
            }
        };

        let Some(beh) = &self.behavioral else {
            let z = z_llm.expect("semantic-only variant");
            let repr = Domain::BOTH.map(|d| g.add(z[View::of(d).index()], z[View::M.index()]));
            return Ok(Forward { repr, transfer: None, fusion: None, ode: None, sem: sem_loss });
        };

        let mut last = Vec::with_capacity(3);
        let mut rolls = vec![];
        let mut ode_terms = vec![];
        for view in View::ALL {
            let i = view.index();
            let sb = &batch.views[i];
            let x = embed_sequence(g, ps, &beh.tables, view.item_table(), sb)?;
            let x = dropout(g, x, p_drop, rng.as_deref_mut());
            let e = beh.transformers[i].forward(g, ps, x, sb);
            let e = dropout(g, e, p_drop, rng.as_deref_mut());
            let roll = roll_sequence(g, ps, &beh.evolution[i], e, sb)?;
            if train && v.ode_regularizers() {
                let ll = long_term_reg(g, &roll.h_long, sb);
                let ls = short_term_reg(g, &roll.h_short, e, sb, self.config.tau_short, self.config.short_pool_cap);
                ode_terms.push(ll);
                ode_terms.push(ls);
            }
            last.push(roll.last_z);
            rolls.push(roll);
        }
        let ode = (!ode_terms.is_empty()).then(|| {
            let mut s = ode_terms[0];
            for t in &ode_terms[1..] {
                s = g.add(s, *t);
            }
            s
        });
        let fusion = match (rolls[0].last_gate, rolls[1].last_gate) {
            (Some(ga), Some(gb)) => Some([ga, gb]),
            _ => None,
        };

        let o: [Var; 2] = Domain::BOTH.map(|d| {
            let i = View::of(d).index();
            match z_llm {
                Some(z) => g.add(last[i], z[i]),
                None => last[i],
            }
        });
        let m = View::M.index();
        let (ra, rb) = preference_factors(g, &rolls[m].z, &batch.views[m], z_llm.map(|z| z[m]));
        let r = [ra, rb];

        let w: [Var; 2] = match (&self.pattern, &self.gate, self.global_transfer) {
            (Some(pattern), Some(gate), _) => {
                let u = View::ALL.map(|view| pattern.forward(g, ps, &batch.views[view.index()]));
                Domain::BOTH.map(|d| {
                    let i = d.index();
                    gate.weight(g, ps, d, u[i], u[m], r[i], r[1 - i])
                })
            }
            (_, _, Some(theta)) => {
                let ones = g.constant(Mat::ones((rows, 1)));
                let th = ps.var(g, theta);
                let logits = g.matmul(ones, th);
                let w = g.sigmoid(logits);
                [g.slice_cols(w, 0, 1), g.slice_cols(w, 1, 1)]
            }
            _ => unreachable!("behavioral variants always have transfer weights"),
        };
        let repr = [0, 1].map(|i| {
            let diff = g.sub(o[i], r[i]);
            let mixed = g.mul_col(diff, w[i]);
            g.add(r[i], mixed)
        });
        Ok(Forward { repr, transfer: Some(w), fusion, ode, sem: sem_loss })
    }

    /// Logits over all items of `d` for the given rows of the representation.
    fn logits(&self, g: &mut Graph, repr: Var, rows: &[usize], d: Domain) -> Var {
        let x = g.gather_rows(repr, rows);
        let w = self.ps.var(g, self.heads[d.index()]);
        g.matmul(x, w)
    }

    /// Mean cross-entropy per domain over rows targeting that domain, summed.
    pub fn main_loss(&self, g: &mut Graph, fwd: &Forward, batch: &Batch) -> Result<Var> {
        let mut total = g.constant(Mat::zeros((1, 1)));
        for d in Domain::BOTH {
            let rows: Vec<usize> = (0..batch.size).filter(|&r| batch.targets[r].0 == d).collect();
            if rows.is_empty() {
                continue;
            }
            let n_items = self.shape.items[d.index()];
            let mut picks = Vec::with_capacity(rows.len());
            for (k, &r) in rows.iter().enumerate() {
                let item = batch.targets[r].1;
                if item == 0 || item > n_items {
                    return Err(Error::OutOfRange { what: "target item", index: item, size: n_items });
                }
                picks.push((k, item - 1));
            }
            let logits = self.logits(g, fwd.repr[d.index()], &rows, d);
            let ls = g.log_softmax(logits);
            let picked = g.pick(ls, &picks);
            let mean = g.mean_all(picked);
            let nll = g.scale(mean, -1.0);
            total = g.add(total, nll);
        }
        Ok(total)
    }

    /// Builds the full objective; returns the loss node and its parts.
    pub fn objective(&self, g: &mut Graph, batch: &Batch, rng: Option<&mut Rng>) -> Result<(Var, LossParts)> {
        let fwd = self.forward(g, batch, true, rng)?;
        let main = self.main_loss(g, &fwd, batch)?;
        let c = &self.config;
        let mut loss = main;
        let mut parts = LossParts { main: g.scalar(main), ..Default::default() };
        if let Some(ode) = fwd.ode {
            parts.ode = g.scalar(ode);
            let s = g.scale(ode, c.lambda_ode);
            loss = g.add(loss, s);
        }
        if let Some(sem) = fwd.sem {
            parts.sem = g.scalar(sem);
            let s = g.scale(sem, c.lambda_sem);
            loss = g.add(loss, s);
        }
        parts.total = total_loss(parts.main, parts.ode, parts.sem, c.lambda_ode, c.lambda_sem)?;
        Ok((loss, parts))
    }

    /// Candidate scores (target first) for every instance of `part`.
    pub fn score_part(&self, ds: &Dataset, part: Part, sem: Option<&SemanticFeatures>) -> Result<Vec<Vec<f64>>> {
        let n = ds.part(part).len();
        let mut out = Vec::with_capacity(n);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(self.config.batch_size.max(1)) {
            let batch = make_batch(ds, part, chunk, sem, false);
            let mut g = Graph::new();
            let fwd = self.forward(&mut g, &batch, false, None)?;
            let mut rows_logits: Vec<Option<Vec<f64>>> = vec![None; chunk.len()];
            for d in Domain::BOTH {
                let rows: Vec<usize> = (0..chunk.len()).filter(|&r| batch.targets[r].0 == d).collect();
                if rows.is_empty() {
                    continue;
                }
                let l = self.logits(&mut g, fwd.repr[d.index()], &rows, d);
                let lv = g.value(l);
                for (k, &r) in rows.iter().enumerate() {
                    rows_logits[r] = Some(lv.row(k).to_vec());
                }
            }
            for (r, &i) in chunk.iter().enumerate() {
                let logits = rows_logits[r].take().expect("scored row");
                let scores: Vec<f64> = ds.part(part)[i].candidates().iter().map(|c| logits[c - 1]).collect();
                if scores.iter().any(|s| !s.is_finite()) {
                    return Err(Error::NonFinite("candidate scores".into()));
                }
                out.push(scores);
            }
        }
        Ok(out)
    }

    /// Fusion gate vectors at the last real step of the A and B views for
    /// the chosen instances, one `rows × d` matrix per domain.
    pub fn fusion_weights(&self, ds: &Dataset, part: Part, idx: &[usize], sem: Option<&SemanticFeatures>) -> Result<Option<[Mat; 2]>> {
        let batch = make_batch(ds, part, idx, sem, false);
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, &batch, false, None)?;
        Ok(fwd.fusion.map(|f| f.map(|v| g.value(v).clone())))
    }

    pub fn param_count(&self) -> usize {
        self.ps.scalar_count()
    }
}
