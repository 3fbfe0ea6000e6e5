//! Continuous-time preference evolution: long- and short-term states drift
//! between events by one Euler step of a learned derivative, jump at events
//! through GRU cells, and are blended by a time-aware gate.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::encoder::SequenceBatch;
use crate::error::{Error, Result};
use crate::nn::{Activation, GruCell, Linear, Mlp, ParamStore};
use crate::util::Rng;

/// One Euler step `h + dt * f(h, dt)`.
pub fn euler_step(h: &Array1<f64>, dt: f64, f: impl Fn(&Array1<f64>, f64) -> Array1<f64>) -> Result<Array1<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ODE state".into()));
    }
    if dt == 0.0 {
        return Ok(h.clone());
    }
    Ok(h + &(f(h, dt) * dt))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvolutionMode {
    /// Separate long- and short-term states fused by a gate.
    Dual,
    /// A single state serving as the preference directly.
    Single,
}

#[derive(Clone, Debug)]
pub struct EvolutionParams {
    pub mode: EvolutionMode,
    pub f_long: Mlp,
    pub gru_long: GruCell,
    pub f_short: Option<Mlp>,
    pub gru_short: Option<GruCell>,
    pub gate: Option<Linear>,
    pub dim: usize,
}

impl EvolutionParams {
    pub fn new(ps: &mut ParamStore, name: &str, rng: &mut Rng, dim: usize, mode: EvolutionMode) -> Self {
        let deriv = |ps: &mut ParamStore, rng: &mut Rng, n: &str| {
            Mlp::new(ps, &format!("{name}.{n}"), rng, (dim + 1, dim, dim), Activation::Tanh)
        };
        let f_long = deriv(ps, rng, "f_long");
        let gru_long = GruCell::new(ps, &format!("{name}.gru_long"), rng, dim, dim);
        let (f_short, gru_short, gate) = match mode {
            EvolutionMode::Single => (None, None, None),
            EvolutionMode::Dual => (
                Some(deriv(ps, rng, "f_short")),
                Some(GruCell::new(ps, &format!("{name}.gru_short"), rng, dim, dim)),
                Some(Linear::new(ps, &format!("{name}.gate"), rng, 2 * dim + 1, dim)),
            ),
        };
        Self { mode, f_long, gru_long, f_short, gru_short, gate, dim }
    }
}

/// `h + dt ⊙ f([h, dt])` with `dt` a per-row column.
pub fn ode_evolve(g: &mut Graph, ps: &ParamStore, f: &Mlp, h: Var, dt: Var) -> Var {
    let inp = g.concat_cols(&[h, dt]);
    let slope = f.forward(g, ps, inp);
    let step = g.mul_col(slope, dt);
    g.add(h, step)
}

/// Gate `σ(W[h_L, h_S, dt] + b)` and the blend `g ⊙ h_S + (1 − g) ⊙ h_L`.
pub fn fuse_states(g: &mut Graph, ps: &ParamStore, gate: &Linear, hl: Var, hs: Var, dt: Var) -> (Var, Var) {
    let inp = g.concat_cols(&[hl, hs, dt]);
    let pre = gate.forward(g, ps, inp);
    let w = g.sigmoid(pre);
    let diff = g.sub(hs, hl);
    let mix = g.mul(w, diff);
    (g.add(hl, mix), w)
}

/// Per-step outputs of a roll, each `batch × d`.
#[derive(Clone, Debug)]
pub struct Roll {
    pub z: Vec<Var>,
    pub h_long: Vec<Var>,
    pub h_short: Vec<Var>,
    pub gates: Vec<Var>,
    /// `z` at the last real position of each sequence.
    pub last_z: Var,
    pub last_gate: Option<Var>,
}

/// `old + m ⊙ (new − old)`: keep `old` on padded rows.
fn freeze(g: &mut Graph, old: Var, new: Var, mask: Var) -> Var {
    let diff = g.sub(new, old);
    let step = g.mul_col(diff, mask);
    g.add(old, step)
}

/// Rolls the states through a padded batch. `e` holds instantaneous
/// preferences in the batch's row layout. Both states start at `e_1`; the
/// gate is applied from the first step, where it returns `e_1` because both
/// inputs coincide. Padded steps carry the state unchanged, so the final
/// carried `z` is the one at the last real position.
pub fn roll_sequence(g: &mut Graph, ps: &ParamStore, params: &EvolutionParams, e: Var, batch: &SequenceBatch) -> Result<Roll> {
    if batch.seq_len == 0 || batch.batch == 0 {
        return Err(Error::invalid("cannot roll an empty sequence batch"));
    }
    let dual = params.mode == EvolutionMode::Dual;
    let steps = batch.seq_len;
    let mut roll = Roll { z: vec![], h_long: vec![], h_short: vec![], gates: vec![], last_z: e, last_gate: None };
    let e0 = g.gather_rows(e, &batch.step_rows(0));
    let mut hl = e0;
    let mut hs = e0;
    let mut z = e0;
    let mut gate_carry = None;
    for t in 0..steps {
        let rows = batch.step_rows(t);
        let dt_vals: Vec<f64> = rows.iter().map(|r| batch.norm_gap[*r]).collect();
        let dt = g.column(&dt_vals);
        let mask = g.column(&batch.step_mask(t));
        if t > 0 {
            let et = g.gather_rows(e, &rows);
            let evolved = ode_evolve(g, ps, &params.f_long, hl, dt);
            let updated = params.gru_long.forward(g, ps, et, evolved);
            hl = freeze(g, hl, updated, mask);
            if dual {
                let f_short = params.f_short.as_ref().expect("dual mode");
                let gru_short = params.gru_short.as_ref().expect("dual mode");
                let evolved = ode_evolve(g, ps, f_short, hs, dt);
                let updated = gru_short.forward(g, ps, et, evolved);
                hs = freeze(g, hs, updated, mask);
            } else {
                hs = hl;
            }
        }
        if let Some(gate) = &params.gate {
            let (zt, w) = fuse_states(g, ps, gate, hl, hs, dt);
            z = if t == 0 { zt } else { freeze(g, z, zt, mask) };
            let carried = match gate_carry {
                None => w,
                Some(prev) => freeze(g, prev, w, mask),
            };
            gate_carry = Some(carried);
            roll.gates.push(w);
        } else {
            z = hl;
        }
        roll.h_long.push(hl);
        roll.h_short.push(hs);
        roll.z.push(z);
    }
    if g.value(z).iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("evolved preference state".into()));
    }
    roll.last_z = z;
    roll.last_gate = gate_carry;
    Ok(roll)
}

/// Smoothness penalty on the long-term track: per sequence the sum over
/// real steps of `(1 − dt) ‖h_t − h_{t−1}‖²`, averaged over the batch.
pub fn long_term_reg(g: &mut Graph, h_long: &[Var], batch: &SequenceBatch) -> Var {
    let mut total = g.constant(Mat::zeros((1, 1)));
    for t in 1..h_long.len() {
        let diff = g.sub(h_long[t], h_long[t - 1]);
        let sq = g.mul(diff, diff);
        let per_row = g.sum_rows(sq);
        let weights: Vec<f64> = batch
            .step_rows(t)
            .iter()
            .map(|r| if batch.mask[*r] { 1.0 - batch.norm_gap[*r] } else { 0.0 })
            .collect();
        let w = g.column(&weights);
        let weighted = g.mul(per_row, w);
        let s = g.sum_all(weighted);
        total = g.add(total, s);
    }
    g.scale(total, 1.0 / batch.batch.max(1) as f64)
}

/// Real `(b, t)` positions in deterministic order, evenly thinned to `cap`.
pub fn pooled_positions(batch: &SequenceBatch, cap: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = (0..batch.batch)
        .flat_map(|b| (0..batch.lengths[b]).map(move |t| (b, t)))
        .collect();
    if all.len() <= cap {
        return all;
    }
    (0..cap).map(|k| all[k * all.len() / cap]).collect()
}

/// InfoNCE between the short-term state at each real step and the
/// instantaneous preference at that step; the other pooled steps of the
/// batch are negatives. Cosine similarity over temperature `tau`.
pub fn short_term_reg(g: &mut Graph, h_short: &[Var], e: Var, batch: &SequenceBatch, tau: f64, cap: usize) -> Var {
    let pos = pooled_positions(batch, cap);
    if pos.len() < 2 {
        return g.constant(Mat::zeros((1, 1)));
    }
    let stacked = g.concat_rows(h_short);
    let h_rows: Vec<usize> = pos.iter().map(|(b, t)| t * batch.batch + b).collect();
    let e_rows: Vec<usize> = pos.iter().map(|(b, t)| b * batch.seq_len + t).collect();
    let h = g.gather_rows(stacked, &h_rows);
    let ev = g.gather_rows(e, &e_rows);
    info_nce(g, h, ev, tau)
}

/// Mean over rows of `−log softmax(cos(a_i, b_·)/tau)_i`.
pub fn info_nce(g: &mut Graph, a: Var, b: Var, tau: f64) -> Var {
    let an = g.l2_normalize(a);
    let bn = g.l2_normalize(b);
    let bt = g.transpose(bn);
    let sims = g.matmul(an, bt);
    let logits = g.scale(sims, 1.0 / tau);
    let ls = g.log_softmax(logits);
    let n = g.shape(a).0;
    let diag: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    let picked = g.pick(ls, &diag);
    let mean = g.mean_all(picked);
    g.scale(mean, -1.0)
}
