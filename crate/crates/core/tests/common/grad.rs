//! Gradient checks shared by the gradient tests and the acceptance run.

use super::{mat, max_grad_error, seq_batch, toy, GradReport};
use tcdsr::autograd::Var;
use tcdsr::evolution::{long_term_reg, roll_sequence, short_term_reg, EvolutionMode, EvolutionParams};
use tcdsr::ingest::Domain;
use tcdsr::nn::{ParamId, ParamStore};
use tcdsr::semantic::counterfactual_loss;
use tcdsr::trainer::{make_batch, Instance, Part, Variant, View};
use tcdsr::transfer::{preference_factors, PatternEncoder, TransferGate};
use tcdsr::util::rng_for;

pub const TOL: f64 = 1e-4;
const D: usize = 8;
const N: usize = 4;

pub fn evolution_setup() -> (ParamStore, EvolutionParams, ParamId, tcdsr::encoder::SequenceBatch) {
    let mut ps = ParamStore::new();
    let mut rng = rng_for(5, "grad/evo");
    let params = EvolutionParams::new(&mut ps, "evo", &mut rng, D, EvolutionMode::Dual);
    let sb = seq_batch(&[vec![(0.0, 1), (0.3, 1), (0.05, 2), (0.9, 1)], vec![(0.0, 2), (0.6, 2), (0.2, 1)]], N);
    let e = ps.add("e", mat(sb.rows(), D, |r, c| ((r * 7 + c * 3) as f64 * 0.37).sin() * 0.8));
    (ps, params, e, sb)
}

pub fn long_term_regularizer() -> GradReport {
    let (ps, params, e, sb) = evolution_setup();
    max_grad_error(&ps, 24, |p, g| {
        let ev = p.var(g, e);
        let roll = roll_sequence(g, p, &params, ev, &sb).unwrap();
        long_term_reg(g, &roll.h_long, &sb)
    })
}

pub fn short_term_regularizer() -> GradReport {
    let (ps, params, e, sb) = evolution_setup();
    max_grad_error(&ps, 24, |p, g| {
        let ev = p.var(g, e);
        let roll = roll_sequence(g, p, &params, ev, &sb).unwrap();
        short_term_reg(g, &roll.h_short, ev, &sb, 0.2, 2048)
    })
}

pub fn counterfactual_objective() -> GradReport {
    let mut ps = ParamStore::new();
    let z = ps.add("z", mat(2, D, |r, c| ((r * 5 + c) as f64 * 0.61).cos()));
    let zs = ps.add("z_small", mat(2, D, |r, c| ((r * 3 + c) as f64 * 0.43).sin()));
    let zb = ps.add("z_big", mat(2, D, |r, c| ((r + 2 * c) as f64 * 0.29).cos() - 0.3));
    max_grad_error(&ps, 64, |p, g| {
        let (a, b, c) = (p.var(g, z), p.var(g, zs), p.var(g, zb));
        counterfactual_loss(g, a, b, c, &[true, true], &[0, 1], 0.2, 5)
    })
}

pub fn transfer_weights() -> GradReport {
    let mut ps = ParamStore::new();
    let mut rng = rng_for(9, "grad/transfer");
    let sb_m = seq_batch(&[vec![(0.0, 1), (0.3, 2), (0.1, 1), (0.5, 2)], vec![(0.0, 2), (0.7, 1), (0.2, 2)]], N);
    let sb_a = seq_batch(&[vec![(0.0, 1), (0.1, 1)], vec![(0.0, 1)]], N);
    let pattern = PatternEncoder::new(&mut ps, &mut rng, D, N + 2, N, 2, None);
    let gate = TransferGate::new(&mut ps, &mut rng, D);
    let steps: Vec<ParamId> =
        (0..N).map(|t| ps.add(format!("z{t}"), mat(2, D, |r, c| ((t * 11 + r * 5 + c) as f64 * 0.53).sin()))).collect();
    let llm = ps.add("llm", mat(2, D, |r, c| ((r + c) as f64 * 0.17).cos() * 0.5));
    max_grad_error(&ps, 24, |p, g| {
        let z: Vec<Var> = steps.iter().map(|s| p.var(g, *s)).collect();
        let l = p.var(g, llm);
        let (ra, rb) = preference_factors(g, &z, &sb_m, Some(l));
        let u_a = pattern.forward(g, p, &sb_a);
        let u_m = pattern.forward(g, p, &sb_m);
        let wa = gate.weight(g, p, Domain::A, u_a, u_m, ra, rb);
        let wb = gate.weight(g, p, Domain::B, u_a, u_m, rb, ra);
        let both = g.concat_rows(&[wa, wb]);
        let sq = g.mul(both, both);
        g.sum_all(sq)
    })
}

/// Gradient check of the complete training objective of `variant` on a
/// batch of two instances.
pub fn full_objective(variant: Variant) -> GradReport {
    let (ds, sem, model) = toy(variant, 11);
    // Two users with history in both domains, so every branch carries
    // signal and the counterfactual term has a negative.
    let both = |i: &&Instance| !i.view(View::A).events.is_empty() && !i.view(View::B).events.is_empty();
    let first = ds.train.iter().position(|i| both(&i)).unwrap();
    let second = ds.train.iter().position(|i| both(&i) && i.user != ds.train[first].user).unwrap();
    let batch = make_batch(&ds, Part::Train, &[first, second], sem.as_ref(), variant.counterfactual());
    max_grad_error(&model.ps, 6, |p, g| {
        let mut m = model.clone();
        m.ps = p.clone();
        m.objective(g, &batch, None).unwrap().0
    })
}
