//! Property checks shared by the dedicated tests and the acceptance run.

use ndarray::{array, Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use tcdsr::autograd::{Graph, Mat};
use tcdsr::evolution::{euler_step, fuse_states, ode_evolve};
use tcdsr::ingest::Domain;
use tcdsr::nn::{Activation, Linear, Mlp, ParamStore};
use tcdsr::semantic::{build_prompt, perturb, PerturbMode, PromptMode};
use tcdsr::temporal::{GapToken, DAY};
use tcdsr::transfer::TransferGate;
use tcdsr::util::{rng_for, Rng};

fn gaussian(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

#[derive(Debug)]
pub struct OdeReport {
    /// Largest deviation of one Euler step from `(I + dt A) h + dt b`.
    pub closed_form_error: f64,
    /// Largest deviation of the graph evolution from the scalar Euler step.
    pub graph_error: f64,
    /// Error ratios when halving the step, from dt = 0.4 downwards.
    pub ratios: Vec<f64>,
}

/// One Euler step against its closed form for linear derivatives, and the
/// local error against a 64-substep reference as the step is halved.
pub fn ode_check() -> OdeReport {
    let a = array![[-1.0, 0.5, 0.0], [-0.5, -2.0, 0.3], [0.2, 0.0, -0.7]];
    let b = array![0.1, -0.2, 0.05];
    let lin = |h: &Array1<f64>, _: f64| a.dot(h) + &b;
    let mut rng = rng_for(17, "ode");
    let mut closed_form_error: f64 = 0.0;
    for _ in 0..100 {
        let h: Array1<f64> = Array1::from_shape_fn(3, |_| rng.gen_range(-2.0..2.0));
        let dt: f64 = rng.gen_range(0.0..1.0);
        let step = euler_step(&h, dt, lin).unwrap();
        let m: Array2<f64> = Array2::eye(3) + &a * dt;
        let expect = m.dot(&h) + &b * dt;
        closed_form_error = closed_form_error.max((&step - &expect).iter().fold(0.0, |w, v| w.max(v.abs())));
    }

    let h0 = array![1.0, -0.5, 0.8];
    let reference = |dt: f64| {
        let mut h = h0.clone();
        for _ in 0..64 {
            h = euler_step(&h, dt / 64.0, lin).unwrap();
        }
        h
    };
    let err = |dt: f64| {
        let d = euler_step(&h0, dt, lin).unwrap() - reference(dt);
        d.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    let steps = [0.4, 0.2, 0.1, 0.05, 0.025];
    let errs: Vec<f64> = steps.iter().map(|s| err(*s)).collect();
    let ratios = errs.windows(2).map(|w| w[0] / w[1]).collect();

    // The model's graph-level evolution is the same Euler step.
    let mut ps = ParamStore::new();
    let f = Mlp::new(&mut ps, "f", &mut rng, (4, 3, 3), Activation::Tanh);
    let mut graph_error: f64 = 0.0;
    for _ in 0..20 {
        let h = gaussian(&mut rng, 1, 3, 1.0);
        let dt: f64 = rng.gen_range(0.0..1.0);
        let mut g = Graph::new();
        let (hv, dv) = (g.constant(h.clone()), g.column(&[dt]));
        let out = ode_evolve(&mut g, &ps, &f, hv, dv);
        let out = g.value(out).row(0).to_owned();
        let slope = |x: &Array1<f64>, t: f64| {
            let mut g = Graph::new();
            let mut inp = x.to_vec();
            inp.push(t);
            let v = g.constant(Mat::from_shape_vec((1, 4), inp).unwrap());
            let y = f.forward(&mut g, &ps, v);
            g.value(y).row(0).to_owned()
        };
        let scalar = euler_step(&h.row(0).to_owned(), dt, slope).unwrap();
        graph_error = graph_error.max((&out - &scalar).iter().fold(0.0, |w, v| w.max(v.abs())));
    }
    OdeReport { closed_form_error, graph_error, ratios }
}

#[derive(Debug, Default)]
pub struct InvariantReport {
    pub trials: usize,
    pub softmax_max_dev: f64,
    pub fusion_violations: usize,
    pub gate_violations: usize,
    pub transfer_violations: usize,
}

/// Randomized trials of the softmax, fusion and weight invariants.
pub fn invariant_trials(trials: usize) -> InvariantReport {
    let mut rng = rng_for(23, "invariants");
    let mut rep = InvariantReport { trials, ..Default::default() };
    let d = 4;
    let mut ps = ParamStore::new();
    let gate = Linear::new(&mut ps, "fuse", &mut rng, 2 * d + 1, d);
    let transfer = TransferGate::new(&mut ps, &mut rng, d);
    for t in 0..trials {
        // Re-draw the parameters every hundred trials.
        if t % 100 == 0 {
            for id in ps.ids().collect::<Vec<_>>() {
                let shape = ps.get(id).dim();
                *ps.get_mut(id) = gaussian(&mut rng, shape.0, shape.1, 0.5);
            }
        }
        let mut g = Graph::new();
        let n = rng.gen_range(2..200);
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let x = g.constant(gaussian(&mut rng, 1, n, scale));
        let ls = g.log_softmax(x);
        let total: f64 = g.value(ls).iter().map(|v| v.exp()).sum();
        rep.softmax_max_dev = rep.softmax_max_dev.max((total - 1.0).abs());

        let rows = 3;
        let hl_m = gaussian(&mut rng, rows, d, 2.0);
        let hs_m = gaussian(&mut rng, rows, d, 2.0);
        let dts: Vec<f64> = (0..rows).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (hl, hs, dt) = (g.constant(hl_m.clone()), g.constant(hs_m.clone()), g.column(&dts));
        let (z, w) = fuse_states(&mut g, &ps, &gate, hl, hs, dt);
        for ((zv, a), b) in g.value(z).iter().zip(hl_m.iter()).zip(hs_m.iter()) {
            let tol = 1e-12 * a.abs().max(b.abs()).max(1.0);
            if *zv < a.min(*b) - tol || *zv > a.max(*b) + tol {
                rep.fusion_violations += 1;
            }
        }
        rep.gate_violations += g.value(w).iter().filter(|v| !(**v > 0.0 && **v < 1.0)).count();

        let parts: Vec<_> = (0..4).map(|_| g.constant(gaussian(&mut rng, rows, d, 1.0))).collect();
        let dom = if t % 2 == 0 { Domain::A } else { Domain::B };
        let tw = transfer.weight(&mut g, &ps, dom, parts[0], parts[1], parts[2], parts[3]);
        rep.transfer_violations += g.value(tw).iter().filter(|v| !(**v > 0.0 && **v < 1.0)).count();
    }
    rep
}

#[derive(Debug, Default)]
pub struct CounterfactualReport {
    pub alpha: f64,
    /// Replaced tokens per mode.
    pub small_replaced: usize,
    pub big_replaced: usize,
    /// Replacements that stayed in (small) / left (big) the original group.
    pub small_kept_group: usize,
    pub big_changed_group: usize,
    pub small_rate: f64,
    pub big_rate: f64,
    /// Non-gap tokens that were modified.
    pub touched_text: usize,
}

/// Perturbs random prompts until each mode has replaced at least `target`
/// gap tokens.
pub fn counterfactual_contract(alpha: f64, target: usize) -> CounterfactualReport {
    let mut rng = rng_for(31, "cf-contract");
    let mut rep = CounterfactualReport { alpha, ..Default::default() };
    for mode in [PerturbMode::Small, PerturbMode::Big] {
        let (mut seen, mut replaced, mut ok) = (0usize, 0usize, 0usize);
        while replaced < target {
            let len = rng.gen_range(2..30);
            let events: Vec<(Domain, String)> = (0..len)
                .map(|i| (if rng.gen_bool(0.5) { Domain::A } else { Domain::B }, format!("item {i}")))
                .collect();
            let mut gaps = vec![-1];
            gaps.extend((1..len).map(|_| (60.0 * 10f64.powf(rng.gen_range(0.0..6.0))) as i64));
            let prompt = build_prompt(&events, &gaps, PromptMode::Tokens).unwrap();
            let (out, stats) = perturb(&prompt, mode, alpha, &mut rng);
            seen += stats.gaps;
            for (a, b) in prompt.tokens.iter().zip(&out.tokens) {
                match (a.gap_token(), b.gap_token()) {
                    (Some(x), Some(y)) if x != y => {
                        replaced += 1;
                        let same = group(x) == group(y);
                        if same == (mode == PerturbMode::Small) {
                            ok += 1;
                        }
                    }
                    (Some(_), Some(_)) => {}
                    _ if a != b => rep.touched_text += 1,
                    _ => {}
                }
            }
        }
        let rate = replaced as f64 / seen as f64;
        match mode {
            PerturbMode::Small => (rep.small_replaced, rep.small_kept_group, rep.small_rate) = (replaced, ok, rate),
            PerturbMode::Big => (rep.big_replaced, rep.big_changed_group, rep.big_rate) = (replaced, ok, rate),
        }
    }
    rep
}

fn group(t: GapToken) -> usize {
    // Independent of the library's grouping table: short < 3 days, medium < 4 weeks.
    let lo = GapToken::DURATIONS.iter().find(|(x, _)| *x == t).unwrap().1;
    if lo < 3 * DAY {
        0
    } else if lo < 28 * DAY {
        1
    } else {
        2
    }
}
