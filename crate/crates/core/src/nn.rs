//! Parameter storage, layers and the Adam optimiser.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Mat, Var};
use crate::util::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors. Ids are dense and stable for a given build order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn var(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(id.0, &self.values[id.0])
    }
}

pub fn xavier(rng: &mut Rng, rows: usize, cols: usize) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

pub fn normal(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("positive std");
    Mat::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Embedding table whose row 0 is the padding row, fixed at zero.
pub fn embedding_table(rng: &mut Rng, rows: usize, dim: usize, std: f64) -> Mat {
    let mut m = normal(rng, rows, dim, std);
    m.row_mut(0).fill(0.0);
    m
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, rng: &mut Rng, input: usize, output: usize) -> Self {
        let w = ps.add(format!("{name}.w"), xavier(rng, input, output));
        let b = ps.add(format!("{name}.b"), Mat::zeros((1, output)));
        Self { w, b: Some(b) }
    }

    pub fn without_bias(
        ps: &mut ParamStore,
        name: &str,
        rng: &mut Rng,
        input: usize,
        output: usize,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), xavier(rng, input, output));
        Self { w, b: None }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Var {
        let w = ps.var(g, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = ps.var(g, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Gelu,
}

/// Two-layer perceptron `input → hidden → output`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
    pub act: Activation,
}

impl Mlp {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        rng: &mut Rng,
        dims: (usize, usize, usize),
        act: Activation,
    ) -> Self {
        Self {
            first: Linear::new(ps, &format!("{name}.0"), rng, dims.0, dims.1),
            second: Linear::new(ps, &format!("{name}.1"), rng, dims.1, dims.2),
            act,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Var {
        let h = self.first.forward(g, ps, x);
        let h = match self.act {
            Activation::Tanh => g.tanh(h),
            Activation::Gelu => g.gelu(h),
        };
        self.second.forward(g, ps, h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: ps.add(format!("{name}.gamma"), Mat::ones((1, dim))),
            beta: ps.add(format!("{name}.beta"), Mat::zeros((1, dim))),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Var {
        let gamma = ps.var(g, self.gamma);
        let beta = ps.var(g, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// GRU cell. With update gate `u` and candidate `n`,
/// `h_new = u ⊙ n + (1 − u) ⊙ h`: a closed gate keeps the previous state.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub dim: usize,
}

impl GruCell {
    pub fn new(ps: &mut ParamStore, name: &str, rng: &mut Rng, input: usize, dim: usize) -> Self {
        Self {
            input: Linear::new(ps, &format!("{name}.ih"), rng, input, 3 * dim),
            hidden: Linear::new(ps, &format!("{name}.hh"), rng, dim, 3 * dim),
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var, h: Var) -> Var {
        let d = self.dim;
        let gi = self.input.forward(g, ps, x);
        let gh = self.hidden.forward(g, ps, h);
        let (ir, iu, in_) = (g.slice_cols(gi, 0, d), g.slice_cols(gi, d, d), g.slice_cols(gi, 2 * d, d));
        let (hr, hu, hn) = (g.slice_cols(gh, 0, d), g.slice_cols(gh, d, d), g.slice_cols(gh, 2 * d, d));
        let r = g.add(ir, hr);
        let reset = g.sigmoid(r);
        let u = g.add(iu, hu);
        let update = g.sigmoid(u);
        let gated = g.mul(reset, hn);
        let n = g.add(in_, gated);
        let cand = g.tanh(n);
        let diff = g.sub(cand, h);
        let step = g.mul(update, diff);
        g.add(h, step)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, ps: &ParamStore) -> Self {
        let zeros: Vec<Mat> = ps.ids().map(|id| Mat::zeros(ps.get(id).dim())).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, ps: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let mut ids: Vec<usize> = grads.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        for id in ids {
            let g = grads.get(id).expect("gradient");
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let p = ps.get_mut(ParamId(id));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= c.lr * mh / (vh.sqrt() + c.eps);
            });
        }
    }
}
