use ndarray::s;

use super::Mat;

/// Layout and masking of a batched attention call.
///
/// Rows of `q`, `k` and `v` are `batch * seq_len` stacked sequences. A key
/// at position `j` is visible from query `i` when `key_mask[b * seq_len + j]`
/// holds and, under `causal`, `j <= i`. Queries with no visible key output zero.
#[derive(Debug, Clone)]
pub struct AttentionSpec {
    pub heads: usize,
    pub seq_len: usize,
    pub key_mask: Vec<bool>,
    pub causal: bool,
}

impl AttentionSpec {
    fn visible(&self, b: usize, i: usize, j: usize) -> bool {
        self.key_mask[b * self.seq_len + j] && (!self.causal || j <= i)
    }
}

pub(super) fn forward(q: &Mat, k: &Mat, v: &Mat, spec: &AttentionSpec) -> (Mat, Vec<Mat>) {
    let (rows, d) = q.dim();
    let n = spec.seq_len;
    assert!(n > 0 && rows % n == 0, "attention: rows not a multiple of seq_len");
    assert_eq!(spec.key_mask.len(), rows, "attention: mask length");
    assert!(d % spec.heads == 0, "attention: width not divisible by heads");
    let batch = rows / n;
    let dh = d / spec.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Mat::zeros((rows, d));
    let mut probs = Vec::with_capacity(batch * spec.heads);

    for b in 0..batch {
        let r = b * n..(b + 1) * n;
        for h in 0..spec.heads {
            let c = h * dh..(h + 1) * dh;
            let qh = q.slice(s![r.clone(), c.clone()]);
            let kh = k.slice(s![r.clone(), c.clone()]);
            let vh = v.slice(s![r.clone(), c.clone()]);
            let scores = qh.dot(&kh.t()) * scale;
            let mut p = Mat::zeros((n, n));
            for i in 0..n {
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if spec.visible(b, i, j) {
                        max = max.max(scores[[i, j]]);
                    }
                }
                if !max.is_finite() {
                    continue;
                }
                let mut total = 0.0;
                for j in 0..n {
                    if spec.visible(b, i, j) {
                        let e = (scores[[i, j]] - max).exp();
                        p[[i, j]] = e;
                        total += e;
                    }
                }
                p.row_mut(i).mapv_inplace(|x| x / total);
            }
            out.slice_mut(s![r.clone(), c.clone()]).assign(&p.dot(&vh));
            probs.push(p);
        }
    }
    (out, probs)
}

pub(super) fn backward(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    spec: &AttentionSpec,
    probs: &[Mat],
    grad: &Mat,
) -> (Mat, Mat, Mat) {
    let (rows, d) = q.dim();
    let n = spec.seq_len;
    let batch = rows / n;
    let dh = d / spec.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Mat::zeros((rows, d));
    let mut dk = Mat::zeros((rows, d));
    let mut dv = Mat::zeros((rows, d));

    for b in 0..batch {
        let r = b * n..(b + 1) * n;
        for h in 0..spec.heads {
            let c = h * dh..(h + 1) * dh;
            let p = &probs[b * spec.heads + h];
            let qh = q.slice(s![r.clone(), c.clone()]);
            let kh = k.slice(s![r.clone(), c.clone()]);
            let vh = v.slice(s![r.clone(), c.clone()]);
            let go = grad.slice(s![r.clone(), c.clone()]);

            dv.slice_mut(s![r.clone(), c.clone()]).assign(&p.t().dot(&go));
            let dp = go.dot(&vh.t());
            let mut ds = Mat::zeros((n, n));
            for i in 0..n {
                let inner: f64 = (0..n).map(|j| dp[[i, j]] * p[[i, j]]).sum();
                for j in 0..n {
                    ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - inner) * scale;
                }
            }
            dq.slice_mut(s![r.clone(), c.clone()]).assign(&ds.dot(&kh));
            dk.slice_mut(s![r.clone(), c.clone()]).assign(&ds.t().dot(&qh));
        }
    }
    (dq, dk, dv)
}
