use crate::autograd::{Graph, Mat, Var};

/// Row-wise cosine similarity of two equally shaped matrices, as a column.
pub fn row_cosine(g: &mut Graph, a: Var, b: Var) -> Var {
    let an = g.l2_normalize(a);
    let bn = g.l2_normalize(b);
    let prod = g.mul(an, bn);
    g.sum_rows(prod)
}

/// Counterfactual ranking objective averaged over the active rows.
///
/// Per row: `−log σ((s_small − s_big)/τ) − log σ((s_big − s_neg)/τ)` with
/// `s_neg` the mean cosine to the `k` most similar other rows. Rows that
/// share a `group` (the same user) are never negatives for one another and
/// inactive rows neither contribute nor serve as negatives. When fewer than
/// `k` negatives exist, all available ones are used; a row with none skips
/// the second term.
pub fn counterfactual_loss(
    g: &mut Graph,
    z: Var,
    z_small: Var,
    z_big: Var,
    active: &[bool],
    groups: &[usize],
    tau: f64,
    k: usize,
) -> Var {
    let rows = g.shape(z).0;
    assert_eq!(active.len(), rows);
    assert_eq!(groups.len(), rows);
    let n_active = active.iter().filter(|a| **a).count();
    if n_active == 0 {
        return g.constant(Mat::zeros((1, 1)));
    }
    let s_small = row_cosine(g, z, z_small);
    let s_big = row_cosine(g, z, z_big);
    let margin1 = g.sub(s_small, s_big);
    let neg1 = g.scale(margin1, -1.0 / tau);
    let l1 = g.softplus(neg1);

    let zn = g.l2_normalize(z);
    let znt = g.transpose(zn);
    let sims = g.matmul(zn, znt);
    let sv = g.value(sims).clone();
    let mut picks = Vec::new();
    let mut avg = Vec::new();
    let mut has_neg = vec![0.0; rows];
    let short = std::cell::Cell::new(false);
    for r in 0..rows {
        if !active[r] {
            continue;
        }
        let mut cands: Vec<usize> =
            (0..rows).filter(|&j| j != r && active[j] && groups[j] != groups[r]).collect();
        cands.sort_by(|a, b| sv[[r, *b]].total_cmp(&sv[[r, *a]]).then(a.cmp(b)));
        if cands.len() < k {
            short.set(true);
        }
        cands.truncate(k);
        if cands.is_empty() {
            continue;
        }
        has_neg[r] = 1.0;
        for j in &cands {
            avg.push((r, picks.len(), 1.0 / cands.len() as f64));
            picks.push((r, *j));
        }
    }
    if short.get() {
        log::debug!("fewer than {k} in-batch negatives for some rows; using all available");
    }
    let mut total = {
        let w: Vec<f64> = active.iter().map(|a| f64::from(u8::from(*a))).collect();
        let wc = g.column(&w);
        let l1m = g.mul(l1, wc);
        g.sum_all(l1m)
    };
    if !picks.is_empty() {
        let picked = g.pick(sims, &picks);
        let mut a = Mat::zeros((rows, picks.len()));
        for (r, p, w) in avg {
            a[[r, p]] = w;
        }
        let a = g.constant(a);
        let s_neg = g.matmul(a, picked);
        let margin2 = g.sub(s_big, s_neg);
        let neg2 = g.scale(margin2, -1.0 / tau);
        let l2 = g.softplus(neg2);
        let hn = g.column(&has_neg);
        let l2m = g.mul(l2, hn);
        let s = g.sum_all(l2m);
        total = g.add(total, s);
    }
    g.scale(total, 1.0 / n_active as f64)
}
