//! Optimization loop with per-epoch validation and early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{make_batch, Dataset, Part, SemanticFeatures};
use super::model::{LossParts, Model};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::eval::rank_of;
use crate::nn::{Adam, AdamConfig};
use crate::util::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Means over the epoch's batches.
    pub loss: LossParts,
    pub valid_mrr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    /// A loss part went non-finite; the best model so far is kept.
    Diverged(String),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation MRR.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// Mean reciprocal rank of the target among its candidates.
pub fn part_mrr(model: &Model, ds: &Dataset, part: Part, sem: Option<&SemanticFeatures>) -> Result<f64> {
    let scores = model.score_part(ds, part, sem)?;
    if scores.is_empty() {
        return Err(Error::invalid(format!("no {part:?} instances to evaluate")));
    }
    Ok(scores.iter().map(|s| 1.0 / rank_of(s, 0) as f64).sum::<f64>() / scores.len() as f64)
}

/// One pass over the shuffled training instances. Returns the mean parts.
fn run_epoch(model: &mut Model, opt: &mut Adam, ds: &Dataset, sem: Option<&SemanticFeatures>, epoch: usize) -> Result<LossParts> {
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    order.shuffle(&mut rng_for(model.config.seed, &format!("epoch/{epoch}")));
    let mut drop_rng = rng_for(model.config.seed, &format!("dropout/{epoch}"));
    let cf = model.variant().counterfactual();
    let mut sum = LossParts::default();
    let mut batches = 0usize;
    for chunk in order.chunks(model.config.batch_size) {
        let batch = make_batch(ds, Part::Train, chunk, sem, cf);
        let mut g = Graph::new();
        let (loss, parts) = model.objective(&mut g, &batch, Some(&mut drop_rng))?;
        let grads = g.backward(loss);
        if grads.iter().any(|(_, m)| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradient".into()));
        }
        opt.update(&mut model.ps, &grads);
        log::trace!("epoch {epoch} batch {batches}: {parts:?}");
        sum.main += parts.main;
        sum.ode += parts.ode;
        sum.sem += parts.sem;
        sum.total += parts.total;
        batches += 1;
    }
    let n = batches.max(1) as f64;
    Ok(LossParts { main: sum.main / n, ode: sum.ode / n, sem: sum.sem / n, total: sum.total / n })
}

/// Trains with Adam, validating after every epoch. Keeps the parameters of
/// the best validation epoch and stops after `patience` epochs without
/// improvement.
pub fn train(mut model: Model, ds: &Dataset, sem: Option<&SemanticFeatures>) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() }, &model.ps);
    let mut best = model.clone();
    let mut best_mrr = part_mrr(&model, ds, Part::Valid, sem)?;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=cfg.epochs {
        let loss = match run_epoch(&mut model, &mut opt, ds, sem, epoch) {
            Ok(l) => l,
            Err(Error::NonFinite(what)) => {
                log::error!("training diverged in epoch {epoch}: {what}");
                stop = StopReason::Diverged(what);
                break;
            }
            Err(e) => return Err(e),
        };
        let valid_mrr = part_mrr(&model, ds, Part::Valid, sem)?;
        log::info!(
            "{} epoch {epoch}: loss {:.4} (main {:.4}, ode {:.4}, sem {:.4}) valid MRR {valid_mrr:.4}",
            cfg.variant,
            loss.total,
            loss.main,
            loss.ode,
            loss.sem
        );
        history.push(EpochRecord { epoch, loss, valid_mrr });
        if valid_mrr > best_mrr {
            best_mrr = valid_mrr;
            best_epoch = epoch;
            best = model.clone();
        } else if epoch - best_epoch >= cfg.patience {
            stop = StopReason::EarlyStop;
            break;
        }
    }
    Ok(TrainOutcome { model: best, history, best_epoch, stop })
}
