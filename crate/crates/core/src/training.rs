//! Loss, early stopping and the per-fold training loop.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldSplit, Sample};
use crate::error::{Error, Result};
use crate::metrics::FoldMetrics;
use crate::model::{build_model, predict_class, Batch, Model, ModelSpec};
use crate::nn::{Adam, AdamConfig, Tensor};
use crate::rng;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_min_delta: f64,
    pub early_stop_patience: usize,
    /// Reload the weights of the best validation epoch when training ends.
    pub restore_best_weights: bool,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            early_stop_min_delta: 1e-4,
            early_stop_patience: 5,
            restore_best_weights: true,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.early_stop_min_delta >= 0.0
            && self.early_stop_patience >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Absent when the validation set holds a single class.
    pub val_auc: Option<f64>,
}

/// Mean binary cross-entropy (natural log) of ill-class probabilities.
pub fn binary_cross_entropy(labels: &[u8], probs: &[f64]) -> Result<f64> {
    if labels.len() != probs.len() {
        return Err(Error::shape("probabilities", labels.len(), probs.len()));
    }
    if labels.is_empty() {
        return Err(Error::shape("probabilities", 1, 0));
    }
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// `d loss / d p` for [`binary_cross_entropy`]; zero where the clamp is active.
fn bce_gradient(labels: &[u8], probs: &[f64]) -> Vec<f64> {
    let n = labels.len() as f64;
    labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                0.0
            } else if y != 0 {
                -1.0 / (p * n)
            } else {
                1.0 / ((1.0 - p) * n)
            }
        })
        .collect()
}

/// Training-mode forward and backward on one batch. Parameter gradients are
/// accumulated (not zeroed first); returns the batch loss.
pub fn loss_and_backward(model: &mut Model, batch: &Batch) -> Result<f64> {
    let labels = batch
        .labels
        .as_ref()
        .ok_or_else(|| Error::Training("batch has no labels".into()))?;
    let probs = model.forward_train(batch)?;
    let ill: Vec<f64> = probs.data().chunks(2).map(|r| r[1]).collect();
    let loss = binary_cross_entropy(labels, &ill)?;
    let mut dprobs = vec![0.0; probs.data().len()];
    for (i, g) in bce_gradient(labels, &ill).into_iter().enumerate() {
        dprobs[2 * i + 1] = g;
    }
    model.backward(&Tensor::from_vec(probs.shape(), dprobs)?)?;
    Ok(loss)
}

/// True when the last `patience` epochs each failed to beat the lowest
/// earlier validation loss by more than `min_delta`. A sub-delta gain lowers
/// the best-so-far but does not reset the count.
pub fn should_stop(history: &[EpochRecord], min_delta: f64, patience: usize) -> bool {
    let Some((first, rest)) = history.split_first() else {
        return false;
    };
    let mut best = first.val_loss;
    let mut waiting = 0;
    for r in rest {
        if best - r.val_loss > min_delta {
            waiting = 0;
        } else {
            waiting += 1;
        }
        best = best.min(r.val_loss);
    }
    waiting >= patience
}

/// Inference-mode `[healthy, ill]` probabilities for `samples`.
pub fn predict_samples(model: &Model, samples: &[&Sample], batch_size: usize) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = Batch::from_samples(chunk, model.spec())?;
        let p = model.forward(&batch)?;
        out.extend(p.data().chunks(2).map(|r| [r[0], r[1]]));
    }
    Ok(out)
}

/// Loss and metrics of `model` on `samples`.
pub fn evaluate_samples(model: &Model, samples: &[&Sample], batch_size: usize, fold: usize) -> Result<FoldMetrics> {
    if samples.is_empty() {
        return Err(Error::Evaluation("no samples to evaluate".into()));
    }
    let probs = predict_samples(model, samples, batch_size)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let ill: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    let loss = binary_cross_entropy(&labels, &ill)?;
    let probs_t = Tensor::matrix(probs.len(), 2, probs.iter().flatten().copied().collect())?;
    let preds = predict_class(&probs_t);
    FoldMetrics::compute(fold, &labels, &preds, &ill, loss)
}

pub struct TrainedModel {
    pub model: Model,
    /// 1-based epoch whose weights the model holds.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation metrics of the returned weights.
    pub val_metrics: FoldMetrics,
}

/// Trains a fresh model on the fold's training ids with Adam and
/// mini-batches reshuffled every epoch, watching the validation loss for
/// early stopping. With `restore_best_weights` the returned model holds the
/// weights of the lowest-validation-loss epoch (earliest on ties), otherwise
/// those of the last epoch. Initialization and shuffling use streams derived
/// from `cfg.seed` and the fold index.
pub fn train_fold(
    spec: &ModelSpec,
    fold: &FoldSplit,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, Vec<EpochRecord>)> {
    train_fold_with(spec, fold, ds, cfg, None, |_| Ok(()))
}

/// [`train_fold`] with optional starting weights (a [`Model::snapshot`] of
/// a model built from the same spec) and a hook called after every epoch
/// with the history so far.
pub fn train_fold_with<F>(
    spec: &ModelSpec,
    fold: &FoldSplit,
    ds: &Dataset,
    cfg: &TrainConfig,
    init: Option<&[Vec<f64>]>,
    mut on_epoch: F,
) -> Result<(TrainedModel, Vec<EpochRecord>)>
where
    F: FnMut(&[EpochRecord]) -> Result<()>,
{
    cfg.validate()?;
    if fold.train_ids.is_empty() {
        return Err(Error::Training(format!(
            "fold {} has an empty training set",
            fold.fold_index
        )));
    }
    if fold.val_ids.is_empty() {
        return Err(Error::Training(format!(
            "fold {} has an empty validation set",
            fold.fold_index
        )));
    }
    let index: HashMap<&str, usize> = ds.index_of();
    let resolve = |ids: &[String]| -> Result<Vec<&Sample>> {
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| &ds.samples()[i])
                    .ok_or_else(|| Error::Training(format!("fold id `{id}` not in dataset")))
            })
            .collect()
    };
    let train = resolve(&fold.train_ids)?;
    let val = resolve(&fold.val_ids)?;

    let fold_no = fold.fold_index as u64;
    let mut model = build_model(spec, rng::derive_seed(cfg.seed, "fold-init", fold_no))?;
    if let Some(weights) = init {
        model.restore(weights)?;
    }
    let mut shuffle_rng = rng::stream(cfg.seed, "shuffle", fold_no);
    let mut adam = Adam::new(cfg.learning_rate, cfg.adam);

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let members: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let batch = Batch::from_samples(&members, spec)?;
            model.zero_grad();
            let loss = loss_and_backward(&mut model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    what: "training loss".into(),
                });
            }
            let mut params = model.state_mut();
            adam.step(&mut params);
            loss_sum += loss * members.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let probs = predict_samples(&model, &val, cfg.batch_size)?;
        let labels: Vec<u8> = val.iter().map(|s| s.label).collect();
        let ill: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let val_loss = binary_cross_entropy(&labels, &ill)?;
        if !val_loss.is_finite() || ill.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                what: "validation loss".into(),
            });
        }
        let correct = probs
            .iter()
            .zip(&labels)
            .filter(|(p, &y)| u8::from(p[1] >= p[0]) == y)
            .count();
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy: correct as f64 / val.len() as f64,
            val_auc: crate::metrics::auc(&labels, &ill).ok(),
        });
        log::debug!(
            "fold {} epoch {epoch}: train_loss {train_loss:.6} val_loss {val_loss:.6}",
            fold.fold_index
        );
        on_epoch(&history)?;

        let improved = match &best {
            None => true,
            Some((_, b, _)) => val_loss < *b,
        };
        if improved {
            let snap = if cfg.restore_best_weights {
                model.snapshot()
            } else {
                Vec::new()
            };
            best = Some((epoch, val_loss, snap));
        }
        if should_stop(&history, cfg.early_stop_min_delta, cfg.early_stop_patience) {
            break;
        }
    }

    let (mut best_epoch, mut best_val_loss, snap) = best.expect("at least one epoch ran");
    if cfg.restore_best_weights {
        model.restore(&snap)?;
    } else {
        let last = history.last().expect("at least one epoch ran");
        best_epoch = last.epoch;
        best_val_loss = last.val_loss;
    }
    let val_metrics = evaluate_samples(&model, &val, cfg.batch_size, fold.fold_index)?;
    Ok((
        TrainedModel {
            model,
            best_epoch,
            best_val_loss,
            val_metrics,
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(val_loss: f64) -> EpochRecord {
        EpochRecord {
            epoch: 0,
            train_loss: 0.0,
            val_loss,
            val_accuracy: 0.0,
            val_auc: None,
        }
    }

    fn hist(losses: &[f64]) -> Vec<EpochRecord> {
        losses.iter().map(|&l| rec(l)).collect()
    }

    #[test]
    fn bce_examples() {
        assert!(binary_cross_entropy(&[1], &[1.0]).unwrap() <= 1.2e-7);
        assert!((binary_cross_entropy(&[1, 0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let clamped = binary_cross_entropy(&[0], &[1.0]).unwrap();
        assert!((clamped - (-(PROB_EPS).ln())).abs() < 1e-6);
        assert!((clamped - 16.118).abs() < 1e-3);
        assert!(matches!(
            binary_cross_entropy(&[0, 1], &[0.5]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn bce_gradient_matches_differences() {
        let labels = [1, 0, 1];
        let probs = [0.3, 0.6, 0.9];
        let g = bce_gradient(&labels, &probs);
        for i in 0..3 {
            let h = 1e-6;
            let mut pp = probs;
            pp[i] += h;
            let mut pm = probs;
            pm[i] -= h;
            let fd =
                (binary_cross_entropy(&labels, &pp).unwrap() - binary_cross_entropy(&labels, &pm).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn stopping_examples() {
        assert!(!should_stop(&hist(&[1.0, 0.5, 0.4]), 1e-4, 5));
        let flat = hist(&[1.0; 6]);
        assert!(!should_stop(&flat[..5], 1e-4, 5));
        assert!(should_stop(&flat, 1e-4, 5));
        // Each epoch beats the previous best by only 5e-5.
        let creeping: Vec<f64> = (0..6).map(|i| 1.0 - 5e-5 * i as f64).collect();
        assert!(!should_stop(&hist(&creeping[..5]), 1e-4, 5));
        assert!(should_stop(&hist(&creeping), 1e-4, 5));
        // A real gain after four flat epochs resets the count.
        assert!(!should_stop(&hist(&[1.0, 1.0, 1.0, 1.0, 1.0, 0.9]), 1e-4, 5));
        assert!(!should_stop(&[], 1e-4, 5));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
