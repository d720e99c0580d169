use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::cnn::MiniCnn;
use crate::error::{Error, Result};
use crate::ingest::Sample;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub scheduler_step_size: usize,
    pub scheduler_gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            scheduler_step_size: 5,
            scheduler_gamma: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate must be > 0 and weight decay >= 0"));
        }
        if self.scheduler_step_size == 0 || self.batch_size == 0 {
            return Err(Error::invalid("scheduler step size and batch size must be positive"));
        }
        if !(self.scheduler_gamma > 0.0 && self.scheduler_gamma <= 1.0) {
            return Err(Error::invalid("scheduler gamma must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Step schedule: `lr0 * gamma^floor(epoch / step)`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.scheduler_gamma.powi((epoch / self.scheduler_step_size) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_overall_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestModel {
    pub model: MiniCnn,
    pub epoch: usize,
    pub val_overall_accuracy: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: MiniCnn,
    pub optimizer: Adam,
    pub epochs_done: usize,
    pub best: Option<BestModel>,
}

impl TrainState {
    pub fn new(model: MiniCnn, cfg: &TrainConfig) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(Vec::len).collect();
        Self {
            optimizer: Adam::new(&shapes, cfg.weight_decay),
            model,
            epochs_done: 0,
            best: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<EpochMetrics>,
}

impl TrainOutcome {
    /// Checkpoint with the best validation overall accuracy, or the final
    /// weights when no epoch ran.
    pub fn best_model(&self) -> &MiniCnn {
        self.state
            .best
            .as_ref()
            .map_or(&self.state.model, |b| &b.model)
    }
}

/// Mean cross-entropy and overall accuracy over labeled samples.
pub fn evaluate(model: &MiniCnn, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    let per: Vec<(f64, bool)> = samples
        .par_iter()
        .map(|s| {
            let scores = model.forward(&s.image, false)?.scores;
            let loss = -scores.of(s.label).max(1e-300).ln();
            Ok((loss, scores.argmax() == s.label))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

pub fn train(model: MiniCnn, train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    resume(TrainState::new(model, cfg), train_set, val_set, cfg)
}

/// Run epochs `state.epochs_done..cfg.epochs`.
///
/// Batch order depends only on `(cfg.seed, epoch)`, so a resumed run
/// reproduces the uninterrupted one.
pub fn resume(
    mut state: TrainState,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }
    let mut metrics = Vec::new();
    for epoch in state.epochs_done..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &format!("epoch/{epoch}")));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let model = &state.model;
            let per: Vec<_> = batch
                .par_iter()
                .map(|&i| model.loss_and_gradients(&train_set[i].image, train_set[i].label))
                .collect::<Result<_>>()?;
            let mut grads: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
            let scale = 1.0 / batch.len() as f64;
            for ((loss, scores, g), &i) in per.iter().zip(batch) {
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                loss_sum += loss;
                correct += usize::from(scores.argmax() == train_set[i].label);
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, v) in acc.iter_mut().zip(gi) {
                        *a += v * scale;
                    }
                }
            }
            if grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            state.optimizer.update(state.model.params_mut(), &grads, lr);
            if state.model.params().iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
        }
        let (val_loss, val_acc) = evaluate(&state.model, val_set)?;
        let n = train_set.len() as f64;
        metrics.push(EpochMetrics {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_overall_accuracy: val_acc,
        });
        if state.best.as_ref().is_none_or(|b| val_acc > b.val_overall_accuracy) {
            state.best = Some(BestModel {
                model: state.model.clone(),
                epoch,
                val_overall_accuracy: val_acc,
            });
        }
        state.epochs_done = epoch + 1;
    }
    Ok(TrainOutcome { state, metrics })
}
