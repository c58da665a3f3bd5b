use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{network, ModelParams};
use crate::dataset::NormalizedImage;
use crate::error::{Error, Result};

/// Plain mini-batch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Compute per-sample gradients on the thread pool. The reduction order
    /// is fixed, so results are bit-identical to the serial path.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            shuffle: true,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch, measured before each batch update.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochStats>,
}

impl TrainingTrace {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn sample_gradient(params: &ModelParams, image: &[f64], label: usize) -> (ModelParams, f64, bool) {
    let act = network::forward(params, image);
    let mut d_logits = act.probs.clone();
    d_logits[label] -= 1.0;
    let mut grads = ModelParams::zeros(params.num_classes);
    network::backward(params, image, &act, &d_logits, Some(&mut grads), false);
    let loss = -act.probs[label].ln();
    let correct = super::argmax(&act.probs) == label;
    (grads, loss, correct)
}

/// Trains a copy of `params` with softmax cross-entropy.
pub fn train(
    params: &ModelParams,
    data: &[(NormalizedImage, usize)],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainingTrace)> {
    cfg.validate()?;
    params.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training needs at least one sample"));
    }
    if let Some((_, bad)) = data.iter().find(|(_, l)| *l >= params.num_classes) {
        return Err(Error::InvalidClass {
            class: *bad,
            num_classes: params.num_classes,
        });
    }

    let mut params = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainingTrace::default();

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let per_sample: Vec<(ModelParams, f64, bool)> = if cfg.parallel {
                batch
                    .par_iter()
                    .map(|&i| sample_gradient(&params, data[i].0.values(), data[i].1))
                    .collect()
            } else {
                batch
                    .iter()
                    .map(|&i| sample_gradient(&params, data[i].0.values(), data[i].1))
                    .collect()
            };

            let mut total = ModelParams::zeros(params.num_classes);
            for (g, loss, ok) in &per_sample {
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_idx,
                    });
                }
                loss_sum += loss;
                correct += usize::from(*ok);
                for (acc, t) in total.tensors_mut().into_iter().zip(g.tensors()) {
                    acc.iter_mut().zip(t).for_each(|(a, b)| *a += b);
                }
            }

            let step = cfg.learning_rate / batch.len() as f64;
            for (p, g) in params.tensors_mut().into_iter().zip(total.tensors()) {
                p.iter_mut().zip(g).for_each(|(p, g)| *p -= step * g);
            }
            if params
                .tensors()
                .iter()
                .any(|t| t.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
        }
        let n = data.len() as f64;
        trace.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
        });
        log::debug!("epoch {epoch}: loss {:.5}", loss_sum / n);
    }
    Ok((params, trace))
}
