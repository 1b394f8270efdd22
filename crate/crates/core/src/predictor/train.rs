use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{
    forward_batch, mse_loss_and_grad, update_running_stats, GruDims, GruNetParams, Mode,
};
use crate::error::{Error, Result};
use crate::features::FeatureWindow;
use crate::optim::Adam;
use crate::seeding::derive_seed;

/// Supervised training recipe for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub linear_hidden: usize,
    pub gru_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    /// Trailing (latest-dated) fraction held out to monitor early stopping.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            linear_hidden: 256,
            gru_hidden: 512,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            patience: 5,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.linear_hidden == 0
            || self.gru_hidden == 0
            || self.batch_size == 0
            || self.epochs == 0
        {
            return Err(Error::config(
                "predictor sizes, batch size and epochs must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("predictor learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: GruNetParams,
    pub history: Vec<EpochStats>,
    /// Loss of the initial parameters on the training subset.
    pub initial_loss: f64,
}

fn stack(windows: &[&FeatureWindow]) -> (Vec<f64>, Vec<f64>) {
    let mut inputs = Vec::with_capacity(windows.len() * windows[0].matrix.len());
    let mut labels = Vec::with_capacity(windows.len());
    for w in windows {
        inputs.extend_from_slice(&w.matrix);
        labels.push(w.label);
    }
    (inputs, labels)
}

/// Eval-mode predictions in chunks.
pub fn predict(params: &GruNetParams, windows: &[&FeatureWindow]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(512) {
        let (inputs, _) = stack(chunk);
        out.extend(forward_batch(params, &inputs, Mode::Eval)?.output);
    }
    Ok(out)
}

fn eval_mse(params: &GruNetParams, windows: &[&FeatureWindow]) -> Result<f64> {
    let preds = predict(params, windows)?;
    Ok(preds
        .iter()
        .zip(windows)
        .map(|(p, w)| (p - w.label).powi(2))
        .sum::<f64>()
        / windows.len() as f64)
}

/// Minimizes MSE on normalized next-day closes with Adam. Deterministic given `seed`.
pub fn train_model(
    dataset: &[FeatureWindow],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    config.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::config("cannot train a predictor on an empty dataset"))?;
    if dataset
        .iter()
        .any(|w| !w.normalized || w.days != first.days || w.width != first.width)
    {
        return Err(Error::shape(
            "training windows must be normalized and share D x H",
        ));
    }
    let dims = GruDims {
        days: first.days,
        features: first.width,
        linear_hidden: config.linear_hidden,
        gru_hidden: config.gru_hidden,
    };
    let mut params = GruNetParams::init(dims, derive_seed(seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));

    let mut ordered: Vec<&FeatureWindow> = dataset.iter().collect();
    ordered.sort_by_key(|w| (w.as_of, w.stock));
    let n_val = (ordered.len() as f64 * config.val_fraction).floor() as usize;
    let (train, val) = if n_val > 0 && n_val < ordered.len() {
        ordered.split_at(ordered.len() - n_val)
    } else {
        (&ordered[..], &[][..])
    };

    let initial_loss = eval_mse(&params, train)?;
    let mut adam = Adam::new(params.values.len(), config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut trace = Vec::new();
    let mut best: Option<(f64, GruNetParams)> = None;
    let mut stale = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&FeatureWindow> = chunk.iter().map(|&i| train[i]).collect();
            let (inputs, labels) = stack(&batch);
            let (loss, grad, cache) = mse_loss_and_grad(&params, &inputs, &labels)?;
            trace.push(loss);
            if trace.len() > 32 {
                trace.remove(0);
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    trace,
                });
            }
            adam.step(&mut params.values, &grad);
            update_running_stats(&mut params, &cache);
            epoch_loss += loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(eval_mse(&params, val)?)
        };
        history.push(EpochStats {
            train_loss,
            val_loss,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                trace,
            });
        }
        if config.patience == 0 {
            continue;
        }
        match &best {
            Some((b, _)) if monitored >= *b => {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((monitored, params.clone()));
                stale = 0;
            }
        }
    }
    if let Some((_, best_params)) = best {
        params = best_params;
    }
    Ok(TrainedModel {
        params,
        history,
        initial_loss,
    })
}
