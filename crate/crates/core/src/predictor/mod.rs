//! Next-day price prediction: the GRU network, its training loop, discretized
//! ensemble signals, and the signal panels handed to the trading environment.

pub mod net;
mod signal;
mod train;

pub use net::{forward, forward_batch, Group, GruDims, GruNetParams, Mode};
pub use signal::SignalPanel;
pub use train::{predict, train_model, EpochStats, TrainConfig, TrainedModel};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Kind};
use crate::error::{Error, Result};
use crate::features::{
    fit_normalizers, FeatureWindow, NormalizationScope, Normalizer, NormalizerSet,
};
use crate::seeding::derive_seed;

/// 1 when the de-normalized prediction is strictly above the previous close.
pub fn discretize(prediction: f64, prev_close: f64, normalizer: &Normalizer) -> u8 {
    u8::from(normalizer.invert_label(prediction) > prev_close)
}

/// Mean of member up/down bits; always a multiple of `1 / bits.len()`.
pub fn mean_vote(bits: &[u8]) -> f64 {
    let ups: usize = bits.iter().map(|b| *b as usize).sum();
    ups as f64 / bits.len() as f64
}

/// One model pooled over all stocks, or one per stock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    #[default]
    Pooled,
    PerStock,
}

/// Ensemble size, normalization and training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub members: usize,
    pub scope: NormalizationScope,
    pub sharing: Sharing,
    pub train: TrainConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            members: 8,
            scope: NormalizationScope::PerStock,
            sharing: Sharing::Pooled,
            train: TrainConfig::default(),
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::config("ensemble needs at least one member"));
        }
        self.train.validate()
    }
}

/// M identically configured networks differing only in initialization seed.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub members: Vec<GruNetParams>,
    pub seeds: Vec<u64>,
    pub normalizers: NormalizerSet,
}

impl EnsembleModel {
    /// Trains `members` networks on raw `windows`, normalized with `normalizers`.
    pub fn train(
        windows: &[FeatureWindow],
        normalizers: NormalizerSet,
        members: usize,
        config: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        if members == 0 {
            return Err(Error::config("ensemble needs at least one member"));
        }
        let dataset = normalizers.apply_all(windows)?;
        let seeds: Vec<u64> = (0..members as u64).map(|i| derive_seed(seed, i)).collect();
        let members = seeds
            .par_iter()
            .map(|&s| train_model(&dataset, config, s).map(|m| m.params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            members,
            seeds,
            normalizers,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Per-member up/down bits for each window (raw or already normalized).
    pub fn member_bits(&self, windows: &[FeatureWindow]) -> Result<Vec<Vec<u8>>> {
        let normalized: Vec<FeatureWindow> = windows
            .iter()
            .map(|w| {
                if w.normalized {
                    Ok(w.clone())
                } else {
                    self.normalizers.apply(w)
                }
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&FeatureWindow> = normalized.iter().collect();
        let mut bits = vec![Vec::with_capacity(self.size()); windows.len()];
        for member in &self.members {
            let preds = predict(member, &refs)?;
            for ((b, p), w) in bits.iter_mut().zip(preds).zip(windows) {
                b.push(discretize(
                    p,
                    w.prev_close,
                    self.normalizers.get(&w.ticker)?,
                ));
            }
        }
        Ok(bits)
    }

    /// Ensemble signal in `[0, 1]` per window.
    pub fn signals(&self, windows: &[FeatureWindow]) -> Result<Vec<f64>> {
        Ok(self
            .member_bits(windows)?
            .iter()
            .map(|b| mean_vote(b))
            .collect())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let dims = self
            .members
            .first()
            .map(|m| m.dims)
            .ok_or_else(|| Error::Checkpoint("empty ensemble".into()))?;
        let meta = serde_json::json!({
            "dims": dims,
            "seeds": self.seeds,
            "normalizers": self.normalizers,
            "groups": net::Group::ALL.iter().map(|g| g.name()).collect::<Vec<_>>(),
        });
        let mut ck = Checkpoint::new(Kind::Predictor, meta);
        for (i, m) in self.members.iter().enumerate() {
            for g in net::Group::ALL {
                ck.push(format!("m{i}/{}", g.name()), m.group(g));
            }
            ck.push(format!("m{i}/running"), &m.running);
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != Kind::Predictor {
            return Err(Error::Checkpoint("not a predictor checkpoint".into()));
        }
        let dims: GruDims = serde_json::from_value(ck.meta["dims"].clone())?;
        let seeds: Vec<u64> = serde_json::from_value(ck.meta["seeds"].clone())?;
        let normalizers: NormalizerSet = serde_json::from_value(ck.meta["normalizers"].clone())?;
        let mut members = Vec::with_capacity(seeds.len());
        for i in 0..seeds.len() {
            let mut values = Vec::with_capacity(GruNetParams::param_count(&dims));
            for g in net::Group::ALL {
                let arr = ck.array(&format!("m{i}/{}", g.name()))?;
                if arr.len() != g.len(&dims) {
                    return Err(Error::Checkpoint(format!(
                        "group {} has wrong length",
                        g.name()
                    )));
                }
                values.extend_from_slice(arr);
            }
            let running = ck.array(&format!("m{i}/running"))?.to_vec();
            if running.len() != GruNetParams::running_len(&dims) {
                return Err(Error::Checkpoint(
                    "running statistics have wrong length".into(),
                ));
            }
            members.push(GruNetParams {
                dims,
                values,
                running,
            });
        }
        Ok(Self {
            members,
            seeds,
            normalizers,
        })
    }
}

/// A trained predictor: one pooled ensemble or one ensemble per stock.
#[derive(Debug, Clone)]
pub enum PredictorModel {
    Pooled(EnsembleModel),
    PerStock(BTreeMap<String, EnsembleModel>),
}

impl PredictorModel {
    /// Fits normalizers on `windows` (raw, training data only) and trains the ensemble(s).
    pub fn train(windows: &[FeatureWindow], config: &PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if windows.is_empty() {
            return Err(Error::config("predictor training segment has no windows"));
        }
        match config.sharing {
            Sharing::Pooled => {
                let norm = fit_normalizers(windows, config.scope)?;
                Ok(Self::Pooled(EnsembleModel::train(
                    windows,
                    norm,
                    config.members,
                    &config.train,
                    seed,
                )?))
            }
            Sharing::PerStock => {
                let mut by_ticker: BTreeMap<&str, Vec<FeatureWindow>> = BTreeMap::new();
                for w in windows {
                    by_ticker
                        .entry(w.ticker.as_str())
                        .or_default()
                        .push(w.clone());
                }
                let mut models = BTreeMap::new();
                for (ticker, ws) in by_ticker {
                    let norm = fit_normalizers(&ws, NormalizationScope::Global)?;
                    let s = derive_seed(seed, crate::seeding::label_stream(ticker));
                    models.insert(
                        ticker.to_string(),
                        EnsembleModel::train(&ws, norm, config.members, &config.train, s)?,
                    );
                }
                Ok(Self::PerStock(models))
            }
        }
    }

    pub fn members(&self) -> usize {
        match self {
            Self::Pooled(m) => m.size(),
            Self::PerStock(map) => map.values().next().map_or(0, EnsembleModel::size),
        }
    }

    /// Ensemble signal per window, in input order.
    pub fn signals(&self, windows: &[FeatureWindow]) -> Result<Vec<f64>> {
        match self {
            Self::Pooled(m) => m.signals(windows),
            Self::PerStock(map) => windows
                .iter()
                .map(|w| {
                    let m = map.get(&w.ticker).ok_or_else(|| {
                        Error::config(format!("no predictor trained for '{}'", w.ticker))
                    })?;
                    Ok(m.signals(std::slice::from_ref(w))?[0])
                })
                .collect(),
        }
    }

    /// Inverse of [`PredictorModel::checkpoints`].
    pub fn from_checkpoints(parts: &[(String, Checkpoint)]) -> Result<Self> {
        match parts {
            [(suffix, ck)] if suffix.is_empty() => {
                Ok(Self::Pooled(EnsembleModel::from_checkpoint(ck)?))
            }
            _ if !parts.is_empty() => parts
                .iter()
                .map(|(suffix, ck)| {
                    let ticker = suffix.strip_prefix('-').ok_or_else(|| {
                        Error::Checkpoint(format!("bad per-stock suffix '{suffix}'"))
                    })?;
                    Ok((ticker.to_string(), EnsembleModel::from_checkpoint(ck)?))
                })
                .collect::<Result<BTreeMap<_, _>>>()
                .map(Self::PerStock),
            _ => Err(Error::Checkpoint("no predictor checkpoints".into())),
        }
    }

    /// Checkpoints keyed by a file-name suffix (empty for pooled models).
    pub fn checkpoints(&self) -> Result<Vec<(String, Checkpoint)>> {
        match self {
            Self::Pooled(m) => Ok(vec![(String::new(), m.to_checkpoint()?)]),
            Self::PerStock(map) => map
                .iter()
                .map(|(t, m)| Ok((format!("-{t}"), m.to_checkpoint()?)))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Normalizer;

    fn normalizer() -> Normalizer {
        Normalizer {
            mean: vec![100.0, 0.0],
            std: vec![4.0, 1.0],
            zero_variance: vec![false, false],
            close_index: 0,
        }
    }

    #[test]
    fn discretize_is_strict() {
        let n = normalizer();
        let at = n.normalize_label(101.0);
        assert_eq!(discretize(at, 101.0, &n), 0);
        assert_eq!(discretize(n.normalize_label(101.0 + 1e-9), 101.0, &n), 1);
        assert_eq!(discretize(n.normalize_label(99.0), 101.0, &n), 0);
    }

    #[test]
    fn votes() {
        assert_eq!(mean_vote(&[1, 0, 1]), 2.0 / 3.0);
        assert_eq!(mean_vote(&[1, 1, 1, 1]), 1.0);
        assert_eq!(mean_vote(&[0]), 0.0);
        assert_eq!(mean_vote(&[1]), 1.0);
        assert_eq!(mean_vote(&[0, 1, 1]), mean_vote(&[1, 1, 0]));
    }
}
