use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeatureWindow, CLOSE_INDEX};
use crate::error::{Error, Result};

/// Per-feature z-scoring fitted on training windows.
///
/// Labels share the close column's parameters. Zero-variance columns keep
/// `std = 1` and are flagged in `zero_variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub zero_variance: Vec<bool>,
    pub close_index: usize,
}

impl Normalizer {
    /// Population statistics over every row of every window.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a FeatureWindow>) -> Result<Self> {
        let windows: Vec<&FeatureWindow> = windows.into_iter().collect();
        let first = windows
            .first()
            .ok_or_else(|| Error::config("cannot fit a normalizer on zero windows"))?;
        let width = first.width;
        let mut count = 0usize;
        let mut mean = vec![0.0; width];
        for w in &windows {
            if w.width != width || w.normalized {
                return Err(Error::shape(
                    "normalizer fit needs raw windows of equal width",
                ));
            }
            for day in 0..w.days {
                for (m, v) in mean.iter_mut().zip(w.row(day)) {
                    *m += v;
                }
                count += 1;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; width];
        for w in &windows {
            for day in 0..w.days {
                for ((s, v), m) in var.iter_mut().zip(w.row(day)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let mut std = Vec::with_capacity(width);
        let mut zero_variance = Vec::with_capacity(width);
        for (j, s) in var.iter().enumerate() {
            let sd = (s / count as f64).sqrt();
            // Relative floor: a column that only differs by rounding is constant.
            let flat = !(sd > 1e-12 * mean[j].abs().max(1e-300));
            if flat {
                log::warn!("feature column {j} has zero variance; using std = 1");
            }
            zero_variance.push(flat);
            std.push(if flat { 1.0 } else { sd });
        }
        Ok(Self {
            mean,
            std,
            zero_variance,
            close_index: CLOSE_INDEX,
        })
    }

    pub fn apply(&self, window: &FeatureWindow) -> Result<FeatureWindow> {
        if window.width != self.mean.len() {
            return Err(Error::shape(format!(
                "window width {} vs normalizer width {}",
                window.width,
                self.mean.len()
            )));
        }
        if window.normalized {
            return Err(Error::Contract("window is already normalized".into()));
        }
        let mut out = window.clone();
        for (i, v) in out.matrix.iter_mut().enumerate() {
            let j = i % window.width;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        out.label = self.normalize_label(window.label);
        out.normalized = true;
        Ok(out)
    }

    pub fn normalize_label(&self, price: f64) -> f64 {
        (price - self.mean[self.close_index]) / self.std[self.close_index]
    }

    pub fn invert_label(&self, value: f64) -> f64 {
        value * self.std[self.close_index] + self.mean[self.close_index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    /// Each stock's own statistics.
    #[default]
    PerStock,
    /// One set of statistics pooled across stocks.
    Global,
}

/// Normalizers fitted for one training subset, looked up by ticker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NormalizerSet {
    Global(Normalizer),
    PerStock(BTreeMap<String, Normalizer>),
}

impl NormalizerSet {
    pub fn get(&self, ticker: &str) -> Result<&Normalizer> {
        match self {
            NormalizerSet::Global(n) => Ok(n),
            NormalizerSet::PerStock(map) => map
                .get(ticker)
                .ok_or_else(|| Error::config(format!("no normalizer fitted for '{ticker}'"))),
        }
    }

    pub fn apply(&self, window: &FeatureWindow) -> Result<FeatureWindow> {
        self.get(&window.ticker)?.apply(window)
    }

    pub fn apply_all(&self, windows: &[FeatureWindow]) -> Result<Vec<FeatureWindow>> {
        windows.iter().map(|w| self.apply(w)).collect()
    }
}

pub fn fit_normalizers(
    train: &[FeatureWindow],
    scope: NormalizationScope,
) -> Result<NormalizerSet> {
    match scope {
        NormalizationScope::Global => Ok(NormalizerSet::Global(Normalizer::fit(train)?)),
        NormalizationScope::PerStock => {
            let mut groups: BTreeMap<&str, Vec<&FeatureWindow>> = BTreeMap::new();
            for w in train {
                groups.entry(&w.ticker).or_default().push(w);
            }
            if groups.is_empty() {
                return Err(Error::config("cannot fit a normalizer on zero windows"));
            }
            let map = groups
                .into_iter()
                .map(|(t, ws)| Ok((t.to_string(), Normalizer::fit(ws)?)))
                .collect::<Result<_>>()?;
            Ok(NormalizerSet::PerStock(map))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};
    use crate::features::{build_windows, FeatureSpec};

    fn windows() -> Vec<FeatureWindow> {
        let panel = gen_synthetic(
            &SynthConfig {
                n_stocks: 2,
                n_days: 420,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        build_windows(&panel, 8, &FeatureSpec::default())
            .unwrap()
            .windows
    }

    fn column_moments(ws: &[FeatureWindow], j: usize) -> (f64, f64) {
        let vals: Vec<f64> = ws
            .iter()
            .flat_map(|w| (0..w.days).map(move |d| w.row(d)[j]))
            .collect();
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        (m, s)
    }

    #[test]
    fn fitted_training_set_is_standardized() {
        let ws = windows();
        let norm = Normalizer::fit(&ws).unwrap();
        let applied: Vec<_> = ws.iter().map(|w| norm.apply(w).unwrap()).collect();
        for j in 0..25 {
            let (m, s) = column_moments(&applied, j);
            assert!(m.abs() < 1e-9, "column {j} mean {m}");
            assert!((s - 1.0).abs() < 1e-9, "column {j} std {s}");
        }
    }

    #[test]
    fn label_round_trip_and_shared_close_params() {
        let ws = windows();
        let norm = Normalizer::fit(&ws).unwrap();
        for w in &ws {
            let n = norm.apply(w).unwrap();
            assert_eq!(n.label, norm.normalize_label(w.label));
            let back = norm.invert_label(n.label);
            assert!((back - w.label).abs() <= 1e-9 * w.label.abs());
            // Label uses close-column parameters: a label equal to the as-of close maps to the
            // normalized close entry of the last row.
            let last_close = n.row(n.days - 1)[CLOSE_INDEX];
            assert!((norm.normalize_label(w.prev_close) - last_close).abs() < 1e-12);
        }
    }

    #[test]
    fn applying_to_test_windows_does_not_refit() {
        let ws = windows();
        let split = ws.len() / 2;
        let norm = Normalizer::fit(&ws[..split]).unwrap();
        let before = norm.clone();
        let test: Vec<_> = ws[split..].iter().map(|w| norm.apply(w).unwrap()).collect();
        assert_eq!(norm, before);
        let (m, _) = column_moments(&test, CLOSE_INDEX);
        assert!(m.abs() > 1e-6);
    }

    #[test]
    fn zero_variance_column_is_flagged() {
        let mut ws = windows();
        for w in &mut ws {
            for d in 0..w.days {
                w.matrix[d * w.width + 4] = 1000.0;
            }
        }
        let norm = Normalizer::fit(&ws).unwrap();
        assert!(norm.zero_variance[4]);
        assert_eq!(norm.std[4], 1.0);
        assert!(norm.std.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn per_stock_scope_fits_each_ticker() {
        let ws = windows();
        let set = fit_normalizers(&ws, NormalizationScope::PerStock).unwrap();
        let a = set.get("SYN000").unwrap();
        let b = set.get("SYN001").unwrap();
        assert_ne!(a.mean, b.mean);
        assert!(set.get("NOPE").is_err());
        let global = fit_normalizers(&ws, NormalizationScope::Global).unwrap();
        assert!(std::ptr::eq(
            global.get("SYN000").unwrap(),
            global.get("SYN001").unwrap()
        ));
    }
}
