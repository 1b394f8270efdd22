//! Sharpe ratios, generalization ratios, smoothed evaluation curves, the
//! threshold baseline and hyperparameter search.
//!
//! Sharpe convention used everywhere: daily mean over population standard
//! deviation, annualized by `sqrt(252)`, zero risk-free rate. A series with
//! standard deviation below `1e-12` has Sharpe 0.

mod baseline;
mod search;

pub use baseline::{
    baseline_table, threshold_baseline, write_baseline_table, BaselineResult, BaselineRow,
};
pub use search::{
    hyper_search, realization_seed, write_trial_table, SearchResult, SearchSpace, SearchStrategy,
    Trial, TrialOutcome, TrialParams, TrialRow,
};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRADING_DAYS: f64 = 252.0;
pub const SMOOTHING_WINDOW: usize = 10;

pub fn sharpe(returns: &[f64]) -> f64 {
    if returns.is_empty() {
        return 0.0;
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        0.0
    } else {
        mean / sd * TRADING_DAYS.sqrt()
    }
}

/// Test Sharpe over train Sharpe; `None` when the train Sharpe is zero.
pub fn generalization_ratio(test: f64, train: f64) -> Option<f64> {
    if train == 0.0 || !train.is_finite() || !test.is_finite() {
        None
    } else {
        Some(test / train)
    }
}

/// One evaluation period of agent training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub timestep: u64,
    pub train_sharpe: f64,
    pub val_sharpe: f64,
    pub test_sharpe: f64,
    pub gen_ratio: Option<f64>,
}

/// Append-only log of evaluation periods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSeries {
    pub records: Vec<EvalRecord>,
}

/// Trailing mean over the last `window` values (fewer at the start).
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|p| {
            let lo = (p + 1).saturating_sub(window);
            values[lo..=p].iter().sum::<f64>() / (p + 1 - lo) as f64
        })
        .collect()
}

impl EvalSeries {
    pub fn push(&mut self, record: EvalRecord) {
        self.records.push(record);
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn train(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_sharpe).collect()
    }

    pub fn validation(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_sharpe).collect()
    }

    pub fn test(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.test_sharpe).collect()
    }

    pub fn smoothed_train(&self) -> Vec<f64> {
        trailing_mean(&self.train(), SMOOTHING_WINDOW)
    }

    pub fn smoothed_validation(&self) -> Vec<f64> {
        trailing_mean(&self.validation(), SMOOTHING_WINDOW)
    }

    pub fn smoothed_test(&self) -> Vec<f64> {
        trailing_mean(&self.test(), SMOOTHING_WINDOW)
    }

    /// Search objective: the best smoothed validation Sharpe.
    pub fn best_smoothed_validation(&self) -> Option<f64> {
        self.smoothed_validation().into_iter().reduce(f64::max)
    }

    /// Smoothed test Sharpe at the period of the best smoothed validation Sharpe.
    pub fn test_at_best_validation(&self) -> Option<f64> {
        let val = self.smoothed_validation();
        let test = self.smoothed_test();
        let best =
            val.iter()
                .enumerate()
                .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
                    Some((_, b)) if b >= *v => acc,
                    _ => Some((i, *v)),
                })?;
        Some(test[best.0])
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }

    /// Writes `timestep,train_sharpe,val_sharpe,test_sharpe,gen_ratio`; an undefined ratio is empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "timestep,train_sharpe,val_sharpe,test_sharpe,gen_ratio"
        )?;
        for r in &self.records {
            let g = r.gen_ratio.map(|g| g.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{}",
                r.timestep, r.train_sharpe, r.val_sharpe, r.test_sharpe, g
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let mut records = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |m: &str| Error::Parse {
                row: i + 2,
                message: m.to_string(),
            };
            if rec.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let f = |k: usize| rec[k].parse::<f64>().map_err(|_| bad("bad number"));
            records.push(EvalRecord {
                timestep: rec[0].parse().map_err(|_| bad("bad timestep"))?,
                train_sharpe: f(1)?,
                val_sharpe: f(2)?,
                test_sharpe: f(3)?,
                gen_ratio: if rec[4].is_empty() { None } else { Some(f(4)?) },
            });
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }
}
