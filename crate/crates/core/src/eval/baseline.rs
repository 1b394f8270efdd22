use std::io::Write;
use std::path::Path;

use super::sharpe;
use crate::env::PortfolioLedger;
use crate::error::{Error, Result};
use crate::predictor::SignalPanel;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    /// Wealth after each day, starting from 1.
    pub wealth: Vec<f64>,
    pub returns: Vec<f64>,
    /// Target allocation used on each day.
    pub allocations: Vec<Vec<f64>>,
    pub sharpe: f64,
}

/// Equal weight across stocks whose signal is at least `threshold`.
///
/// The portfolio is rebalanced only when the qualifying set changes; otherwise
/// positions are left to drift. With no qualifying stock the previous
/// portfolio is held. A threshold of 0 therefore buys every stock on the first
/// day and never trades again.
pub fn threshold_baseline(
    signals: &SignalPanel,
    threshold: f64,
    tc: f64,
) -> Result<BaselineResult> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    if !(0.0..=1.0).contains(&tc) {
        return Err(Error::config(format!("tc must lie in [0, 1], got {tc}")));
    }
    let n = signals.n_stocks();
    let mut ledger = PortfolioLedger::new(n);
    let mut current: Option<Vec<bool>> = None;
    let mut wealth = Vec::with_capacity(signals.n_days());
    let mut allocations = Vec::with_capacity(signals.n_days());
    for t in 0..signals.n_days() {
        let qualifying: Vec<bool> = signals
            .signals_at(t)
            .iter()
            .map(|s| *s >= threshold)
            .collect();
        let count = qualifying.iter().filter(|q| **q).count();
        let target = if count > 0 && current.as_ref() != Some(&qualifying) {
            current = Some(qualifying.clone());
            qualifying
                .iter()
                .map(|q| if *q { 1.0 / count as f64 } else { 0.0 })
                .collect()
        } else {
            ledger.holdings.clone()
        };
        ledger.rebalance(&target, &signals.returns_at(t), tc)?;
        wealth.push(ledger.wealth);
        allocations.push(target);
    }
    Ok(BaselineResult {
        sharpe: sharpe(&ledger.returns),
        returns: ledger.returns,
        wealth,
        allocations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub threshold: f64,
    pub sharpe_no_tc: f64,
    pub sharpe_tc: f64,
}

pub fn baseline_table(
    signals: &SignalPanel,
    thresholds: &[f64],
    tc: f64,
) -> Result<Vec<BaselineRow>> {
    thresholds
        .iter()
        .map(|&threshold| {
            Ok(BaselineRow {
                threshold,
                sharpe_no_tc: threshold_baseline(signals, threshold, 0.0)?.sharpe,
                sharpe_tc: threshold_baseline(signals, threshold, tc)?.sharpe,
            })
        })
        .collect()
}

/// Writes `threshold,sharpe_no_tc,sharpe_tc` under a comment naming the Sharpe convention.
pub fn write_baseline_table(rows: &[BaselineRow], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "# sharpe = mean/std(population) of daily returns * sqrt(252), risk-free 0"
    )?;
    writeln!(out, "threshold,sharpe_no_tc,sharpe_tc")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.threshold, r.sharpe_no_tc, r.sharpe_tc)?;
    }
    out.flush()?;
    Ok(())
}
