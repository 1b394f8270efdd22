//! Per-day feature rows, D-day history windows and train-only normalization.
//!
//! Column order of a feature row (H = 25 with the default spec):
//!
//! | columns | content |
//! |---|---|
//! | 0..5 | close, open, high, low, volume |
//! | 5..16 | moving averages over 5, 10, 20, 30, 40, 50, 60, 100, 120, 180, 200 days |
//! | 16..21 | realized volatility over 3, 5, 10, 20, 50 days |
//! | 21..25 | RSI over 3, 6, 14, 30 days |

pub mod indicators;
mod normalize;

pub use indicators::{log_returns, moving_average, realized_volatility, rsi};
pub use normalize::{fit_normalizers, NormalizationScope, Normalizer, NormalizerSet};

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::AlignedPanel;
use crate::error::{Error, Result};

pub const CLOSE_INDEX: usize = 0;
const RAW_FIELDS: [&str; 5] = ["close", "open", "high", "low", "volume"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub ma_windows: Vec<usize>,
    pub vol_windows: Vec<usize>,
    pub rsi_windows: Vec<usize>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            ma_windows: vec![5, 10, 20, 30, 40, 50, 60, 100, 120, 180, 200],
            vol_windows: vec![3, 5, 10, 20, 50],
            rsi_windows: vec![3, 6, 14, 30],
        }
    }
}

impl FeatureSpec {
    pub fn width(&self) -> usize {
        RAW_FIELDS.len() + self.ma_windows.len() + self.vol_windows.len() + self.rsi_windows.len()
    }

    /// Days of history required before a row is emitted: the longest window.
    pub fn warmup(&self) -> usize {
        self.ma_windows
            .iter()
            .chain(&self.vol_windows)
            .chain(&self.rsi_windows)
            .copied()
            .max()
            .unwrap_or(0)
    }

    pub fn names(&self) -> Vec<String> {
        RAW_FIELDS
            .iter()
            .map(|s| s.to_string())
            .chain(self.ma_windows.iter().map(|w| format!("ma_{w}")))
            .chain(self.vol_windows.iter().map(|w| format!("rv_{w}")))
            .chain(self.rsi_windows.iter().map(|w| format!("rsi_{w}")))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self
            .ma_windows
            .iter()
            .chain(&self.vol_windows)
            .chain(&self.rsi_windows)
            .any(|&w| w == 0)
        {
            return Err(Error::config("feature windows must be positive"));
        }
        Ok(())
    }
}

/// A `D x H` history matrix for one stock as of one date, plus its next-day label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub ticker: String,
    pub stock: usize,
    pub as_of: NaiveDate,
    pub label_date: NaiveDate,
    pub days: usize,
    pub width: usize,
    /// Row-major `days x width`; the last row is the as-of date.
    pub matrix: Vec<f64>,
    /// Next-day close (normalized once `normalized` is set).
    pub label: f64,
    /// Raw close on the as-of date.
    pub prev_close: f64,
    /// Raw simple return from the as-of close to the label close.
    pub next_return: f64,
    pub normalized: bool,
}

impl FeatureWindow {
    pub fn row(&self, day: usize) -> &[f64] {
        &self.matrix[day * self.width..(day + 1) * self.width]
    }
}

#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub windows: Vec<FeatureWindow>,
    /// Labelled (stock, date) positions skipped for lack of look-back.
    pub skipped: usize,
}

/// Feature rows for every day of one stock; `None` until every look-back is met.
pub fn feature_rows(
    panel: &AlignedPanel,
    stock: usize,
    spec: &FeatureSpec,
) -> Result<Vec<Option<Vec<f64>>>> {
    spec.validate()?;
    let bars = &panel.bars[stock];
    let closes = panel.closes(stock);
    let mut columns: Vec<Vec<Option<f64>>> = vec![
        closes.iter().map(|c| Some(*c)).collect(),
        bars.iter().map(|b| Some(b.open)).collect(),
        bars.iter().map(|b| Some(b.high)).collect(),
        bars.iter().map(|b| Some(b.low)).collect(),
        bars.iter().map(|b| Some(b.volume as f64)).collect(),
    ];
    for &w in &spec.ma_windows {
        columns.push(moving_average(&closes, w)?);
    }
    for &w in &spec.vol_windows {
        columns.push(realized_volatility(&closes, w)?);
    }
    for &w in &spec.rsi_windows {
        columns.push(rsi(&closes, w)?);
    }
    let warmup = spec.warmup();
    Ok((0..closes.len())
        .map(|t| {
            if t < warmup {
                return None;
            }
            columns
                .iter()
                .map(|col| col[t])
                .collect::<Option<Vec<f64>>>()
        })
        .collect())
}

/// One unnormalized window per (stock, as-of date) with full look-back and a next-day label.
///
/// Windows are ordered by as-of date, then stock.
pub fn build_windows(panel: &AlignedPanel, days: usize, spec: &FeatureSpec) -> Result<WindowSet> {
    if days == 0 {
        return Err(Error::config("history length D must be positive"));
    }
    let width = spec.width();
    let t_len = panel.n_days();
    let mut per_stock = Vec::with_capacity(panel.n_stocks());
    for stock in 0..panel.n_stocks() {
        per_stock.push(feature_rows(panel, stock, spec)?);
    }

    let mut set = WindowSet::default();
    for t in 0..t_len.saturating_sub(1) {
        for (stock, rows) in per_stock.iter().enumerate() {
            if t + 1 < days || rows[t + 1 - days..=t].iter().any(Option::is_none) {
                set.skipped += 1;
                continue;
            }
            let mut matrix = Vec::with_capacity(days * width);
            for row in &rows[t + 1 - days..=t] {
                matrix.extend_from_slice(row.as_ref().unwrap());
            }
            let bars = &panel.bars[stock];
            set.windows.push(FeatureWindow {
                ticker: panel.tickers[stock].clone(),
                stock,
                as_of: panel.calendar[t],
                label_date: panel.calendar[t + 1],
                days,
                width,
                matrix,
                label: bars[t + 1].close,
                prev_close: bars[t].close,
                next_return: bars[t + 1].close / bars[t].close - 1.0,
                normalized: false,
            });
        }
    }
    Ok(set)
}

/// Writes `<dir>/<TICKER>.csv` with one row per day that has a full feature row:
/// `date,<feature names>`.
pub fn write_feature_rows(
    panel: &AlignedPanel,
    spec: &FeatureSpec,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for stock in 0..panel.n_stocks() {
        let path = dir.join(format!("{}.csv", panel.tickers[stock]));
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(out, "date,{}", spec.names().join(","))?;
        for (t, row) in feature_rows(panel, stock, spec)?.iter().enumerate() {
            if let Some(row) = row {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(out, "{},{}", panel.calendar[t], cells.join(","))?;
            }
        }
        out.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// CSV dump, one line per window row: `ticker,as_of,row,<feature names>,label`.
pub fn dump_windows(windows: &[FeatureWindow], spec: &FeatureSpec, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "ticker,as_of,row,{},label", spec.names().join(","))?;
    for w in windows {
        for day in 0..w.days {
            let values: Vec<String> = w.row(day).iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{}",
                w.ticker,
                w.as_of,
                day,
                values.join(","),
                w.label
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};

    fn panel(days: usize) -> AlignedPanel {
        gen_synthetic(
            &SynthConfig {
                n_stocks: 2,
                n_days: days,
                ..Default::default()
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn default_spec_has_25_columns() {
        let spec = FeatureSpec::default();
        assert_eq!(spec.width(), 25);
        assert_eq!(spec.names().len(), 25);
        assert_eq!(spec.warmup(), 200);
        assert_eq!(spec.names()[CLOSE_INDEX], "close");
    }

    #[test]
    fn exact_lookback_gives_one_window_per_stock() {
        let d = 30;
        let spec = FeatureSpec::default();
        let set = build_windows(&panel(200 + d + 1), d, &spec).unwrap();
        assert_eq!(set.windows.len(), 2);
        for w in &set.windows {
            assert_eq!(w.days, 30);
            assert_eq!(w.matrix.len(), 30 * 25);
            assert!(w.matrix.iter().all(|v| v.is_finite()));
        }
        let none = build_windows(&panel(200 + d), d, &spec).unwrap();
        assert!(none.windows.is_empty());
        assert_eq!(none.skipped, 2 * (200 + d - 1));
    }

    #[test]
    fn windows_never_look_ahead() {
        let p = panel(260);
        let set = build_windows(&p, 5, &FeatureSpec::default()).unwrap();
        for w in &set.windows {
            assert!(w.label_date > w.as_of);
            let t = p.calendar.iter().position(|d| *d == w.as_of).unwrap();
            assert_eq!(w.row(w.days - 1)[CLOSE_INDEX], p.bars[w.stock][t].close);
            assert_eq!(w.row(0)[CLOSE_INDEX], p.bars[w.stock][t + 1 - w.days].close);
            assert_eq!(w.label, p.bars[w.stock][t + 1].close);
        }
    }

    #[test]
    fn dump_has_documented_header() {
        let p = panel(215);
        let spec = FeatureSpec::default();
        let set = build_windows(&p, 3, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        dump_windows(&set.windows, &spec, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("ticker,as_of,row,close,open,high,low,volume,ma_5,"));
        assert!(header.ends_with("rsi_30,label"));
        assert_eq!(text.lines().count(), 1 + set.windows.len() * 3);
    }
}
