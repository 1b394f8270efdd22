//! Market data: daily bars, per-ticker series, calendar-aligned panels and date splits.

mod csv_io;
mod synth;

pub use csv_io::{load_dir, load_ohlcv, parse_ohlcv, series_to_csv, write_ohlcv};
pub use synth::{business_days, gen_synthetic, PerStock, RegimeShift, SynthConfig};

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trading day of OHLCV data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: u64,
}

impl DailyBar {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: &str| Error::Validation {
            date: self.date,
            message: message.to_string(),
        };
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite()) {
            return Err(fail("non-finite price"));
        }
        if prices.iter().any(|&p| p <= 0.0) {
            return Err(fail("prices must be strictly positive"));
        }
        if self.high < self.low {
            return Err(fail("high < low"));
        }
        if self.low > self.open.min(self.close) {
            return Err(fail("low above min(open, close)"));
        }
        if self.high < self.open.max(self.close) {
            return Err(fail("high below max(open, close)"));
        }
        Ok(())
    }
}

/// Date-ordered bars for one ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct StockSeries {
    pub ticker: String,
    pub bars: Vec<DailyBar>,
}

impl StockSeries {
    /// Sorts by date and checks every bar invariant plus date uniqueness.
    pub fn new(ticker: impl Into<String>, mut bars: Vec<DailyBar>) -> Result<Self> {
        bars.sort_by_key(|b| b.date);
        for bar in &bars {
            bar.validate()?;
        }
        if let Some(dup) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(Error::Validation {
                date: dup[0].date,
                message: "duplicate date".to_string(),
            });
        }
        Ok(Self {
            ticker: ticker.into(),
            bars,
        })
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }
}

/// How multi-stock calendars are reconciled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignPolicy {
    /// Keep only dates every stock traded on.
    #[default]
    Intersection,
    /// Union of dates; a missing bar repeats the previous bar with zero volume.
    /// Union dates before a stock's first bar are dropped.
    ForwardFill,
}

/// N stocks over a shared calendar of T dates.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    pub tickers: Vec<String>,
    pub calendar: Vec<NaiveDate>,
    /// `bars[n][t]` is stock `n` on `calendar[t]`.
    pub bars: Vec<Vec<DailyBar>>,
}

impl AlignedPanel {
    pub fn new(
        tickers: Vec<String>,
        calendar: Vec<NaiveDate>,
        bars: Vec<Vec<DailyBar>>,
    ) -> Result<Self> {
        if tickers.is_empty() || calendar.is_empty() {
            return Err(Error::Alignment("panel needs N >= 1 and T >= 1".into()));
        }
        if bars.len() != tickers.len() || bars.iter().any(|row| row.len() != calendar.len()) {
            return Err(Error::shape("panel bars must be N x T"));
        }
        if calendar.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Alignment(
                "calendar must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            tickers,
            calendar,
            bars,
        })
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn closes(&self, stock: usize) -> Vec<f64> {
        self.bars[stock].iter().map(|b| b.close).collect()
    }

    /// Panel restricted to calendar indices `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> AlignedPanel {
        AlignedPanel {
            tickers: self.tickers.clone(),
            calendar: self.calendar[range.clone()].to_vec(),
            bars: self
                .bars
                .iter()
                .map(|row| row[range.clone()].to_vec())
                .collect(),
        }
    }

    /// Index range of calendar dates inside `[start, end]`.
    pub fn date_range(&self, start: NaiveDate, end: NaiveDate) -> std::ops::Range<usize> {
        let lo = self.calendar.partition_point(|d| *d < start);
        let hi = self.calendar.partition_point(|d| *d <= end);
        lo..hi.max(lo)
    }

    /// One series per ticker, in panel order.
    pub fn to_series(&self) -> Vec<StockSeries> {
        self.tickers
            .iter()
            .zip(&self.bars)
            .map(|(t, bars)| StockSeries {
                ticker: t.clone(),
                bars: bars.clone(),
            })
            .collect()
    }
}

pub fn align_panel(series: &[StockSeries], policy: AlignPolicy) -> Result<AlignedPanel> {
    if series.is_empty() {
        return Err(Error::Alignment("no series to align".into()));
    }
    if let Some(empty) = series.iter().find(|s| s.is_empty()) {
        return Err(Error::Alignment(format!(
            "series '{}' has no bars",
            empty.ticker
        )));
    }
    let tickers: Vec<String> = series.iter().map(|s| s.ticker.clone()).collect();

    match policy {
        AlignPolicy::Intersection => {
            let mut common: BTreeSet<NaiveDate> = series[0].bars.iter().map(|b| b.date).collect();
            for s in &series[1..] {
                let dates: BTreeSet<NaiveDate> = s.bars.iter().map(|b| b.date).collect();
                common = common.intersection(&dates).copied().collect();
            }
            if common.is_empty() {
                return Err(Error::Alignment("date intersection is empty".into()));
            }
            let bars = series
                .iter()
                .map(|s| {
                    s.bars
                        .iter()
                        .filter(|b| common.contains(&b.date))
                        .copied()
                        .collect()
                })
                .collect();
            AlignedPanel::new(tickers, common.into_iter().collect(), bars)
        }
        AlignPolicy::ForwardFill => {
            let first_common = series.iter().map(|s| s.bars[0].date).max().unwrap();
            let calendar: Vec<NaiveDate> = series
                .iter()
                .flat_map(|s| s.bars.iter().map(|b| b.date))
                .filter(|d| *d >= first_common)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let bars = series
                .iter()
                .map(|s| {
                    let by_date: BTreeMap<NaiveDate, DailyBar> =
                        s.bars.iter().map(|b| (b.date, *b)).collect();
                    calendar
                        .iter()
                        .map(|&d| match by_date.get(&d) {
                            Some(bar) => *bar,
                            None => {
                                let (_, prev) = by_date.range(..d).next_back().unwrap();
                                DailyBar {
                                    date: d,
                                    volume: 0,
                                    ..*prev
                                }
                            }
                        })
                        .collect()
                })
                .collect();
            AlignedPanel::new(tickers, calendar, bars)
        }
    }
}

/// A named inclusive date range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateSplit {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateSplit {
    pub fn new(name: impl Into<String>, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        let name = name.into();
        if start > end {
            return Err(Error::config(format!(
                "split '{name}': start {start} after end {end}"
            )));
        }
        Ok(Self { name, start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

/// Cuts the panel into one sub-panel per split. Overlapping splits are allowed.
pub fn split_panel(panel: &AlignedPanel, splits: &[DateSplit]) -> Result<Vec<AlignedPanel>> {
    splits
        .iter()
        .map(|split| {
            if split.start > split.end {
                return Err(Error::config(format!(
                    "split '{}' has start > end",
                    split.name
                )));
            }
            let range = panel.date_range(split.start, split.end);
            if range.is_empty() {
                return Err(Error::EmptySplit(split.name.clone()));
            }
            Ok(panel.slice(range))
        })
        .collect()
}

/// The train/validation/test date ranges of an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: DateSplit,
    pub validation: DateSplit,
    pub test: DateSplit,
}

impl SplitSet {
    fn from_ymd(ranges: [(&str, (i32, u32, u32), (i32, u32, u32)); 3]) -> Self {
        let mk = |(name, s, e): (&str, (i32, u32, u32), (i32, u32, u32))| DateSplit {
            name: name.to_string(),
            start: NaiveDate::from_ymd_opt(s.0, s.1, s.2).unwrap(),
            end: NaiveDate::from_ymd_opt(e.0, e.1, e.2).unwrap(),
        };
        let [a, b, c] = ranges;
        Self {
            train: mk(a),
            validation: mk(b),
            test: mk(c),
        }
    }

    /// Non-overlapping default: training ends the day before validation starts.
    pub fn leakage_free() -> Self {
        Self::from_ymd([
            ("train", (2000, 1, 1), (2017, 12, 31)),
            ("validation", (2018, 1, 1), (2019, 12, 31)),
            ("test", (2020, 1, 1), (2021, 7, 20)),
        ])
    }

    /// The literal published ranges; training and validation overlap during 2018.
    pub fn published() -> Self {
        Self::from_ymd([
            ("train", (2000, 1, 1), (2018, 12, 31)),
            ("validation", (2018, 1, 1), (2019, 12, 31)),
            ("test", (2020, 1, 1), (2021, 7, 20)),
        ])
    }

    pub fn as_vec(&self) -> Vec<DateSplit> {
        vec![
            self.train.clone(),
            self.validation.clone(),
            self.test.clone(),
        ]
    }

    pub fn overlaps(&self) -> bool {
        let s = self.as_vec();
        (0..3).any(|i| (i + 1..3).any(|j| s[i].start <= s[j].end && s[j].start <= s[i].end))
    }
}
