use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::features::FeatureWindow;

const HEADER: &str = "date,ticker,signal,next_return";

/// Ensemble outputs per (stock, day) with the realized next-day simple returns.
///
/// `signals[n][t]` is the signal for stock `n` as of `calendar[t]`; `returns[n][t]`
/// is that stock's close-to-close return from `calendar[t]` to the next day.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPanel {
    pub tickers: Vec<String>,
    pub calendar: Vec<NaiveDate>,
    pub signals: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    /// Ensemble size M; every signal is a multiple of `1 / members`.
    pub members: usize,
}

impl SignalPanel {
    pub fn new(
        tickers: Vec<String>,
        calendar: Vec<NaiveDate>,
        signals: Vec<Vec<f64>>,
        returns: Vec<Vec<f64>>,
        members: usize,
    ) -> Result<Self> {
        let panel = Self {
            tickers,
            calendar,
            signals,
            returns,
            members,
        };
        panel.validate()?;
        Ok(panel)
    }

    /// Builds a panel from windows and their signals; every date must carry every ticker.
    pub fn from_windows(
        tickers: &[String],
        windows: &[FeatureWindow],
        signals: &[f64],
        members: usize,
    ) -> Result<Self> {
        if windows.len() != signals.len() {
            return Err(Error::shape("one signal per window required"));
        }
        let index: BTreeMap<&str, usize> = tickers
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let mut by_date: BTreeMap<NaiveDate, Vec<Option<(f64, f64)>>> = BTreeMap::new();
        for (w, s) in windows.iter().zip(signals) {
            let n = *index
                .get(w.ticker.as_str())
                .ok_or_else(|| Error::Alignment(format!("unknown ticker '{}'", w.ticker)))?;
            let slot = &mut by_date
                .entry(w.as_of)
                .or_insert_with(|| vec![None; tickers.len()])[n];
            if slot.is_some() {
                return Err(Error::Alignment(format!(
                    "duplicate window for {} on {}",
                    w.ticker, w.as_of
                )));
            }
            *slot = Some((*s, w.next_return));
        }
        let n = tickers.len();
        let mut calendar = Vec::with_capacity(by_date.len());
        let mut sig = vec![Vec::with_capacity(by_date.len()); n];
        let mut ret = vec![Vec::with_capacity(by_date.len()); n];
        for (date, row) in by_date {
            calendar.push(date);
            for (i, cell) in row.into_iter().enumerate() {
                let (s, r) = cell.ok_or_else(|| {
                    Error::Alignment(format!("missing signal for {} on {date}", tickers[i]))
                })?;
                sig[i].push(s);
                ret[i].push(r);
            }
        }
        Self::new(tickers.to_vec(), calendar, sig, ret, members)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tickers.len();
        let t = self.calendar.len();
        if n == 0 || self.members == 0 {
            return Err(Error::shape(
                "signal panel needs at least one stock and one member",
            ));
        }
        if self.signals.len() != n || self.returns.len() != n {
            return Err(Error::shape("signal panel rows must match tickers"));
        }
        if self
            .signals
            .iter()
            .chain(&self.returns)
            .any(|row| row.len() != t)
        {
            return Err(Error::shape("signal panel columns must match calendar"));
        }
        if self.calendar.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Alignment(
                "signal calendar must be strictly increasing".into(),
            ));
        }
        let m = self.members as f64;
        for s in self.signals.iter().flatten() {
            let k = s * m;
            if !(0.0..=1.0).contains(s) || (k - k.round()).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "signal {s} is not a multiple of 1/{}",
                    self.members
                )));
            }
        }
        if self
            .returns
            .iter()
            .flatten()
            .any(|r| !r.is_finite() || *r <= -1.0)
        {
            return Err(Error::Domain(
                "realized returns must be finite and above -100%".into(),
            ));
        }
        Ok(())
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn signals_at(&self, t: usize) -> Vec<f64> {
        self.signals.iter().map(|row| row[t]).collect()
    }

    pub fn returns_at(&self, t: usize) -> Vec<f64> {
        self.returns.iter().map(|row| row[t]).collect()
    }

    /// Days with `start <= date <= end`.
    pub fn date_range(&self, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        let lo = self.calendar.partition_point(|d| *d < start);
        let hi = self.calendar.partition_point(|d| *d <= end);
        if lo >= hi {
            return Err(Error::EmptySplit(format!(
                "no signal dates in {start}..{end}"
            )));
        }
        Ok(Self {
            tickers: self.tickers.clone(),
            calendar: self.calendar[lo..hi].to_vec(),
            signals: self.signals.iter().map(|r| r[lo..hi].to_vec()).collect(),
            returns: self.returns.iter().map(|r| r[lo..hi].to_vec()).collect(),
            members: self.members,
        })
    }

    /// Element-wise mean of panels sharing tickers and calendar.
    pub fn average(panels: &[SignalPanel]) -> Result<Self> {
        let first = panels
            .first()
            .ok_or_else(|| Error::shape("nothing to average"))?;
        if panels.iter().any(|p| {
            p.tickers != first.tickers || p.calendar != first.calendar || p.members != first.members
        }) {
            return Err(Error::Alignment(
                "averaged panels must share tickers, calendar and M".into(),
            ));
        }
        let k = panels.len() as f64;
        let signals = (0..first.n_stocks())
            .map(|n| {
                (0..first.n_days())
                    .map(|t| panels.iter().map(|p| p.signals[n][t]).sum::<f64>() / k)
                    .collect()
            })
            .collect();
        Ok(Self {
            tickers: first.tickers.clone(),
            calendar: first.calendar.clone(),
            signals,
            returns: first.returns.clone(),
            members: first.members * panels.len(),
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{HEADER}")?;
        for (t, date) in self.calendar.iter().enumerate() {
            for (n, ticker) in self.tickers.iter().enumerate() {
                writeln!(
                    out,
                    "{date},{ticker},{},{}",
                    self.signals[n][t], self.returns[n][t]
                )?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, members: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>().join(",") != HEADER {
            return Err(Error::Parse {
                row: 1,
                message: format!("expected header '{HEADER}'"),
            });
        }
        let mut tickers: Vec<String> = Vec::new();
        let mut rows: BTreeMap<NaiveDate, BTreeMap<String, (f64, f64)>> = BTreeMap::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 2;
            let rec = rec?;
            let bad = |message: String| Error::Parse { row, message };
            if rec.len() != 4 {
                return Err(bad("expected 4 fields".into()));
            }
            let date =
                NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(e.to_string()))?;
            let s: f64 = rec[2]
                .parse()
                .map_err(|_| bad(format!("bad signal '{}'", &rec[2])))?;
            let r: f64 = rec[3]
                .parse()
                .map_err(|_| bad(format!("bad return '{}'", &rec[3])))?;
            if !tickers.iter().any(|t| t == &rec[1]) {
                tickers.push(rec[1].to_string());
            }
            if rows
                .entry(date)
                .or_default()
                .insert(rec[1].to_string(), (s, r))
                .is_some()
            {
                return Err(bad(format!("duplicate entry for {} on {date}", &rec[1])));
            }
        }
        let mut calendar = Vec::new();
        let mut signals = vec![Vec::new(); tickers.len()];
        let mut returns = vec![Vec::new(); tickers.len()];
        for (date, cells) in rows {
            calendar.push(date);
            for (n, ticker) in tickers.iter().enumerate() {
                let (s, r) = cells
                    .get(ticker)
                    .ok_or_else(|| Error::Alignment(format!("missing {ticker} on {date}")))?;
                signals[n].push(*s);
                returns[n].push(*r);
            }
        }
        Self::new(tickers, calendar, signals, returns, members)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, members: usize) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel() -> SignalPanel {
        let d = |day| NaiveDate::from_ymd_opt(2020, 1, day).unwrap();
        SignalPanel::new(
            vec!["A".into(), "B".into()],
            vec![d(2), d(3), d(6)],
            vec![vec![0.5, 1.0, 0.0], vec![0.25, 0.75, 1.0]],
            vec![vec![0.01, -0.02, 0.1 + 0.2], vec![0.0, 1e-17, -0.5]],
            4,
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = panel();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = SignalPanel::read_csv(buf.as_slice(), 4).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_off_grid_signals() {
        let mut p = panel();
        p.signals[0][0] = 0.3;
        assert!(p.validate().is_err());
        p.signals[0][0] = 1.25;
        assert!(p.validate().is_err());
    }

    #[test]
    fn range_and_average() {
        let p = panel();
        let d = |day| NaiveDate::from_ymd_opt(2020, 1, day).unwrap();
        let r = p.date_range(d(3), d(5)).unwrap();
        assert_eq!(r.calendar, vec![d(3)]);
        assert_eq!(r.signals_at(0), vec![1.0, 0.75]);
        assert!(p.date_range(d(4), d(5)).is_err());
        let avg = SignalPanel::average(&[p.clone(), p.clone()]).unwrap();
        assert_eq!(avg.signals, p.signals);
        assert_eq!(avg.members, 8);
    }
}
