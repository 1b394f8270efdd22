//! Canonical OHLCV CSV: header `date,open,high,low,close,volume`, ISO dates,
//! shortest round-trip decimal prices, integer volume. One file per ticker.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{DailyBar, StockSeries};
use crate::error::{Error, Result};

pub const HEADER: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

/// Parses CSV text for one ticker. Row numbers in errors are file line numbers.
pub fn parse_ohlcv<R: Read>(ticker: &str, reader: R) -> Result<StockSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| Error::Parse {
        row: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Parse {
            row: 1,
            message: format!("expected header '{}'", HEADER.join(",")),
        });
    }

    let mut bars = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != 6 {
            return Err(Error::Parse {
                row,
                message: format!("expected 6 fields, found {}", record.len()),
            });
        }
        let price = |idx: usize| -> Result<f64> {
            record[idx].parse::<f64>().map_err(|e| Error::Parse {
                row,
                message: format!("{} '{}': {e}", HEADER[idx], &record[idx]),
            })
        };
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            row,
            message: format!("date '{}': {e}", &record[0]),
        })?;
        let volume = record[5].parse::<u64>().map_err(|e| Error::Parse {
            row,
            message: format!("volume '{}': {e}", &record[5]),
        })?;
        bars.push(DailyBar {
            date,
            open: price(1)?,
            high: price(2)?,
            low: price(3)?,
            close: price(4)?,
            volume,
        });
    }
    StockSeries::new(ticker, bars)
}

/// Loads `<TICKER>.csv`; the ticker is the file stem.
pub fn load_ohlcv(path: impl AsRef<Path>) -> Result<StockSeries> {
    let path = path.as_ref();
    let ticker = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::config(format!("cannot derive ticker from {}", path.display())))?;
    let file = fs::File::open(path)?;
    parse_ohlcv(ticker, std::io::BufReader::new(file))
}

/// Loads every `*.csv` in a directory, sorted by ticker.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<StockSeries>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::config(format!(
            "no .csv files in {}",
            dir.as_ref().display()
        )));
    }
    paths.iter().map(load_ohlcv).collect()
}

pub fn series_to_csv(series: &StockSeries) -> String {
    let mut out = HEADER.join(",");
    out.push('\n');
    for b in &series.bars {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.date.format("%Y-%m-%d"),
            b.open,
            b.high,
            b.low,
            b.close,
            b.volume
        ));
    }
    out
}

/// Writes `<dir>/<TICKER>.csv` and returns its path.
pub fn write_ohlcv(series: &StockSeries, dir: impl AsRef<Path>) -> Result<PathBuf> {
    fs::create_dir_all(dir.as_ref())?;
    let path = dir.as_ref().join(format!("{}.csv", series.ticker));
    fs::write(&path, series_to_csv(series))?;
    Ok(path)
}
