//! Synthetic market panels.
//!
//! Closes follow geometric Brownian motion. Each stock also carries a latent
//! standardized AR(1) factor `x_t`; it is observable on day `t` through the
//! intraday move, `ln(close_t / open_t) = sigma * x_t`, and with
//! `predictability = p` the next log-return is
//!
//! ```text
//! r_{t+1} = (mu - sigma^2 / 2) + sigma * (p * x_t + sqrt(1 - p^2) * eps_{t+1})
//! ```
//!
//! so `p = 0` gives a pure random walk and `p = 1` makes the next return an
//! exact affine function of today's intraday move.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AlignedPanel, DailyBar};
use crate::error::{Error, Result};

/// A scalar shared by all stocks, or one value per stock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerStock {
    All(f64),
    Each(Vec<f64>),
}

impl PerStock {
    pub fn get(&self, stock: usize) -> f64 {
        match self {
            PerStock::All(v) => *v,
            PerStock::Each(v) => v[stock],
        }
    }

    fn check_len(&self, n: usize, what: &str) -> Result<()> {
        match self {
            PerStock::Each(v) if v.len() != n => Err(Error::config(format!(
                "{what}: expected {n} per-stock values, got {}",
                v.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// From `start_day` on, drift and volatility are scaled by these factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeShift {
    pub start_day: usize,
    pub drift_scale: f64,
    pub vol_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub initial_price: f64,
    /// Expected daily simple return.
    pub drift: PerStock,
    /// Daily log-return volatility.
    pub volatility: PerStock,
    /// Weight of the latent factor in next-day returns, in `[0, 1]`.
    pub predictability: f64,
    /// AR(1) coefficient of the latent factor, in `(-1, 1)`.
    pub persistence: f64,
    #[serde(default)]
    pub regimes: Vec<RegimeShift>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stocks: 3,
            n_days: 800,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(),
            initial_price: 10.0,
            drift: PerStock::All(0.0),
            volatility: PerStock::All(0.015),
            predictability: 0.0,
            persistence: 0.5,
            regimes: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stocks == 0 || self.n_days == 0 {
            return Err(Error::config(
                "synthetic panel needs n_stocks > 0 and n_days > 0",
            ));
        }
        if !(self.initial_price > 0.0) {
            return Err(Error::config("initial_price must be positive"));
        }
        if !(0.0..=1.0).contains(&self.predictability) {
            return Err(Error::config("predictability must lie in [0, 1]"));
        }
        if !(self.persistence > -1.0 && self.persistence < 1.0) {
            return Err(Error::config("persistence must lie in (-1, 1)"));
        }
        self.drift.check_len(self.n_stocks, "drift")?;
        self.volatility.check_len(self.n_stocks, "volatility")?;
        for s in 0..self.n_stocks {
            if self.volatility.get(s) < 0.0 {
                return Err(Error::config("volatility must be non-negative"));
            }
        }
        Ok(())
    }

    fn regime_at(&self, day: usize) -> (f64, f64) {
        self.regimes
            .iter()
            .filter(|r| r.start_day <= day)
            .max_by_key(|r| r.start_day)
            .map_or((1.0, 1.0), |r| (r.drift_scale, r.vol_scale))
    }
}

/// Weekday calendar of `n` dates starting at the first weekday on or after `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

/// Pure function of `(config, seed)`.
pub fn gen_synthetic(config: &SynthConfig, seed: u64) -> Result<AlignedPanel> {
    config.validate()?;
    let calendar = business_days(config.start_date, config.n_days);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = config.predictability;
    let q = (1.0 - p * p).max(0.0).sqrt();
    let phi = config.persistence;
    let phi_c = (1.0 - phi * phi).sqrt();

    let mut bars = Vec::with_capacity(config.n_stocks);
    for stock in 0..config.n_stocks {
        let mu = config.drift.get(stock);
        let base_sigma = config.volatility.get(stock);
        let mut row = Vec::with_capacity(config.n_days);
        let mut log_close = 0.0f64;
        let mut x: f64 = rng.sample(StandardNormal);
        for (t, &date) in calendar.iter().enumerate() {
            let (drift_scale, vol_scale) = config.regime_at(t);
            let sigma = base_sigma * vol_scale;
            if t > 0 {
                let eps: f64 = rng.sample(StandardNormal);
                log_close += (mu * drift_scale - 0.5 * sigma * sigma) + sigma * (p * x + q * eps);
                let eta: f64 = rng.sample(StandardNormal);
                x = phi * x + phi_c * eta;
            }
            let close = config.initial_price * log_close.exp();
            let open = config.initial_price * (log_close - sigma * x).exp();
            let wick_up: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            let wick_down: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            let vol_noise: f64 = rng.sample(StandardNormal);
            let high = open.max(close) * (0.5 * sigma * wick_up).exp();
            let low = open.min(close) * (-0.5 * sigma * wick_down).exp();
            let volume = (1.0e6 * (0.3 * vol_noise).exp()).round() as u64;
            row.push(DailyBar {
                date,
                open,
                high,
                low,
                close,
                volume,
            });
        }
        bars.push(row);
    }
    let tickers = (0..config.n_stocks).map(|i| format!("SYN{i:03}")).collect();
    AlignedPanel::new(tickers, calendar, bars)
}
