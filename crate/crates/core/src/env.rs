//! Episodic portfolio environment driven by ensemble signals.
//!
//! Each step uses the signals as of day `t`. The chosen allocation earns the
//! close-to-close return from `t` to `t + 1`. Rebalancing trades
//! `|a_n W - h_n W|` per stock at cost `tc` per unit traded. Wealth then
//! compounds as `(W - cost)(1 + sum_n a_n r_n)`. Losses are scaled by the
//! penalty `lambda`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::SignalPanel;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimplexMap {
    #[default]
    Softmax,
    /// Negative entries clipped to zero, then rescaled; all-non-positive maps to uniform.
    ClipRenormalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Append current holdings to the state.
    pub include_portfolio: bool,
    /// Cost per unit of value traded.
    pub tc: f64,
    /// Multiplier applied to negative step returns.
    pub penalty: f64,
    /// Extra zero-return action slot for cash.
    pub cash_slot: bool,
    pub simplex: SimplexMap,
    /// Begin training episodes at a random day instead of the first.
    pub random_start: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDate>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            include_portfolio: false,
            tc: 0.0,
            penalty: 1.5,
            cash_slot: false,
            simplex: SimplexMap::Softmax,
            random_start: false,
            start: None,
            end: None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tc) {
            return Err(Error::config(format!(
                "tc must lie in [0, 1], got {}",
                self.tc
            )));
        }
        if !(self.penalty >= 1.0) || !self.penalty.is_finite() {
            return Err(Error::config(format!(
                "penalty must be >= 1, got {}",
                self.penalty
            )));
        }
        Ok(())
    }

    pub fn state_dim(&self, n_stocks: usize) -> usize {
        if self.include_portfolio {
            2 * n_stocks
        } else {
            n_stocks
        }
    }

    pub fn action_dim(&self, n_stocks: usize) -> usize {
        n_stocks + usize::from(self.cash_slot)
    }
}

/// Observation: today's signals, optionally followed by current stock holdings.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState(pub Vec<f64>);

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionAllocation(Vec<f64>);

impl ActionAllocation {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty()
            || weights.iter().any(|w| !(*w >= 0.0))
            || (sum - 1.0).abs() >= SIMPLEX_TOL
        {
            return Err(Error::Contract(format!(
                "allocation {weights:?} is not on the simplex"
            )));
        }
        Ok(Self(weights))
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

/// Maps any finite vector onto the simplex.
pub fn normalize_action(raw: &[f64], map: SimplexMap) -> Result<ActionAllocation> {
    if raw.is_empty() || raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "cannot map {raw:?} onto the simplex"
        )));
    }
    let weights = match map {
        SimplexMap::Softmax => {
            let mut w = raw.to_vec();
            crate::linalg::softmax_in_place(&mut w);
            w
        }
        SimplexMap::ClipRenormalize => {
            let clipped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
            let s: f64 = clipped.iter().sum();
            if s > 0.0 {
                clipped.iter().map(|v| v / s).collect()
            } else {
                vec![1.0 / raw.len() as f64; raw.len()]
            }
        }
    };
    ActionAllocation::new(weights)
}

/// Outcome of one rebalance-and-hold step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub date: NaiveDate,
    pub action: Vec<f64>,
    pub turnover: f64,
    pub cost: f64,
    pub wealth: f64,
    pub reward: f64,
}

/// Wealth, holdings and cost accounting for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioLedger {
    pub wealth: f64,
    /// Fraction of wealth in each asset; the remainder is cash.
    pub holdings: Vec<f64>,
    pub cumulative_cost: f64,
    /// Raw fractional wealth change of every step.
    pub returns: Vec<f64>,
}

impl PortfolioLedger {
    pub fn new(n_assets: usize) -> Self {
        Self {
            wealth: 1.0,
            holdings: vec![0.0; n_assets],
            cumulative_cost: 0.0,
            returns: Vec::new(),
        }
    }

    /// Rebalances to `target` and holds through `asset_returns`; returns `(turnover, cost, rho)`.
    pub fn rebalance(
        &mut self,
        target: &[f64],
        asset_returns: &[f64],
        tc: f64,
    ) -> Result<(f64, f64, f64)> {
        if target.len() != self.holdings.len() || asset_returns.len() != target.len() {
            return Err(Error::shape(
                "target, holdings and returns must have equal length",
            ));
        }
        let before = self.wealth;
        let turnover: f64 = target
            .iter()
            .zip(&self.holdings)
            .map(|(a, h)| (a * before - h * before).abs())
            .sum();
        let cost = tc * turnover;
        let growth: f64 = target.iter().zip(asset_returns).map(|(a, r)| a * r).sum();
        let after = (before - cost) * (1.0 + growth);
        if !(after > 0.0) || !after.is_finite() {
            return Err(Error::Domain(format!("portfolio bankrupt: wealth {after}")));
        }
        let denom = 1.0 + growth;
        for (h, (a, r)) in self
            .holdings
            .iter_mut()
            .zip(target.iter().zip(asset_returns))
        {
            *h = a * (1.0 + r) / denom;
        }
        let rho = after / before - 1.0;
        self.wealth = after;
        self.cumulative_cost += cost;
        self.returns.push(rho);
        Ok((turnover, cost, rho))
    }
}

pub fn penalized_reward(rho: f64, penalty: f64) -> f64 {
    if rho >= 0.0 {
        rho
    } else {
        penalty * rho
    }
}

pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub record: StepRecord,
}

/// Gym-style environment over one signal panel.
#[derive(Debug, Clone)]
pub struct TradingEnv {
    panel: Arc<SignalPanel>,
    config: EnvConfig,
    t: usize,
    done: bool,
    ledger: PortfolioLedger,
}

impl TradingEnv {
    pub fn new(panel: Arc<SignalPanel>, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let panel = match (config.start, config.end) {
            (None, None) => panel,
            (s, e) => Arc::new(
                panel.date_range(s.unwrap_or(NaiveDate::MIN), e.unwrap_or(NaiveDate::MAX))?,
            ),
        };
        if panel.n_days() == 0 {
            return Err(Error::config("episode range contains no days"));
        }
        let n_assets = config.action_dim(panel.n_stocks());
        Ok(Self {
            panel,
            config,
            t: 0,
            done: false,
            ledger: PortfolioLedger::new(n_assets),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn panel(&self) -> &SignalPanel {
        &self.panel
    }

    pub fn n_days(&self) -> usize {
        self.panel.n_days()
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim(self.panel.n_stocks())
    }

    pub fn action_dim(&self) -> usize {
        self.config.action_dim(self.panel.n_stocks())
    }

    pub fn ledger(&self) -> &PortfolioLedger {
        &self.ledger
    }

    pub fn day(&self) -> usize {
        self.t
    }

    /// Starts an all-cash episode with wealth 1 on the first day.
    pub fn reset(&mut self) -> EnvState {
        self.reset_at(0)
    }

    /// Starts an episode on day `start` (clamped to the panel).
    pub fn reset_at(&mut self, start: usize) -> EnvState {
        self.t = start.min(self.panel.n_days() - 1);
        self.done = false;
        self.ledger = PortfolioLedger::new(self.action_dim());
        self.observe()
    }

    fn observe(&self) -> EnvState {
        let mut s = self.panel.signals_at(self.t);
        if self.config.include_portfolio {
            s.extend_from_slice(&self.ledger.holdings[..self.panel.n_stocks()]);
        }
        EnvState(s)
    }

    pub fn step(&mut self, action: &ActionAllocation) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract(
                "step called on a finished episode; reset first".into(),
            ));
        }
        let a = action.weights();
        if a.len() != self.action_dim() {
            return Err(Error::shape(format!(
                "action has {} entries, expected {}",
                a.len(),
                self.action_dim()
            )));
        }
        let mut r = self.panel.returns_at(self.t);
        if self.config.cash_slot {
            r.push(0.0);
        }
        let (turnover, cost, rho) = self.ledger.rebalance(a, &r, self.config.tc)?;
        let reward = penalized_reward(rho, self.config.penalty);
        let record = StepRecord {
            date: self.panel.calendar[self.t],
            action: a.to_vec(),
            turnover,
            cost,
            wealth: self.ledger.wealth,
            reward,
        };
        self.done = self.t + 1 >= self.panel.n_days();
        if !self.done {
            self.t += 1;
        }
        Ok(StepOutcome {
            state: self.observe(),
            reward,
            done: self.done,
            record,
        })
    }
}

/// Writes `date,action_0..action_{K-1},turnover,cost,wealth,reward`.
pub fn write_trace(records: &[StepRecord], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let k = records.first().map_or(0, |r| r.action.len());
    let actions: Vec<String> = (0..k).map(|i| format!("action_{i}")).collect();
    writeln!(
        out,
        "date,{},turnover,cost,wealth,reward",
        actions.join(",")
    )?;
    for r in records {
        let a: Vec<String> = r.action.iter().map(f64::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.date,
            a.join(","),
            r.turnover,
            r.cost,
            r.wealth,
            r.reward
        )?;
    }
    out.flush()?;
    Ok(())
}
