use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalSeries;
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    /// Tree-structured Parzen estimator after a uniform warm-up.
    #[default]
    Tpe,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub depth: (usize, usize),
    pub width: (usize, usize),
    /// Log-uniform bounds.
    pub learning_rate: (f64, f64),
    /// Log-uniform bounds.
    pub entropy: (f64, f64),
    pub trials: usize,
    pub realizations: usize,
    pub strategy: SearchStrategy,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            depth: (1, 3),
            width: (12, 127),
            learning_rate: (3e-5, 3e-3),
            entropy: (1e-5, 1e-2),
            trials: 50,
            realizations: 20,
            strategy: SearchStrategy::Tpe,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = self.depth.0 >= 1
            && self.depth.0 <= self.depth.1
            && self.depth.1 <= 3
            && self.width.0 >= 12
            && self.width.0 <= self.width.1
            && self.width.1 <= 127
            && self.learning_rate.0 > 0.0
            && self.learning_rate.0 <= self.learning_rate.1
            && self.entropy.0 > 0.0
            && self.entropy.0 <= self.entropy.1
            && self.trials >= 1
            && self.realizations >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::config("invalid search space"))
        }
    }

    /// Maps a point of the unit hypercube to concrete hyperparameters.
    fn decode(&self, u: [f64; 4]) -> TrialParams {
        let int = |(lo, hi): (usize, usize), x: f64| {
            lo + ((x * (hi - lo + 1) as f64) as usize).min(hi - lo)
        };
        let log = |(lo, hi): (f64, f64), x: f64| (lo.ln() + x * (hi.ln() - lo.ln())).exp();
        TrialParams {
            depth: int(self.depth, u[0]),
            width: int(self.width, u[1]),
            learning_rate: log(self.learning_rate, u[2]),
            entropy: log(self.entropy, u[3]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub depth: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrialOutcome {
    Completed {
        /// Mean over realizations of the best smoothed validation Sharpe.
        objective: f64,
        /// Mean over realizations of the smoothed test Sharpe at that period.
        test_sharpe: f64,
        per_realization: Vec<f64>,
    },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: TrialParams,
    #[serde(skip)]
    unit: [f64; 4],
    pub outcome: TrialOutcome,
    pub wall_time_secs: f64,
}

impl Trial {
    pub fn objective(&self) -> Option<f64> {
        match self.outcome {
            TrialOutcome::Completed { objective, .. } => Some(objective),
            TrialOutcome::Failed(_) => None,
        }
    }
}

pub struct SearchResult {
    pub trials: Vec<Trial>,
    /// Index of the best completed trial (first one on ties).
    pub best: Option<usize>,
}

const STARTUP_TRIALS: usize = 5;
const CANDIDATES: usize = 24;
const GOOD_FRACTION: f64 = 0.25;

fn parzen_density(points: &[f64], x: f64, bw: f64) -> f64 {
    let norm = 1.0 / (bw * (2.0 * std::f64::consts::PI).sqrt());
    let kernels: f64 = points
        .iter()
        .map(|p| norm * (-0.5 * ((x - p) / bw).powi(2)).exp())
        .sum();
    (1.0 + kernels) / (points.len() + 1) as f64
}

fn bandwidth(n: usize) -> f64 {
    (1.0 / (n as f64 + 1.0).sqrt()).clamp(0.05, 0.5)
}

fn tpe_proposal(history: &[&Trial], rng: &mut ChaCha8Rng) -> [f64; 4] {
    let mut scored: Vec<(f64, [f64; 4])> = history
        .iter()
        .filter_map(|t| t.objective().map(|o| (o, t.unit)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_good = ((scored.len() as f64 * GOOD_FRACTION).ceil() as usize).clamp(1, scored.len());
    let (good, bad) = scored.split_at(n_good);
    let mut best = ([0.0; 4], f64::NEG_INFINITY);
    for _ in 0..CANDIDATES {
        let mut cand = [0.0; 4];
        let mut score = 0.0;
        for d in 0..4 {
            let gp: Vec<f64> = good.iter().map(|(_, u)| u[d]).collect();
            let bp: Vec<f64> = bad.iter().map(|(_, u)| u[d]).collect();
            let bw = bandwidth(gp.len());
            let pick = rng.random_range(0..=gp.len());
            let x = if pick == gp.len() {
                rng.random::<f64>()
            } else {
                let z: f64 = rng.sample(StandardNormal);
                (gp[pick] + bw * z).clamp(0.0, 1.0 - 1e-12)
            };
            cand[d] = x;
            score +=
                parzen_density(&gp, x, bw).ln() - parzen_density(&bp, x, bandwidth(bp.len())).ln();
        }
        if score > best.1 {
            best = (cand, score);
        }
    }
    best.0
}

/// Seed of realization `r` of trial `trial` in a search seeded with `seed`.
pub fn realization_seed(seed: u64, trial: usize, r: usize) -> u64 {
    derive_seed(derive_seed(seed, trial as u64), r as u64)
}

/// Sequential search; realizations of one trial run in parallel.
///
/// `objective(params, seed)` trains and evaluates one realization. Errors mark
/// the trial failed and the search continues.
pub fn hyper_search<F>(space: &SearchSpace, seed: u64, objective: F) -> Result<SearchResult>
where
    F: Fn(&TrialParams, u64) -> Result<EvalSeries> + Sync,
{
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials: Vec<Trial> = Vec::with_capacity(space.trials);
    for index in 0..space.trials {
        let completed = trials.iter().filter(|t| t.objective().is_some()).count();
        let unit = if space.strategy == SearchStrategy::Random || completed < STARTUP_TRIALS {
            [rng.random(), rng.random(), rng.random(), rng.random()]
        } else {
            let history: Vec<&Trial> = trials.iter().collect();
            tpe_proposal(&history, &mut rng)
        };
        let params = space.decode(unit);
        let started = Instant::now();
        let runs: Vec<Result<EvalSeries>> = (0..space.realizations as u64)
            .into_par_iter()
            .map(|r| objective(&params, realization_seed(seed, index, r as usize)))
            .collect();
        let outcome = summarize(runs);
        if let TrialOutcome::Failed(msg) = &outcome {
            log::warn!("trial {index} failed: {msg}");
        }
        trials.push(Trial {
            index,
            params,
            unit,
            outcome,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
    }
    let best = trials
        .iter()
        .filter_map(|t| t.objective().map(|o| (t.index, o)))
        .fold(None, |acc: Option<(usize, f64)>, (i, o)| match acc {
            Some((_, b)) if b >= o => acc,
            _ => Some((i, o)),
        })
        .map(|(i, _)| i);
    Ok(SearchResult { trials, best })
}

fn summarize(runs: Vec<Result<EvalSeries>>) -> TrialOutcome {
    let mut vals = Vec::with_capacity(runs.len());
    let mut tests = Vec::with_capacity(runs.len());
    for run in runs {
        match run {
            Ok(series) => match (
                series.best_smoothed_validation(),
                series.test_at_best_validation(),
            ) {
                (Some(v), Some(t)) if v.is_finite() && t.is_finite() => {
                    vals.push(v);
                    tests.push(t);
                }
                _ => return TrialOutcome::Failed("no evaluation periods recorded".into()),
            },
            Err(e) => return TrialOutcome::Failed(e.to_string()),
        }
    }
    let n = vals.len() as f64;
    TrialOutcome::Completed {
        objective: vals.iter().sum::<f64>() / n,
        test_sharpe: tests.iter().sum::<f64>() / n,
        per_realization: vals,
    }
}

/// One row of the trial table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub data_split: String,
    pub tc: f64,
    pub portfolio: bool,
    pub best_val_sharpe: Option<f64>,
    pub best_test_sharpe: Option<f64>,
    pub wall_time_secs: f64,
    pub depth: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub entropy: f64,
}

impl TrialRow {
    pub fn from_trial(data_split: &str, tc: f64, portfolio: bool, trial: &Trial) -> Self {
        let (v, t) = match &trial.outcome {
            TrialOutcome::Completed {
                objective,
                test_sharpe,
                ..
            } => (Some(*objective), Some(*test_sharpe)),
            TrialOutcome::Failed(_) => (None, None),
        };
        Self {
            data_split: data_split.to_string(),
            tc,
            portfolio,
            best_val_sharpe: v,
            best_test_sharpe: t,
            wall_time_secs: trial.wall_time_secs,
            depth: trial.params.depth,
            width: trial.params.width,
            learning_rate: trial.params.learning_rate,
            entropy: trial.params.entropy,
        }
    }
}

fn hms(secs: f64) -> String {
    let s = secs.round() as u64;
    format!("{}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

/// Writes `data_split,tc,portfolio,best_val_sharpe,best_test_sharpe,wall_time,depth,width,lr,entropy`.
pub fn write_trial_table(rows: &[TrialRow], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "data_split,tc,portfolio,best_val_sharpe,best_test_sharpe,wall_time,depth,width,lr,entropy"
    )?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:e},{:e}",
            r.data_split,
            r.tc,
            u8::from(r.portfolio),
            opt(r.best_val_sharpe),
            opt(r.best_test_sharpe),
            hms(r.wall_time_secs),
            r.depth,
            r.width,
            r.learning_rate,
            r.entropy
        )?;
    }
    out.flush()?;
    Ok(())
}
