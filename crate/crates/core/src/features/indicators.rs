//! Rolling technical indicators over close prices.
//!
//! Every function returns a series aligned with its input; entries whose
//! look-back is not yet available are `None`.

use crate::error::{Error, Result};

fn check_window(window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::config("indicator window must be positive"));
    }
    Ok(())
}

/// Trailing arithmetic mean of `window` closes; defined from index `window - 1`.
pub fn moving_average(closes: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    check_window(window)?;
    let mut out = vec![None; closes.len()];
    if closes.len() < window {
        return Ok(out);
    }
    let w = window as f64;
    let mut sum: f64 = closes[..window].iter().sum();
    out[window - 1] = Some(sum / w);
    for t in window..closes.len() {
        sum += closes[t] - closes[t - window];
        // Refresh the running sum periodically so drift stays at rounding level.
        if t % window == 0 {
            sum = closes[t + 1 - window..=t].iter().sum();
        }
        out[t] = Some(sum / w);
    }
    Ok(out)
}

/// `r_t = ln(p_t) - ln(p_{t-1})`, with `r_0` undefined.
pub fn log_returns(closes: &[f64]) -> Result<Vec<Option<f64>>> {
    if let Some(bad) = closes.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::Domain(format!(
            "log-return of non-positive price {bad}"
        )));
    }
    let mut out = vec![None; closes.len()];
    for t in 1..closes.len() {
        out[t] = Some(closes[t].ln() - closes[t - 1].ln());
    }
    Ok(out)
}

/// Population standard deviation of the last `window` log-returns; defined from index `window`.
pub fn realized_volatility(closes: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    check_window(window)?;
    let returns = log_returns(closes)?;
    let mut out = vec![None; closes.len()];
    for t in window..closes.len() {
        let slice = &returns[t + 1 - window..=t];
        let w = window as f64;
        let mean = slice.iter().map(|r| r.unwrap()).sum::<f64>() / w;
        let var = slice
            .iter()
            .map(|r| (r.unwrap() - mean).powi(2))
            .sum::<f64>()
            / w;
        out[t] = Some(var.sqrt());
    }
    Ok(out)
}

/// Relative strength index from simple averages of the last `window` price changes.
///
/// No losses gives 100, no gains gives 0, and a flat window gives 50.
pub fn rsi(closes: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    check_window(window)?;
    let mut out = vec![None; closes.len()];
    for t in window..closes.len() {
        let (mut gain, mut loss) = (0.0, 0.0);
        for i in t + 1 - window..=t {
            let change = closes[i] - closes[i - 1];
            if change > 0.0 {
                gain += change;
            } else {
                loss -= change;
            }
        }
        let value = match (gain > 0.0, loss > 0.0) {
            (false, false) => 50.0,
            (true, false) => 100.0,
            (false, true) => 0.0,
            (true, true) => {
                let rs = (gain / window as f64) / (loss / window as f64);
                100.0 - 100.0 / (1.0 + rs)
            }
        };
        out[t] = Some(value);
    }
    Ok(out)
}
