//! Independent brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use crossseg::ppo::{policy_forward, Minibatch, PolicyConfig, PolicyParams};
use crossseg::predictor::{Group, GruDims, GruNetParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Mat = Vec<Vec<f64>>;

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

// ---------------------------------------------------------------- features

pub fn naive_ma(closes: &[f64], w: usize) -> Vec<Option<f64>> {
    (0..closes.len())
        .map(|t| {
            if t + 1 < w {
                None
            } else {
                let mut s = 0.0;
                for c in &closes[t + 1 - w..=t] {
                    s += c;
                }
                Some(s / w as f64)
            }
        })
        .collect()
}

pub fn naive_vol(closes: &[f64], w: usize) -> Vec<Option<f64>> {
    (0..closes.len())
        .map(|t| {
            if t < w {
                return None;
            }
            let rets: Vec<f64> = (t + 1 - w..=t)
                .map(|i| closes[i].ln() - closes[i - 1].ln())
                .collect();
            let mean = rets.iter().sum::<f64>() / w as f64;
            let var = rets.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / w as f64;
            Some(var.sqrt())
        })
        .collect()
}

pub fn naive_rsi(closes: &[f64], w: usize) -> Vec<Option<f64>> {
    (0..closes.len())
        .map(|t| {
            if t < w {
                return None;
            }
            let mut gain = 0.0;
            let mut loss = 0.0;
            for i in t + 1 - w..=t {
                let d = closes[i] - closes[i - 1];
                if d > 0.0 {
                    gain += d;
                } else {
                    loss -= d;
                }
            }
            let (g, l) = (gain / w as f64, loss / w as f64);
            Some(if g == 0.0 && l == 0.0 {
                50.0
            } else if l == 0.0 {
                100.0
            } else {
                100.0 - 100.0 / (1.0 + g / l)
            })
        })
        .collect()
}

/// Largest relative error between two optional series; `None` positions must agree.
pub fn series_err(a: &[Option<f64>], b: &[Option<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => rel_err(*x, *y),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- GRU network

fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

/// Row-major flat slice to a matrix.
fn mat(flat: &[f64], r: usize, c: usize) -> Mat {
    (0..r).map(|i| flat[i * c..(i + 1) * c].to_vec()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut out = zeros(a.len(), b[0].len());
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for k in 0..b.len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

/// Batch norm of several matrices jointly, column by column.
fn batch_norm(
    xs: &[Mat],
    gamma: &[f64],
    beta: &[f64],
    stats: Option<(&[f64], &[f64])>,
) -> Vec<Mat> {
    let cols = xs[0][0].len();
    let mut out: Vec<Mat> = xs.to_vec();
    for c in 0..cols {
        let (mean, var) = match stats {
            Some((m, v)) => (m[c], v[c]),
            None => {
                let vals: Vec<f64> = xs
                    .iter()
                    .flat_map(|x| x.iter().map(move |row| row[c]))
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                (mean, var)
            }
        };
        for (x, o) in xs.iter().zip(out.iter_mut()) {
            for r in 0..x.len() {
                o[r][c] = gamma[c] * (x[r][c] - mean) / (var + 1e-5).sqrt() + beta[c];
            }
        }
    }
    out
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Literal transcription of the five forward steps for a batch of `D x H` inputs.
/// `train = true` uses batch statistics, otherwise the stored running statistics.
pub fn gru_oracle(params: &GruNetParams, inputs: &[Mat], train: bool) -> Vec<f64> {
    let d = params.dims;
    let (days, h_in, l, g) = (d.days, d.features, d.linear_hidden, d.gru_hidden);
    let p = |grp: Group| params.group(grp).to_vec();
    let run = &params.running;
    let stats = |site: usize| -> Option<(&[f64], &[f64])> {
        if train {
            return None;
        }
        let (o, w) = [(0, l), (2 * l, g), (2 * l + 2 * g, g)][site];
        Some((&run[o..o + w], &run[o + w..o + 2 * w]))
    };

    // Step 1: X1 = ReLU(BN(X0 W1 + b1)).
    let w1 = mat(&p(Group::W1), h_in, l);
    let b1 = p(Group::B1);
    let pre1: Vec<Mat> = inputs
        .iter()
        .map(|x0| {
            let mut y = matmul(x0, &w1);
            for row in y.iter_mut() {
                for j in 0..l {
                    row[j] += b1[j];
                }
            }
            y
        })
        .collect();
    let x1: Vec<Mat> = batch_norm(&pre1, &p(Group::Bn1Gamma), &p(Group::Bn1Beta), stats(0))
        .into_iter()
        .map(|m| {
            m.into_iter()
                .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
                .collect()
        })
        .collect();

    // Step 2: X2 = BN(GRU(X1)), recurrence down the D rows.
    let wih = mat(&p(Group::GruWih), 3 * g, l);
    let whh = mat(&p(Group::GruWhh), 3 * g, g);
    let (bih, bhh) = (p(Group::GruBih), p(Group::GruBhh));
    let gru_out: Vec<Mat> = x1
        .iter()
        .map(|x| {
            let mut hs = Vec::with_capacity(days);
            let mut h = vec![0.0; g];
            for row in x {
                let mut next = vec![0.0; g];
                for j in 0..g {
                    let lin = |gate: usize, w: &Mat, v: &[f64], b: &[f64]| -> f64 {
                        let k = gate * g + j;
                        b[k] + (0..v.len()).map(|i| w[k][i] * v[i]).sum::<f64>()
                    };
                    let r = sig(lin(0, &wih, row, &bih) + lin(0, &whh, &h, &bhh));
                    let z = sig(lin(1, &wih, row, &bih) + lin(1, &whh, &h, &bhh));
                    let n = (lin(2, &wih, row, &bih) + r * lin(2, &whh, &h, &bhh)).tanh();
                    next[j] = (1.0 - z) * n + z * h[j];
                }
                h = next;
                hs.push(h.clone());
            }
            hs
        })
        .collect();
    let x2 = batch_norm(&gru_out, &p(Group::Bn2Gamma), &p(Group::Bn2Beta), stats(1));

    // Step 3: A = Softmax(tanh(BN(X2^T W3 + b3))), softmax along each row.
    let w3 = mat(&p(Group::W3), days, g);
    let b3 = p(Group::B3);
    let pre3: Vec<Mat> = x2
        .iter()
        .map(|x| {
            let mut s = matmul(&transpose(x), &w3);
            for row in s.iter_mut() {
                for j in 0..g {
                    row[j] += b3[j];
                }
            }
            s
        })
        .collect();
    let a: Vec<Mat> = batch_norm(&pre3, &p(Group::Bn3Gamma), &p(Group::Bn3Beta), stats(2))
        .into_iter()
        .map(|m| {
            m.into_iter()
                .map(|row| {
                    let t: Vec<f64> = row.iter().map(|v| v.tanh()).collect();
                    let mx = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = t.iter().map(|v| (v - mx).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.into_iter().map(|v| v / s).collect()
                })
                .collect()
        })
        .collect();

    // Steps 4-5: X3 = X2 A; y = X3 W4 + b4, last row.
    let w4 = p(Group::W4);
    let b4 = p(Group::B4)[0];
    x2.iter()
        .zip(&a)
        .map(|(x, a)| {
            let x3 = matmul(x, a);
            let last = &x3[days - 1];
            b4 + (0..g).map(|j| last[j] * w4[j]).sum::<f64>()
        })
        .collect()
}

/// Flattens `D x H` matrices into the network's concatenated batch input.
pub fn flatten(inputs: &[Mat]) -> Vec<f64> {
    inputs
        .iter()
        .flat_map(|m| m.iter().flatten().copied())
        .collect()
}

// ---------------------------------------------------------------- portfolio

/// Terminal wealth of a zero-cost rebalanced portfolio: product of `1 + a . r`.
pub fn product_wealth(actions: &[Vec<f64>], returns: &[Vec<f64>]) -> f64 {
    let mut w = 1.0;
    for (a, r) in actions.iter().zip(returns) {
        let mut pr = 0.0;
        for i in 0..a.len() {
            pr += a[i] * r[i];
        }
        w *= 1.0 + pr;
    }
    w
}

/// Equal-weight buy-and-hold wealth: average of each stock's growth.
pub fn buy_and_hold_curve(returns_by_stock: &[Vec<f64>]) -> Vec<f64> {
    let n = returns_by_stock.len() as f64;
    let t = returns_by_stock[0].len();
    (0..t)
        .map(|k| {
            returns_by_stock
                .iter()
                .map(|r| r[..=k].iter().fold(1.0, |acc, x| acc * (1.0 + x)) / n)
                .sum()
        })
        .collect()
}

pub fn naive_sharpe(returns: &[f64]) -> f64 {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    if var.sqrt() < 1e-12 {
        0.0
    } else {
        mean / var.sqrt() * 252f64.sqrt()
    }
}

// ---------------------------------------------------------------- generators

/// Random positive close path of length `len`: a log-normal walk with
/// occasional flat stretches so the RSI edge cases occur.
pub fn random_closes(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let mut p: f64 = rng.random_range(1.0..200.0);
    let vol: f64 = rng.random_range(0.001..0.05);
    (0..len)
        .map(|_| {
            if rng.random_bool(0.9) {
                let z: f64 = rng.sample(StandardNormal);
                p *= (vol * z).exp();
            }
            p
        })
        .collect()
}

/// Random signal panel: signals on the `1/members` grid, returns in `(-5%, 5%)`.
pub fn random_signal_panel(
    rng: &mut impl Rng,
    n_stocks: usize,
    days: usize,
    members: usize,
) -> crossseg::predictor::SignalPanel {
    let start = chrono::NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
    let calendar = (0..days)
        .map(|i| start + chrono::Duration::days(i as i64))
        .collect();
    let signals = (0..n_stocks)
        .map(|_| {
            (0..days)
                .map(|_| rng.random_range(0..=members) as f64 / members as f64)
                .collect()
        })
        .collect();
    let returns = (0..n_stocks)
        .map(|_| (0..days).map(|_| rng.random_range(-0.05..0.05)).collect())
        .collect();
    let tickers = (0..n_stocks).map(|i| format!("S{i}")).collect();
    crossseg::predictor::SignalPanel::new(tickers, calendar, signals, returns, members).unwrap()
}

// ---------------------------------------------------------------- random draws

/// Parameters with every group (including BN affine and running stats) randomized.
pub fn random_params(dims: GruDims, rng: &mut ChaCha8Rng) -> GruNetParams {
    let mut p = GruNetParams::init(dims, rng.random()).unwrap();
    for g in [Group::Bn1Gamma, Group::Bn2Gamma, Group::Bn3Gamma] {
        p.group_mut(g)
            .iter_mut()
            .for_each(|v| *v = rng.random_range(0.5..1.5));
    }
    for g in [Group::Bn1Beta, Group::Bn2Beta, Group::Bn3Beta] {
        p.group_mut(g)
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let (l, gh) = (dims.linear_hidden, dims.gru_hidden);
    for (site, w) in [l, gh, gh].into_iter().enumerate() {
        let o = [0, 2 * l, 2 * l + 2 * gh][site];
        for c in 0..w {
            p.running[o + c] = rng.random_range(-0.3..0.3);
            p.running[o + w + c] = rng.random_range(0.2..2.0);
        }
    }
    p
}

pub fn random_inputs(dims: GruDims, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Mat> {
    (0..batch)
        .map(|_| {
            (0..dims.days)
                .map(|_| {
                    (0..dims.features)
                        .map(|_| rng.sample(StandardNormal))
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn random_minibatch(p: &PolicyParams, n: usize, rng: &mut ChaCha8Rng) -> Minibatch {
    let mut mb = Minibatch::default();
    for _ in 0..n {
        let s: Vec<f64> = (0..p.state_dim).map(|_| rng.random::<f64>()).collect();
        let out = policy_forward(p, &s).unwrap();
        let a = out.sample(rng);
        let lp = out.log_prob(&a) + 0.3 * rng.sample::<f64, _>(StandardNormal);
        mb.states.push(s);
        mb.actions.push(a);
        mb.old_log_probs.push(lp);
        mb.advantages.push(rng.sample(StandardNormal));
        mb.returns.push(rng.sample(StandardNormal));
    }
    mb
}

pub fn randomized_policy(rng: &mut ChaCha8Rng) -> PolicyParams {
    let cfg = PolicyConfig {
        depth: rng.random_range(1..=3),
        width: 12,
        init_log_std: -0.3,
    };
    let mut p = PolicyParams::init(3, 2, &cfg, rng.random()).unwrap();
    for v in p.values.iter_mut() {
        *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    p
}

pub fn norm_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
