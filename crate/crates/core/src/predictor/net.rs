//! The GRU price network and its hand-derived backward pass.
//!
//! For one `D x H` input window `X0` the forward pass is
//!
//! ```text
//! X1 = ReLU(BN1(X0 W1 + b1))                      D x L
//! X2 = BN2(GRU(X1))                               D x G   (recurrence over the D rows)
//! A  = Softmax_rows(tanh(BN3(X2^T W3 + b3)))      G x G
//! X3 = X2 A                                       D x G
//! y  = (X3 W4 + b4)[D - 1]                        scalar
//! ```
//!
//! `W3` is `D x G`: the weighing layer mixes the time axis so that `A` is a
//! `G x G` matrix and `X2 A` is an ordinary matrix product. The scalar
//! prediction is the last time-step row of the final layer.
//!
//! GRU gates use the update/reset formulation with gate order `(r, z, n)`:
//!
//! ```text
//! r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h,          h_0 = 0
//! ```
//!
//! Batch norm normalizes each column over every row of every sample in the
//! batch (`B * D` rows at sites 1 and 2, `B * G` rows at site 3). Running
//! statistics use momentum 0.1 and the unbiased batch variance; eval mode
//! reads them instead of batch statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm_acc, gemm_tn_acc, matvec, matvec_t_acc, outer_acc, sigmoid};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruDims {
    /// History length D.
    pub days: usize,
    /// Feature count H.
    pub features: usize,
    /// Width L of the input linear layer.
    pub linear_hidden: usize,
    /// GRU hidden size G.
    pub gru_hidden: usize,
}

/// Trainable parameter groups, in storage (and checkpoint) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    W1,
    B1,
    Bn1Gamma,
    Bn1Beta,
    GruWih,
    GruWhh,
    GruBih,
    GruBhh,
    Bn2Gamma,
    Bn2Beta,
    W3,
    B3,
    Bn3Gamma,
    Bn3Beta,
    W4,
    B4,
}

impl Group {
    pub const ALL: [Group; 16] = [
        Group::W1,
        Group::B1,
        Group::Bn1Gamma,
        Group::Bn1Beta,
        Group::GruWih,
        Group::GruWhh,
        Group::GruBih,
        Group::GruBhh,
        Group::Bn2Gamma,
        Group::Bn2Beta,
        Group::W3,
        Group::B3,
        Group::Bn3Gamma,
        Group::Bn3Beta,
        Group::W4,
        Group::B4,
    ];

    pub fn len(self, d: &GruDims) -> usize {
        let (h, l, g) = (d.features, d.linear_hidden, d.gru_hidden);
        match self {
            Group::W1 => h * l,
            Group::B1 | Group::Bn1Gamma | Group::Bn1Beta => l,
            Group::GruWih => 3 * g * l,
            Group::GruWhh => 3 * g * g,
            Group::GruBih | Group::GruBhh => 3 * g,
            Group::Bn2Gamma | Group::Bn2Beta | Group::B3 | Group::Bn3Gamma | Group::Bn3Beta => g,
            Group::W3 => d.days * g,
            Group::W4 => g,
            Group::B4 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::W1 => "w1",
            Group::B1 => "b1",
            Group::Bn1Gamma => "bn1.gamma",
            Group::Bn1Beta => "bn1.beta",
            Group::GruWih => "gru.w_ih",
            Group::GruWhh => "gru.w_hh",
            Group::GruBih => "gru.b_ih",
            Group::GruBhh => "gru.b_hh",
            Group::Bn2Gamma => "bn2.gamma",
            Group::Bn2Beta => "bn2.beta",
            Group::W3 => "w3",
            Group::B3 => "b3",
            Group::Bn3Gamma => "bn3.gamma",
            Group::Bn3Beta => "bn3.beta",
            Group::W4 => "w4",
            Group::B4 => "b4",
        }
    }
}

fn split_groups<'a>(mut rest: &'a [f64], dims: &GruDims) -> [&'a [f64]; 16] {
    Group::ALL.map(|g| {
        let (head, tail) = rest.split_at(g.len(dims));
        rest = tail;
        head
    })
}

fn split_groups_mut<'a>(mut rest: &'a mut [f64], dims: &GruDims) -> [&'a mut [f64]; 16] {
    Group::ALL.map(|g| {
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(g.len(dims));
        rest = tail;
        head
    })
}

/// Forward-pass mode: batch statistics (train) or running statistics (eval).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruNetParams {
    pub dims: GruDims,
    /// Every trainable value, groups concatenated in [`Group::ALL`] order.
    pub values: Vec<f64>,
    /// Running batch-norm statistics: `mean1, var1 (L)`, `mean2, var2 (G)`, `mean3, var3 (G)`.
    pub running: Vec<f64>,
}

impl GruNetParams {
    pub fn param_count(dims: &GruDims) -> usize {
        Group::ALL.iter().map(|g| g.len(dims)).sum()
    }

    pub fn running_len(dims: &GruDims) -> usize {
        2 * dims.linear_hidden + 4 * dims.gru_hidden
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, unit BN scales, zero BN shifts.
    pub fn init(dims: GruDims, seed: u64) -> Result<Self> {
        if dims.days == 0 || dims.features == 0 || dims.linear_hidden == 0 || dims.gru_hidden == 0 {
            return Err(Error::config("network dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; Self::param_count(&dims)];
        {
            let groups = split_groups_mut(&mut values, &dims);
            for (group, slot) in Group::ALL.iter().zip(groups) {
                let bound = match group {
                    Group::W1 | Group::B1 => 1.0 / (dims.features as f64).sqrt(),
                    Group::GruWih | Group::GruWhh | Group::GruBih | Group::GruBhh => {
                        1.0 / (dims.gru_hidden as f64).sqrt()
                    }
                    Group::W3 | Group::B3 => 1.0 / (dims.days as f64).sqrt(),
                    Group::W4 | Group::B4 => 1.0 / (dims.gru_hidden as f64).sqrt(),
                    Group::Bn1Gamma | Group::Bn2Gamma | Group::Bn3Gamma => {
                        slot.fill(1.0);
                        continue;
                    }
                    Group::Bn1Beta | Group::Bn2Beta | Group::Bn3Beta => continue,
                };
                for v in slot.iter_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        let (l, g) = (dims.linear_hidden, dims.gru_hidden);
        let mut running = Vec::with_capacity(Self::running_len(&dims));
        for width in [l, g, g] {
            running.extend(std::iter::repeat_n(0.0, width));
            running.extend(std::iter::repeat_n(1.0, width));
        }
        Ok(Self {
            dims,
            values,
            running,
        })
    }

    pub fn group(&self, g: Group) -> &[f64] {
        split_groups(&self.values, &self.dims)[g as usize]
    }

    pub fn group_mut(&mut self, g: Group) -> &mut [f64] {
        let dims = self.dims;
        split_groups_mut(&mut self.values, &dims)[g as usize]
    }

    /// Offset of each group inside `values`.
    pub fn group_range(&self, g: Group) -> std::ops::Range<usize> {
        let start: usize = Group::ALL[..g as usize]
            .iter()
            .map(|x| x.len(&self.dims))
            .sum();
        start..start + g.len(&self.dims)
    }

    fn running_slices(&self) -> [&[f64]; 6] {
        let (l, g) = (self.dims.linear_hidden, self.dims.gru_hidden);
        let r = &self.running;
        [
            &r[..l],
            &r[l..2 * l],
            &r[2 * l..2 * l + g],
            &r[2 * l + g..2 * l + 2 * g],
            &r[2 * l + 2 * g..2 * l + 3 * g],
            &r[2 * l + 3 * g..],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .chain(&self.running)
            .all(|v| v.is_finite())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        let want = self.dims.days * self.dims.features;
        if input.len() != want {
            return Err(Error::shape(format!(
                "input has {} values, network expects D x H = {} x {}",
                input.len(),
                self.dims.days,
                self.dims.features
            )));
        }
        Ok(())
    }
}

struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Batch-statistics normalization of `rows x cols`; returns output, cache, mean and unbiased var.
fn bn_train(
    x: &[f64],
    cols: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, BnCache, Vec<f64>, Vec<f64>) {
    let rows = x.len() / cols;
    let mut mean = vec![0.0; cols];
    for row in x.chunks_exact(cols) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; cols];
    for row in x.chunks_exact(cols) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let unbiased: Vec<f64> = var
        .iter()
        .map(|s| if rows > 1 { s / (rows - 1) as f64 } else { 0.0 })
        .collect();
    var.iter_mut().for_each(|s| *s /= rows as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for (r, row) in x.chunks_exact(cols).enumerate() {
        for c in 0..cols {
            let xh = (row[c] - mean[c]) * inv_std[c];
            xhat[r * cols + c] = xh;
            y[r * cols + c] = gamma[c] * xh + beta[c];
        }
    }
    (y, BnCache { xhat, inv_std }, mean, unbiased)
}

fn bn_eval(
    x: &[f64],
    cols: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (r, row) in x.chunks_exact(cols).enumerate() {
        for c in 0..cols {
            y[r * cols + c] = gamma[c] * (row[c] - mean[c]) / (var[c] + BN_EPS).sqrt() + beta[c];
        }
    }
    y
}

/// Returns `dx`; accumulates into `dgamma`, `dbeta`.
fn bn_backward(
    dy: &[f64],
    cache: &BnCache,
    cols: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let rows = dy.len() / cols;
    let mut sum_dxhat = vec![0.0; cols];
    let mut sum_dxhat_xhat = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            dgamma[c] += dy[i] * cache.xhat[i];
            dbeta[c] += dy[i];
            let dxh = dy[i] * gamma[c];
            sum_dxhat[c] += dxh;
            sum_dxhat_xhat[c] += dxh * cache.xhat[i];
        }
    }
    let m = rows as f64;
    let mut dx = vec![0.0; dy.len()];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let dxh = dy[i] * gamma[c];
            dx[i] =
                cache.inv_std[c] / m * (m * dxh - sum_dxhat[c] - cache.xhat[i] * sum_dxhat_xhat[c]);
        }
    }
    dx
}

/// Intermediate values of a batched forward pass, kept for backprop.
pub struct ForwardCache {
    batch: usize,
    x0: Vec<f64>,
    y1: Vec<f64>,
    x1: Vec<f64>,
    bn1: Option<BnCache>,
    // GRU per (sample, step), each `B*D x G`.
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    ghn: Vec<f64>,
    h: Vec<f64>,
    bn2: Option<BnCache>,
    x2: Vec<f64>,
    bn3: Option<BnCache>,
    t3: Vec<f64>,
    a: Vec<f64>,
    x3_last: Vec<f64>,
    pub output: Vec<f64>,
    batch_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Batched forward pass. `inputs` are concatenated `D x H` windows.
pub fn forward_batch(params: &GruNetParams, inputs: &[f64], mode: Mode) -> Result<ForwardCache> {
    let d = &params.dims;
    let (days, feat, lh, gh) = (d.days, d.features, d.linear_hidden, d.gru_hidden);
    let per = days * feat;
    if inputs.is_empty() || inputs.len() % per != 0 {
        return Err(Error::shape(format!(
            "batch of {} values is not a whole number of {days} x {feat} windows",
            inputs.len()
        )));
    }
    let batch = inputs.len() / per;
    let p = split_groups(&params.values, d);
    let run = params.running_slices();
    let rows = batch * days;
    let mut batch_stats = Vec::new();

    // 1. Linear + BN + ReLU.
    let mut z1 = vec![0.0; rows * lh];
    for row in z1.chunks_exact_mut(lh) {
        row.copy_from_slice(p[Group::B1 as usize]);
    }
    gemm_acc(inputs, p[Group::W1 as usize], &mut z1, rows, feat, lh);
    let (y1, bn1) = match mode {
        Mode::Train => {
            let (y, c, m, v) = bn_train(
                &z1,
                lh,
                p[Group::Bn1Gamma as usize],
                p[Group::Bn1Beta as usize],
            );
            batch_stats.push((m, v));
            (y, Some(c))
        }
        Mode::Eval => (
            bn_eval(
                &z1,
                lh,
                p[Group::Bn1Gamma as usize],
                p[Group::Bn1Beta as usize],
                run[0],
                run[1],
            ),
            None,
        ),
    };
    let x1: Vec<f64> = y1.iter().map(|v| v.max(0.0)).collect();

    // 2. GRU over the time axis, then BN.
    let (wih, whh, bih, bhh) = (
        p[Group::GruWih as usize],
        p[Group::GruWhh as usize],
        p[Group::GruBih as usize],
        p[Group::GruBhh as usize],
    );
    let mut r = vec![0.0; rows * gh];
    let mut z = vec![0.0; rows * gh];
    let mut n = vec![0.0; rows * gh];
    let mut ghn = vec![0.0; rows * gh];
    let mut h = vec![0.0; rows * gh];
    let mut gi = vec![0.0; 3 * gh];
    let mut gg = vec![0.0; 3 * gh];
    let zero = vec![0.0; gh];
    for b in 0..batch {
        for t in 0..days {
            let idx = b * days + t;
            matvec(wih, &x1[idx * lh..(idx + 1) * lh], bih, &mut gi);
            {
                let h_prev = if t == 0 {
                    &zero[..]
                } else {
                    &h[(idx - 1) * gh..idx * gh]
                };
                matvec(whh, h_prev, bhh, &mut gg);
            }
            for j in 0..gh {
                let k = idx * gh + j;
                let rj = sigmoid(gi[j] + gg[j]);
                let zj = sigmoid(gi[gh + j] + gg[gh + j]);
                let nj = (gi[2 * gh + j] + rj * gg[2 * gh + j]).tanh();
                let hp = if t == 0 { 0.0 } else { h[k - gh] };
                r[k] = rj;
                z[k] = zj;
                n[k] = nj;
                ghn[k] = gg[2 * gh + j];
                h[k] = (1.0 - zj) * nj + zj * hp;
            }
        }
    }
    let (x2, bn2) = match mode {
        Mode::Train => {
            let (y, c, m, v) = bn_train(
                &h,
                gh,
                p[Group::Bn2Gamma as usize],
                p[Group::Bn2Beta as usize],
            );
            batch_stats.push((m, v));
            (y, Some(c))
        }
        Mode::Eval => (
            bn_eval(
                &h,
                gh,
                p[Group::Bn2Gamma as usize],
                p[Group::Bn2Beta as usize],
                run[2],
                run[3],
            ),
            None,
        ),
    };

    // 3. Weighing matrix A = softmax(tanh(BN(X2^T W3 + b3))), one G x G block per sample.
    let mut s = vec![0.0; batch * gh * gh];
    for b in 0..batch {
        let block = &mut s[b * gh * gh..(b + 1) * gh * gh];
        for row in block.chunks_exact_mut(gh) {
            row.copy_from_slice(p[Group::B3 as usize]);
        }
        gemm_tn_acc(
            &x2[b * days * gh..(b + 1) * days * gh],
            p[Group::W3 as usize],
            block,
            days,
            gh,
            gh,
        );
    }
    let (u, bn3) = match mode {
        Mode::Train => {
            let (y, c, m, v) = bn_train(
                &s,
                gh,
                p[Group::Bn3Gamma as usize],
                p[Group::Bn3Beta as usize],
            );
            batch_stats.push((m, v));
            (y, Some(c))
        }
        Mode::Eval => (
            bn_eval(
                &s,
                gh,
                p[Group::Bn3Gamma as usize],
                p[Group::Bn3Beta as usize],
                run[4],
                run[5],
            ),
            None,
        ),
    };
    let t3: Vec<f64> = u.iter().map(|v| v.tanh()).collect();
    let mut a = t3.clone();
    for row in a.chunks_exact_mut(gh) {
        crate::linalg::softmax_in_place(row);
    }

    // 4-5. X3 = X2 A and the final linear layer, read at the last time step.
    let w4 = p[Group::W4 as usize];
    let b4 = p[Group::B4 as usize][0];
    let mut x3_last = vec![0.0; batch * gh];
    let mut output = Vec::with_capacity(batch);
    for b in 0..batch {
        let last = &x2[(b * days + days - 1) * gh..(b * days + days) * gh];
        let out = &mut x3_last[b * gh..(b + 1) * gh];
        gemm_acc(last, &a[b * gh * gh..(b + 1) * gh * gh], out, 1, gh, gh);
        output.push(b4 + crate::linalg::dot(out, w4));
    }

    Ok(ForwardCache {
        batch,
        x0: inputs.to_vec(),
        y1,
        x1,
        bn1,
        r,
        z,
        n,
        ghn,
        h,
        bn2,
        x2,
        bn3,
        t3,
        a,
        x3_last,
        output,
        batch_stats,
    })
}

/// Gradient of `sum_b d_out[b] * y_b` with respect to every trainable value.
/// The cache must come from a train-mode pass.
pub fn backward(params: &GruNetParams, cache: &ForwardCache, d_out: &[f64]) -> Result<Vec<f64>> {
    let (bn1, bn2, bn3) = match (&cache.bn1, &cache.bn2, &cache.bn3) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::Contract(
                "backward needs a train-mode forward cache".into(),
            ))
        }
    };
    if d_out.len() != cache.batch {
        return Err(Error::shape("output gradient length must equal batch size"));
    }
    let dims = params.dims;
    let (days, feat, lh, gh) = (
        dims.days,
        dims.features,
        dims.linear_hidden,
        dims.gru_hidden,
    );
    let batch = cache.batch;
    let rows = batch * days;
    let p = split_groups(&params.values, &dims);
    let mut grad = vec![0.0; params.values.len()];
    let mut g = split_groups_mut(&mut grad, &dims);

    // 5. Final layer.
    let w4 = p[Group::W4 as usize];
    let mut dx3 = vec![0.0; batch * gh];
    for b in 0..batch {
        let dy = d_out[b];
        g[Group::B4 as usize][0] += dy;
        for j in 0..gh {
            g[Group::W4 as usize][j] += cache.x3_last[b * gh + j] * dy;
            dx3[b * gh + j] = w4[j] * dy;
        }
    }

    // 4. X3_last = x2_last A.
    let mut dx2 = vec![0.0; rows * gh];
    let mut da = vec![0.0; batch * gh * gh];
    for b in 0..batch {
        let last_row = b * days + days - 1;
        let x2l = &cache.x2[last_row * gh..(last_row + 1) * gh];
        let ab = &cache.a[b * gh * gh..(b + 1) * gh * gh];
        let dxb = &dx3[b * gh..(b + 1) * gh];
        for i in 0..gh {
            let mut acc = 0.0;
            for j in 0..gh {
                da[b * gh * gh + i * gh + j] = x2l[i] * dxb[j];
                acc += ab[i * gh + j] * dxb[j];
            }
            dx2[last_row * gh + i] += acc;
        }
    }

    // 3. Softmax rows, tanh, BN3, then S = X2^T W3 + b3.
    let mut du = vec![0.0; da.len()];
    for ((dur, dar), (ar, tr)) in du
        .chunks_exact_mut(gh)
        .zip(da.chunks_exact(gh))
        .zip(cache.a.chunks_exact(gh).zip(cache.t3.chunks_exact(gh)))
    {
        let inner: f64 = ar.iter().zip(dar).map(|(x, y)| x * y).sum();
        for j in 0..gh {
            let dt = ar[j] * (dar[j] - inner);
            dur[j] = dt * (1.0 - tr[j] * tr[j]);
        }
    }
    let ds = {
        let (lo, hi) = g.split_at_mut(Group::Bn3Beta as usize);
        bn_backward(
            &du,
            bn3,
            gh,
            p[Group::Bn3Gamma as usize],
            lo[Group::Bn3Gamma as usize],
            hi[0],
        )
    };
    let w3 = p[Group::W3 as usize];
    for b in 0..batch {
        let x2b = &cache.x2[b * days * gh..(b + 1) * days * gh];
        let dsb = &ds[b * gh * gh..(b + 1) * gh * gh];
        for row in dsb.chunks_exact(gh) {
            for (acc, v) in g[Group::B3 as usize].iter_mut().zip(row) {
                *acc += v;
            }
        }
        // dW3[t][j] += sum_i X2[t][i] dS[i][j]
        gemm_acc(x2b, dsb, g[Group::W3 as usize], days, gh, gh);
        // dX2[t][i] += sum_j W3[t][j] dS[i][j]
        crate::linalg::gemm_nt_acc(
            w3,
            dsb,
            &mut dx2[b * days * gh..(b + 1) * days * gh],
            days,
            gh,
            gh,
        );
    }

    // 2. BN2 and GRU backprop through time.
    let dh_out = {
        let (lo, hi) = g.split_at_mut(Group::Bn2Beta as usize);
        bn_backward(
            &dx2,
            bn2,
            gh,
            p[Group::Bn2Gamma as usize],
            lo[Group::Bn2Gamma as usize],
            hi[0],
        )
    };
    let (wih, whh) = (p[Group::GruWih as usize], p[Group::GruWhh as usize]);
    let mut dx1 = vec![0.0; rows * lh];
    let mut dgi = vec![0.0; 3 * gh];
    let mut dgh = vec![0.0; 3 * gh];
    let mut dh = vec![0.0; gh];
    let zero = vec![0.0; gh];
    for b in 0..batch {
        dh.fill(0.0);
        for t in (0..days).rev() {
            let idx = b * days + t;
            let h_prev = if t == 0 {
                &zero[..]
            } else {
                &cache.h[(idx - 1) * gh..idx * gh]
            };
            for j in 0..gh {
                let k = idx * gh + j;
                let dhj = dh[j] + dh_out[k];
                let (rj, zj, nj) = (cache.r[k], cache.z[k], cache.n[k]);
                let dn = dhj * (1.0 - zj);
                let dz = dhj * (h_prev[j] - nj);
                let dan = dn * (1.0 - nj * nj);
                let dr = dan * cache.ghn[k];
                let dar = dr * rj * (1.0 - rj);
                let daz = dz * zj * (1.0 - zj);
                dgi[j] = dar;
                dgi[gh + j] = daz;
                dgi[2 * gh + j] = dan;
                dgh[j] = dar;
                dgh[gh + j] = daz;
                dgh[2 * gh + j] = dan * rj;
                dh[j] = dhj * zj;
            }
            let x_t = &cache.x1[idx * lh..(idx + 1) * lh];
            outer_acc(g[Group::GruWih as usize], &dgi, x_t);
            outer_acc(g[Group::GruWhh as usize], &dgh, h_prev);
            for (acc, v) in g[Group::GruBih as usize].iter_mut().zip(&dgi) {
                *acc += v;
            }
            for (acc, v) in g[Group::GruBhh as usize].iter_mut().zip(&dgh) {
                *acc += v;
            }
            matvec_t_acc(wih, &dgi, &mut dx1[idx * lh..(idx + 1) * lh]);
            matvec_t_acc(whh, &dgh, &mut dh);
        }
    }

    // 1. ReLU, BN1, input linear layer.
    for (d, y) in dx1.iter_mut().zip(&cache.y1) {
        if *y <= 0.0 {
            *d = 0.0;
        }
    }
    let dz1 = {
        let (lo, hi) = g.split_at_mut(Group::Bn1Beta as usize);
        bn_backward(
            &dx1,
            bn1,
            lh,
            p[Group::Bn1Gamma as usize],
            lo[Group::Bn1Gamma as usize],
            hi[0],
        )
    };
    for row in dz1.chunks_exact(lh) {
        for (acc, v) in g[Group::B1 as usize].iter_mut().zip(row) {
            *acc += v;
        }
    }
    gemm_tn_acc(&cache.x0, &dz1, g[Group::W1 as usize], rows, feat, lh);
    Ok(grad)
}

/// Folds the batch statistics of a train-mode pass into the running statistics.
pub fn update_running_stats(params: &mut GruNetParams, cache: &ForwardCache) {
    let (l, g) = (params.dims.linear_hidden, params.dims.gru_hidden);
    let offsets = [0, 2 * l, 2 * l + 2 * g];
    let widths = [l, g, g];
    for (site, (mean, var)) in cache.batch_stats.iter().enumerate() {
        let (o, w) = (offsets[site], widths[site]);
        for c in 0..w {
            let rm = &mut params.running[o + c];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[c];
            let rv = &mut params.running[o + w + c];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[c];
        }
    }
}

/// Prediction for a single normalized `D x H` window.
pub fn forward(params: &GruNetParams, input: &[f64], mode: Mode) -> Result<f64> {
    params.check_input(input)?;
    Ok(forward_batch(params, input, mode)?.output[0])
}

/// Mean squared error of a batch and its gradient (train mode).
pub fn mse_loss_and_grad(
    params: &GruNetParams,
    inputs: &[f64],
    labels: &[f64],
) -> Result<(f64, Vec<f64>, ForwardCache)> {
    let cache = forward_batch(params, inputs, Mode::Train)?;
    if labels.len() != cache.batch {
        return Err(Error::shape("one label per window required"));
    }
    let b = cache.batch as f64;
    let mut loss = 0.0;
    let mut d_out = Vec::with_capacity(cache.batch);
    for (y, t) in cache.output.iter().zip(labels) {
        let e = y - t;
        loss += e * e / b;
        d_out.push(2.0 * e / b);
    }
    let grad = backward(params, &cache, &d_out)?;
    Ok((loss, grad, cache))
}
