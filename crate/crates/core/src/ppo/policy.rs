use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Kind};
use crate::error::{Error, Result};

/// Actor and critic trunk shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub depth: usize,
    pub width: usize,
    /// Initial state-independent log standard deviation of the action noise.
    pub init_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            depth: 1,
            width: 64,
            init_log_std: 0.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.depth) {
            return Err(Error::config(format!(
                "policy depth must be 1..=3, got {}",
                self.depth
            )));
        }
        if !(12..=127).contains(&self.width) {
            return Err(Error::config(format!(
                "policy width must be 12..=127, got {}",
                self.width
            )));
        }
        if !self.init_log_std.is_finite() {
            return Err(Error::config("init_log_std must be finite"));
        }
        Ok(())
    }
}

/// Layer widths from input to output.
pub(crate) fn layer_sizes(input: usize, width: usize, depth: usize, output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(std::iter::repeat_n(width, depth));
    s.push(output);
    s
}

pub(crate) fn mlp_len(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Activations of every layer: input, tanh hidden layers, linear output.
pub(crate) fn mlp_forward(p: &[f64], sizes: &[usize], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = vec![x.to_vec()];
    let mut off = 0;
    let last = sizes.len() - 2;
    for (l, w) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &p[off..off + n_in * n_out];
        let bias = &p[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let mut y = vec![0.0; n_out];
        crate::linalg::matvec(weights, &acts[l], bias, &mut y);
        if l < last {
            y.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(y);
    }
    acts
}

/// Accumulates the gradient of `d_out . output` into `grad`.
pub(crate) fn mlp_backward(
    p: &[f64],
    sizes: &[usize],
    acts: &[Vec<f64>],
    d_out: &[f64],
    grad: &mut [f64],
) {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut off = 0;
    for w in sizes.windows(2) {
        offsets.push(off);
        off += w[0] * w[1] + w[1];
    }
    let mut delta = d_out.to_vec();
    for l in (0..sizes.len() - 1).rev() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let o = offsets[l];
        crate::linalg::outer_acc(&mut grad[o..o + n_in * n_out], &delta, &acts[l]);
        for (g, d) in grad[o + n_in * n_out..o + n_in * n_out + n_out]
            .iter_mut()
            .zip(&delta)
        {
            *g += d;
        }
        if l > 0 {
            let mut prev = vec![0.0; n_in];
            crate::linalg::matvec_t_acc(&p[o..o + n_in * n_out], &delta, &mut prev);
            for (d, a) in prev.iter_mut().zip(&acts[l]) {
                *d *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
}

/// Separate actor and critic MLPs plus a state-independent log-std vector.
///
/// `values` holds the actor parameters, then the critic, then `log_std`. Each
/// layer stores its `out x in` weight matrix row-major followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub state_dim: usize,
    pub action_dim: usize,
    pub depth: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Diagonal Gaussian over raw logits plus a value estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
}

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

impl PolicyOutput {
    pub fn log_prob(&self, action: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(action)
            .map(|((m, ls), a)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * LOG_2PI
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| 0.5 + 0.5 * LOG_2PI + ls).sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect()
    }
}

impl PolicyParams {
    pub fn actor_sizes(&self) -> Vec<usize> {
        layer_sizes(self.state_dim, self.width, self.depth, self.action_dim)
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        layer_sizes(self.state_dim, self.width, self.depth, 1)
    }

    pub fn actor_range(&self) -> std::ops::Range<usize> {
        0..mlp_len(&self.actor_sizes())
    }

    pub fn critic_range(&self) -> std::ops::Range<usize> {
        let a = mlp_len(&self.actor_sizes());
        a..a + mlp_len(&self.critic_sizes())
    }

    pub fn log_std_range(&self) -> std::ops::Range<usize> {
        let c = self.critic_range().end;
        c..c + self.action_dim
    }

    fn total_len(state_dim: usize, action_dim: usize, cfg: &PolicyConfig) -> usize {
        mlp_len(&layer_sizes(state_dim, cfg.width, cfg.depth, action_dim))
            + mlp_len(&layer_sizes(state_dim, cfg.width, cfg.depth, 1))
            + action_dim
    }

    /// All-zero weights and biases; `log_std` set to the configured value.
    pub fn zeros(state_dim: usize, action_dim: usize, cfg: &PolicyConfig) -> Result<Self> {
        cfg.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::config(
                "policy state and action sizes must be positive",
            ));
        }
        let mut p = Self {
            state_dim,
            action_dim,
            depth: cfg.depth,
            width: cfg.width,
            values: vec![0.0; Self::total_len(state_dim, action_dim, cfg)],
        };
        let r = p.log_std_range();
        p.values[r].fill(cfg.init_log_std);
        Ok(p)
    }

    /// Uniform `1/sqrt(fan_in)` weights, zero biases; the actor's output layer is scaled by 0.01.
    pub fn init(
        state_dim: usize,
        action_dim: usize,
        cfg: &PolicyConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut p = Self::zeros(state_dim, action_dim, cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (base, sizes, out_gain) in [
            (p.actor_range().start, p.actor_sizes(), 0.01),
            (p.critic_range().start, p.critic_sizes(), 1.0),
        ] {
            let mut off = base;
            let n_layers = sizes.len() - 1;
            for (l, w) in sizes.windows(2).enumerate() {
                let bound =
                    1.0 / (w[0] as f64).sqrt() * if l + 1 == n_layers { out_gain } else { 1.0 };
                for v in &mut p.values[off..off + w[0] * w[1]] {
                    *v = rng.random_range(-bound..=bound);
                }
                off += w[0] * w[1] + w[1];
            }
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let meta = serde_json::json!({
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "depth": self.depth,
            "width": self.width,
            "seed": seed,
        });
        let mut ck = Checkpoint::new(Kind::Policy, meta);
        ck.push("actor", &self.values[self.actor_range()]);
        ck.push("critic", &self.values[self.critic_range()]);
        ck.push("log_std", &self.values[self.log_std_range()]);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != Kind::Policy {
            return Err(Error::Checkpoint("not a policy checkpoint".into()));
        }
        let field = |k: &str| {
            ck.meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("missing '{k}'")))
        };
        let cfg = PolicyConfig {
            depth: field("depth")?,
            width: field("width")?,
            init_log_std: 0.0,
        };
        let mut p = Self::zeros(field("state_dim")?, field("action_dim")?, &cfg)?;
        for (name, range) in [
            ("actor", p.actor_range()),
            ("critic", p.critic_range()),
            ("log_std", p.log_std_range()),
        ] {
            let arr = ck.array(name)?;
            if arr.len() != range.len() {
                return Err(Error::Checkpoint(format!(
                    "array '{name}' has wrong length"
                )));
            }
            p.values[range].copy_from_slice(arr);
        }
        Ok(p)
    }
}

/// Actor distribution and critic value for one state.
pub fn policy_forward(params: &PolicyParams, state: &[f64]) -> Result<PolicyOutput> {
    if state.len() != params.state_dim {
        return Err(Error::shape(format!(
            "state has {} entries, policy expects {}",
            state.len(),
            params.state_dim
        )));
    }
    let actor = mlp_forward(
        &params.values[params.actor_range()],
        &params.actor_sizes(),
        state,
    );
    let critic = mlp_forward(
        &params.values[params.critic_range()],
        &params.critic_sizes(),
        state,
    );
    Ok(PolicyOutput {
        mean: actor.last().unwrap().clone(),
        log_std: params.values[params.log_std_range()].to_vec(),
        value: critic.last().unwrap()[0],
    })
}
