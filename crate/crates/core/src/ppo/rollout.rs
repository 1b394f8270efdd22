use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::policy::{policy_forward, PolicyParams};
use super::PpoHyper;
use crate::env::{normalize_action, EnvState, TradingEnv};
use crate::error::{Error, Result};

/// Transitions of one rollout and their GAE targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBuffer {
    pub states: Vec<Vec<f64>>,
    /// Raw (pre-softmax) Gaussian samples.
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Episode ended after this transition.
    pub dones: Vec<bool>,
    /// Value of the state following the last transition.
    pub last_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TrajectoryBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let (adv, ret) = compute_gae(
            &self.rewards,
            &self.values,
            &self.dones,
            self.last_value,
            gamma,
            lambda,
        );
        self.advantages = adv;
        self.returns = ret;
    }
}

/// Generalized advantage estimates and returns (`advantage + value`).
///
/// `delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t` and
/// `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_value * cont - values[t];
        next_adv = delta + gamma * lambda * cont * next_adv;
        adv[t] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Feeds training episodes drawn from several environments (one per stream).
pub struct EpisodeSampler {
    envs: Vec<TradingEnv>,
    current: usize,
    state: EnvState,
}

impl EpisodeSampler {
    pub fn new(mut envs: Vec<TradingEnv>, rng: &mut ChaCha8Rng) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::config("no training episodes"));
        }
        let state = envs[0].reset();
        let mut s = Self {
            envs,
            current: 0,
            state,
        };
        s.next_episode(rng);
        Ok(s)
    }

    /// Picks a stream uniformly at random and resets it.
    fn next_episode(&mut self, rng: &mut ChaCha8Rng) {
        self.current = rng.random_range(0..self.envs.len());
        let env = &mut self.envs[self.current];
        let start = if env.config().random_start {
            rng.random_range(0..env.n_days())
        } else {
            0
        };
        self.state = env.reset_at(start);
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn state_dim(&self) -> usize {
        self.envs[0].state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.envs[0].action_dim()
    }
}

/// Collects exactly `hyper.horizon` transitions and computes their advantages.
pub fn collect_rollout(
    sampler: &mut EpisodeSampler,
    params: &PolicyParams,
    hyper: &PpoHyper,
    rng: &mut ChaCha8Rng,
) -> Result<TrajectoryBuffer> {
    let mut buf = TrajectoryBuffer::default();
    for _ in 0..hyper.horizon {
        let state = sampler.state.0.clone();
        let out = policy_forward(params, &state)?;
        let raw = out.sample(rng);
        let log_prob = out.log_prob(&raw);
        let env = &mut sampler.envs[sampler.current];
        let action = normalize_action(&raw, env.config().simplex)?;
        let step = env.step(&action)?;
        buf.states.push(state);
        buf.actions.push(raw);
        buf.log_probs.push(log_prob);
        buf.rewards.push(step.reward);
        buf.values.push(out.value);
        buf.dones.push(step.done);
        if step.done {
            sampler.next_episode(rng);
        } else {
            sampler.state = step.state;
        }
    }
    buf.last_value = if buf.dones.last().copied().unwrap_or(true) {
        0.0
    } else {
        policy_forward(params, &sampler.state.0)?.value
    };
    buf.compute_advantages(hyper.gamma, hyper.gae_lambda);
    Ok(buf)
}
