//! Proximal policy optimization of a shallow actor-critic over the trading
//! environment.
//!
//! The actor outputs the mean of a diagonal Gaussian over raw allocation
//! logits. Its log standard deviation is a learned vector that does not depend
//! on the state. Sampled logits are mapped onto the simplex by the
//! environment's simplex map, and log-probabilities are taken on the raw
//! sample. Evaluation uses the Gaussian mean unless stochastic evaluation is
//! requested.

mod policy;
mod rollout;
mod update;

pub use policy::{policy_forward, PolicyConfig, PolicyOutput, PolicyParams};
pub use rollout::{collect_rollout, compute_gae, EpisodeSampler, TrajectoryBuffer};
pub use update::{
    clipped_surrogate, ppo_loss, ppo_update, surrogate_grad, surrogate_loss, LossParts, Minibatch,
    UpdateStats,
};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{normalize_action, EnvConfig, TradingEnv};
use crate::error::{Error, Result};
use crate::eval::{generalization_ratio, sharpe, EvalRecord, EvalSeries};
use crate::optim::Adam;
use crate::predictor::SignalPanel;
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoHyper {
    pub learning_rate: f64,
    pub ent_coef: f64,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Transitions per rollout.
    pub horizon: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub total_timesteps: u64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    /// Evaluate after every `eval_every` updates.
    pub eval_every: usize,
    pub stochastic_eval: bool,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            ent_coef: 0.0,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            horizon: 2048,
            minibatch: 64,
            epochs: 10,
            total_timesteps: 2_500_000,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantage: true,
            eval_every: 1,
            stochastic_eval: false,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.ent_coef >= 0.0
            && self.clip > 0.0
            && self.clip < 1.0
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && (0.0..=1.0).contains(&self.gae_lambda)
            && self.horizon > 0
            && self.minibatch > 0
            && self.epochs > 0
            && self.vf_coef >= 0.0
            && self.max_grad_norm > 0.0
            && self.eval_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "invalid PPO hyperparameters: {self:?}"
            )))
        }
    }
}

/// Signal panels the agent trains and is evaluated on.
#[derive(Debug, Clone)]
pub struct AgentData {
    /// One episode stream per panel.
    pub train: Vec<Arc<SignalPanel>>,
    pub validation: Arc<SignalPanel>,
    pub test: Arc<SignalPanel>,
}

#[derive(Debug, Clone)]
pub struct AgentOutcome {
    pub params: PolicyParams,
    pub series: EvalSeries,
    pub updates: Vec<UpdateStats>,
    pub timesteps: u64,
}

/// Runs one episode over `env` and returns the raw per-step wealth changes.
pub fn evaluate_policy(
    params: &PolicyParams,
    env: &mut TradingEnv,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>> {
    let mut state = env.reset();
    let mut rng = rng;
    loop {
        let out = policy_forward(params, &state.0)?;
        let raw = match rng.as_deref_mut() {
            Some(r) => out.sample(r),
            None => out.mean,
        };
        let action = normalize_action(&raw, env.config().simplex)?;
        let step = env.step(&action)?;
        if step.done {
            break;
        }
        state = step.state;
    }
    Ok(env.ledger().returns.clone())
}

fn episode_config(env: &EnvConfig) -> EnvConfig {
    EnvConfig {
        start: None,
        end: None,
        ..env.clone()
    }
}

struct Evaluator {
    train: Vec<TradingEnv>,
    validation: TradingEnv,
    test: TradingEnv,
    rng: Option<ChaCha8Rng>,
}

impl Evaluator {
    fn run(&mut self, params: &PolicyParams, timestep: u64) -> Result<EvalRecord> {
        let mut train_returns = Vec::new();
        for env in &mut self.train {
            train_returns.extend(evaluate_policy(params, env, self.rng.as_mut())?);
        }
        let val = evaluate_policy(params, &mut self.validation, self.rng.as_mut())?;
        let test = evaluate_policy(params, &mut self.test, self.rng.as_mut())?;
        let (tr, va, te) = (sharpe(&train_returns), sharpe(&val), sharpe(&test));
        Ok(EvalRecord {
            timestep,
            train_sharpe: tr,
            val_sharpe: va,
            test_sharpe: te,
            gen_ratio: generalization_ratio(te, tr),
        })
    }
}

/// Alternates rollouts and updates for `total_timesteps / horizon` updates,
/// evaluating on the train, validation and test panels on schedule.
///
/// Episode boundaries come from the panels themselves; the `start`/`end`
/// fields of `env` are ignored here.
pub fn train_agent(
    data: &AgentData,
    env: &EnvConfig,
    policy: &PolicyConfig,
    hyper: &PpoHyper,
    seed: u64,
) -> Result<AgentOutcome> {
    hyper.validate()?;
    let cfg = episode_config(env);
    let make = |p: &Arc<SignalPanel>| TradingEnv::new(Arc::clone(p), cfg.clone());
    let train_envs = data.train.iter().map(make).collect::<Result<Vec<_>>>()?;
    if train_envs.is_empty() {
        return Err(Error::config("agent needs at least one training stream"));
    }
    let n = data.train[0].n_stocks();
    if data
        .train
        .iter()
        .chain([&data.validation, &data.test])
        .any(|p| p.n_stocks() != n)
    {
        return Err(Error::shape("all agent panels must have the same stocks"));
    }
    let eval_cfg = EnvConfig {
        random_start: false,
        ..cfg.clone()
    };
    let eval_make = |p: &Arc<SignalPanel>| TradingEnv::new(Arc::clone(p), eval_cfg.clone());
    let mut evaluator = Evaluator {
        train: data
            .train
            .iter()
            .map(eval_make)
            .collect::<Result<Vec<_>>>()?,
        validation: eval_make(&data.validation)?,
        test: eval_make(&data.test)?,
        rng: hyper
            .stochastic_eval
            .then(|| ChaCha8Rng::seed_from_u64(derive_seed(seed, 2))),
    };

    let state_dim = train_envs[0].state_dim();
    let action_dim = train_envs[0].action_dim();
    let mut params = PolicyParams::init(state_dim, action_dim, policy, derive_seed(seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut sampler = EpisodeSampler::new(train_envs, &mut rng)?;
    let mut adam = Adam::new(params.values.len(), hyper.learning_rate);
    let n_updates = hyper.total_timesteps / hyper.horizon as u64;
    let mut series = EvalSeries::default();
    let mut updates = Vec::with_capacity(n_updates as usize);
    let mut timesteps = 0;
    for u in 0..n_updates {
        let buffer = collect_rollout(&mut sampler, &params, hyper, &mut rng)?;
        timesteps += buffer.len() as u64;
        updates.push(ppo_update(
            &buffer,
            &mut params,
            &mut adam,
            hyper,
            &mut rng,
        )?);
        if (u as usize + 1) % hyper.eval_every == 0 {
            let record = evaluator.run(&params, timesteps)?;
            log::debug!(
                "t={timesteps} train={:.3} val={:.3} test={:.3}",
                record.train_sharpe,
                record.val_sharpe,
                record.test_sharpe
            );
            series.push(record);
        }
    }
    Ok(AgentOutcome {
        params,
        series,
        updates,
        timesteps,
    })
}
