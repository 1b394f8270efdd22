use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{mlp_backward, mlp_forward, PolicyParams};
use super::rollout::TrajectoryBuffer;
use super::PpoHyper;
use crate::error::{Error, Result};
use crate::optim::{clip_grad_norm, Adam};

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Samples entering one loss evaluation.
#[derive(Debug, Clone, Default)]
pub struct Minibatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Loss components of one minibatch; `total = policy + vf * value - ent * entropy`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Full PPO loss and its gradient with respect to `params.values`.
pub fn ppo_loss(
    params: &PolicyParams,
    mb: &Minibatch,
    clip: f64,
    ent_coef: f64,
    vf_coef: f64,
) -> Result<(LossParts, Vec<f64>)> {
    if mb.is_empty() {
        return Err(Error::shape("empty minibatch"));
    }
    let b = mb.len() as f64;
    let actor_sizes = params.actor_sizes();
    let critic_sizes = params.critic_sizes();
    let (ar, cr, lr) = (
        params.actor_range(),
        params.critic_range(),
        params.log_std_range(),
    );
    let log_std = &params.values[lr.clone()];
    let entropy: f64 = log_std
        .iter()
        .map(|ls| 0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln() + ls)
        .sum();
    let mut grad = vec![0.0; params.values.len()];
    let mut parts = LossParts {
        entropy,
        ..Default::default()
    };
    for i in 0..mb.len() {
        let state = &mb.states[i];
        if state.len() != params.state_dim || mb.actions[i].len() != params.action_dim {
            return Err(Error::shape(
                "minibatch sample does not match policy dimensions",
            ));
        }
        let actor = mlp_forward(&params.values[ar.clone()], &actor_sizes, state);
        let mean = actor.last().unwrap();
        let mut log_prob = 0.0;
        let mut z = vec![0.0; params.action_dim];
        for k in 0..params.action_dim {
            let s = log_std[k].exp();
            z[k] = (mb.actions[i][k] - mean[k]) / s;
            log_prob += -0.5 * z[k] * z[k] - log_std[k] - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        let ratio = (log_prob - mb.old_log_probs[i]).exp();
        let adv = mb.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
        parts.policy -= unclipped.min(clipped) / b;
        parts.approx_kl += ((ratio - 1.0) - (log_prob - mb.old_log_probs[i])) / b;
        if (ratio - 1.0).abs() > clip {
            parts.clip_fraction += 1.0 / b;
        }
        // d(policy loss)/d(log prob); zero where the clipped branch is active.
        let dlogp = if unclipped <= clipped {
            -adv * ratio / b
        } else {
            0.0
        };
        if dlogp != 0.0 {
            let d_mean: Vec<f64> = (0..params.action_dim)
                .map(|k| dlogp * z[k] / log_std[k].exp())
                .collect();
            mlp_backward(
                &params.values[ar.clone()],
                &actor_sizes,
                &actor,
                &d_mean,
                &mut grad[ar.clone()],
            );
            for k in 0..params.action_dim {
                grad[lr.start + k] += dlogp * (z[k] * z[k] - 1.0);
            }
        }
        if vf_coef != 0.0 {
            let critic = mlp_forward(&params.values[cr.clone()], &critic_sizes, state);
            let v = critic.last().unwrap()[0];
            let e = v - mb.returns[i];
            parts.value += e * e / b;
            mlp_backward(
                &params.values[cr.clone()],
                &critic_sizes,
                &critic,
                &[vf_coef * 2.0 * e / b],
                &mut grad[cr.clone()],
            );
        }
    }
    for k in 0..params.action_dim {
        grad[lr.start + k] -= ent_coef;
    }
    parts.total = parts.policy + vf_coef * parts.value - ent_coef * parts.entropy;
    Ok((parts, grad))
}

/// Negative mean clipped surrogate (the policy term alone).
pub fn surrogate_loss(params: &PolicyParams, mb: &Minibatch, clip: f64) -> Result<f64> {
    Ok(ppo_loss(params, mb, clip, 0.0, 0.0)?.0.policy)
}

/// Gradient of [`surrogate_loss`]; zero outside the actor and log-std entries.
pub fn surrogate_grad(params: &PolicyParams, mb: &Minibatch, clip: f64) -> Result<Vec<f64>> {
    Ok(ppo_loss(params, mb, clip, 0.0, 0.0)?.1)
}

/// Averages of the minibatch losses over one update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

fn normalize(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    adv.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));
}

/// Several epochs of shuffled minibatch Adam steps on the clipped objective.
pub fn ppo_update(
    buffer: &TrajectoryBuffer,
    params: &mut PolicyParams,
    adam: &mut Adam,
    hyper: &PpoHyper,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if buffer.advantages.len() != buffer.len() {
        return Err(Error::Contract(
            "advantages must be computed before updating".into(),
        ));
    }
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hyper.minibatch) {
            let mut mb = Minibatch {
                states: chunk.iter().map(|&i| buffer.states[i].clone()).collect(),
                actions: chunk.iter().map(|&i| buffer.actions[i].clone()).collect(),
                old_log_probs: chunk.iter().map(|&i| buffer.log_probs[i]).collect(),
                advantages: chunk.iter().map(|&i| buffer.advantages[i]).collect(),
                returns: chunk.iter().map(|&i| buffer.returns[i]).collect(),
            };
            if hyper.normalize_advantage {
                normalize(&mut mb.advantages);
            }
            let (parts, mut grad) =
                ppo_loss(params, &mb, hyper.clip, hyper.ent_coef, hyper.vf_coef)?;
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite PPO loss: {parts:?}, running stats {stats:?}"
                )));
            }
            clip_grad_norm(&mut grad, hyper.max_grad_norm);
            adam.step(&mut params.values, &grad);
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.approx_kl += parts.approx_kl;
            stats.clip_fraction += parts.clip_fraction;
            stats.minibatches += 1;
        }
    }
    if stats.minibatches > 0 {
        let n = stats.minibatches as f64;
        stats.policy_loss /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        stats.approx_kl /= n;
        stats.clip_fraction /= n;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_clips_positive_advantage() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, 1.0, 0.2) - 0.5).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert!((clipped_surrogate(1.5, -1.0, 0.2) + 1.5).abs() < 1e-15);
    }

    #[test]
    fn advantage_normalization() {
        let mut a = vec![1.0, 2.0, 3.0];
        normalize(&mut a);
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
        let mut one = vec![4.0];
        normalize(&mut one);
        assert_eq!(one, vec![4.0]);
    }
}
