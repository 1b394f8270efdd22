mod common;

use common::{norm_rel, random_minibatch, randomized_policy};

use std::sync::Arc;

use chrono::NaiveDate;
use crossseg::env::{EnvConfig, TradingEnv};
use crossseg::eval::sharpe;
use crossseg::ppo::{
    collect_rollout, compute_gae, policy_forward, ppo_loss, surrogate_grad, surrogate_loss,
    train_agent, AgentData, EpisodeSampler, PolicyConfig, PolicyParams, PpoHyper,
};
use crossseg::predictor::SignalPanel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for draw in 0..100 {
        let p = randomized_policy(&mut rng);
        let mb = random_minibatch(&p, 8, &mut rng);
        let grad = surrogate_grad(&p, &mb, 0.2).unwrap();
        let h = 1e-6;
        let range = p.actor_range().start..p.log_std_range().end;
        let mut ana = Vec::new();
        let mut num = Vec::new();
        for i in range {
            if p.critic_range().contains(&i) {
                assert_eq!(grad[i], 0.0);
                continue;
            }
            let mut q = p.clone();
            q.values[i] += h;
            let up = surrogate_loss(&q, &mb, 0.2).unwrap();
            q.values[i] -= 2.0 * h;
            let down = surrogate_loss(&q, &mb, 0.2).unwrap();
            num.push((up - down) / (2.0 * h));
            ana.push(grad[i]);
        }
        let rel = norm_rel(&ana, &num);
        assert!(rel < 1e-4, "draw {draw}: relative error {rel:e}");
    }
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let p = randomized_policy(&mut rng);
        let mb = random_minibatch(&p, 6, &mut rng);
        let (_, grad) = ppo_loss(&p, &mb, 0.2, 0.01, 0.5).unwrap();
        let h = 1e-6;
        let num: Vec<f64> = (0..p.values.len())
            .map(|i| {
                let mut q = p.clone();
                q.values[i] += h;
                let up = ppo_loss(&q, &mb, 0.2, 0.01, 0.5).unwrap().0.total;
                q.values[i] -= 2.0 * h;
                let down = ppo_loss(&q, &mb, 0.2, 0.01, 0.5).unwrap().0.total;
                (up - down) / (2.0 * h)
            })
            .collect();
        assert!(norm_rel(&grad, &num) < 1e-4);
    }
}

#[test]
fn zero_advantages_leave_only_entropy_and_value_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = randomized_policy(&mut rng);
    let mut mb = random_minibatch(&p, 16, &mut rng);
    mb.advantages.iter_mut().for_each(|a| *a = 0.0);
    let grad = surrogate_grad(&p, &mb, 0.2).unwrap();
    assert!(grad.iter().all(|g| *g == 0.0));
    let (_, full) = ppo_loss(&p, &mb, 0.2, 0.01, 0.5).unwrap();
    assert!(full[p.actor_range()].iter().all(|g| *g == 0.0));
    assert!(full[p.log_std_range()]
        .iter()
        .all(|g| (*g + 0.01).abs() < 1e-15));
    assert!(full[p.critic_range()].iter().any(|g| *g != 0.0));
}

#[test]
fn gae_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let r: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.15)).collect();
        let last: f64 = rng.sample(StandardNormal);
        let gamma: f64 = rng.random_range(0.5..1.0);
        let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { last };

        // lambda = 0: one-step TD errors.
        let (adv, _) = compute_gae(&r, &v, &d, last, gamma, 0.0);
        for t in 0..n {
            let cont = if d[t] { 0.0 } else { 1.0 };
            assert!((adv[t] - (r[t] + gamma * next_v(t) * cont - v[t])).abs() < 1e-12);
        }

        // lambda = 1: discounted Monte-Carlo return (bootstrapped at the end) minus value.
        let (adv, ret) = compute_gae(&r, &v, &d, last, gamma, 1.0);
        for t in 0..n {
            let mut g = 0.0;
            let mut disc = 1.0;
            let mut k = t;
            loop {
                g += disc * r[k];
                if d[k] {
                    break;
                }
                disc *= gamma;
                if k + 1 == n {
                    g += disc * last;
                    break;
                }
                k += 1;
            }
            assert!((adv[t] - (g - v[t])).abs() < 1e-10);
            assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
        }

        // gamma = lambda = 1, V = 0, no bootstrap: undiscounted reward-to-go.
        let zeros = vec![0.0; n];
        let mut dd = d.clone();
        dd[n - 1] = true;
        let (_, ret) = compute_gae(&r, &zeros, &dd, 0.0, 1.0, 1.0);
        for t in 0..n {
            let end = (t..n).find(|&k| dd[k]).unwrap();
            let suffix: f64 = r[t..=end].iter().sum();
            assert!((ret[t] - suffix).abs() < 1e-12);
        }
    }
}

fn dates(n: usize) -> Vec<NaiveDate> {
    (0..n)
        .map(|i| NaiveDate::from_ymd_opt(2010, 1, 1).unwrap() + chrono::Days::new(i as u64))
        .collect()
}

fn bandit_panel(days: usize) -> Arc<SignalPanel> {
    Arc::new(
        SignalPanel::new(
            vec!["UP".into(), "DOWN".into()],
            dates(days),
            vec![vec![1.0; days], vec![0.0; days]],
            vec![vec![0.01; days], vec![-0.01; days]],
            1,
        )
        .unwrap(),
    )
}

#[test]
fn horizon_one_rollout_is_gae_base_case() {
    let panel = bandit_panel(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let env = TradingEnv::new(panel, EnvConfig::default()).unwrap();
    let mut sampler = EpisodeSampler::new(vec![env], &mut rng).unwrap();
    let params = PolicyParams::init(2, 2, &PolicyConfig::default(), 3).unwrap();
    let hyper = PpoHyper {
        horizon: 1,
        ..Default::default()
    };
    let s0 = sampler.state().0.clone();
    let buf = collect_rollout(&mut sampler, &params, &hyper, &mut rng).unwrap();
    assert_eq!(buf.len(), 1);
    let v0 = policy_forward(&params, &s0).unwrap().value;
    let v1 = policy_forward(&params, &sampler.state().0).unwrap().value;
    let want = buf.rewards[0] + 0.99 * v1 - v0;
    assert!((buf.advantages[0] - want).abs() < 1e-15);
}

#[test]
fn zero_network_zero_rewards_gives_zero_advantages() {
    let days = 30;
    let panel = Arc::new(
        SignalPanel::new(
            vec!["A".into(), "B".into()],
            dates(days),
            vec![vec![0.5; days]; 2],
            vec![vec![0.0; days]; 2],
            2,
        )
        .unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let env = TradingEnv::new(panel, EnvConfig::default()).unwrap();
    let mut sampler = EpisodeSampler::new(vec![env], &mut rng).unwrap();
    let params = PolicyParams::zeros(2, 2, &PolicyConfig::default()).unwrap();
    let hyper = PpoHyper {
        horizon: 64,
        ..Default::default()
    };
    let buf = collect_rollout(&mut sampler, &params, &hyper, &mut rng).unwrap();
    assert_eq!(buf.len(), 64);
    assert!(buf.advantages.iter().all(|a| *a == 0.0));
}

fn bandit_hyper() -> PpoHyper {
    PpoHyper {
        learning_rate: 3e-3,
        horizon: 128,
        minibatch: 32,
        epochs: 10,
        total_timesteps: 50 * 128,
        eval_every: 10,
        ..Default::default()
    }
}

#[test]
fn learns_the_winning_arm() {
    let panel = bandit_panel(64);
    let data = AgentData {
        train: vec![panel.clone()],
        validation: panel.clone(),
        test: panel.clone(),
    };
    let cfg = PolicyConfig {
        depth: 1,
        width: 16,
        init_log_std: 0.0,
    };
    let out = train_agent(&data, &EnvConfig::default(), &cfg, &bandit_hyper(), 5).unwrap();
    assert_eq!(out.updates.len(), 50);
    let mean = policy_forward(&out.params, &[1.0, 0.0]).unwrap().mean;
    let alloc = crossseg::env::normalize_action(&mean, Default::default()).unwrap();
    assert!(
        alloc.weights()[0] > 0.9,
        "allocation to the winning arm: {}",
        alloc.weights()[0]
    );
}

#[test]
fn short_budget_returns_initial_params() {
    let panel = bandit_panel(16);
    let data = AgentData {
        train: vec![panel.clone()],
        validation: panel.clone(),
        test: panel,
    };
    let hyper = PpoHyper {
        horizon: 100,
        total_timesteps: 99,
        ..Default::default()
    };
    let cfg = PolicyConfig::default();
    let out = train_agent(&data, &EnvConfig::default(), &cfg, &hyper, 1).unwrap();
    assert!(out.updates.is_empty() && out.series.is_empty());
    let init = PolicyParams::init(2, 2, &cfg, crossseg::seeding::derive_seed(1, 0)).unwrap();
    assert_eq!(out.params, init);
}

/// Random-walk panel whose signal is 1 exactly when the next return is positive.
fn oracle_panel(n_stocks: usize, days: usize, seed: u64) -> Arc<SignalPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let returns: Vec<Vec<f64>> = (0..n_stocks)
        .map(|_| {
            (0..days)
                .map(|_| 0.0003 + 0.01 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let signals = returns
        .iter()
        .map(|row| {
            row.iter()
                .map(|r| if *r > 0.0 { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let tickers = (0..n_stocks).map(|i| format!("S{i}")).collect();
    Arc::new(SignalPanel::new(tickers, dates(days), signals, returns, 1).unwrap())
}

#[test]
fn perfect_signals_beat_buy_and_hold() {
    let data = AgentData {
        train: vec![oracle_panel(3, 400, 1)],
        validation: oracle_panel(3, 200, 2),
        test: oracle_panel(3, 300, 3),
    };
    let hyper = PpoHyper {
        learning_rate: 1e-3,
        horizon: 256,
        minibatch: 64,
        total_timesteps: 40 * 256,
        eval_every: 40,
        ..Default::default()
    };
    let cfg = PolicyConfig {
        depth: 1,
        width: 32,
        init_log_std: 0.0,
    };
    let out = train_agent(&data, &EnvConfig::default(), &cfg, &hyper, 11).unwrap();
    let test_sharpe = out.series.last().unwrap().test_sharpe;
    let bh = crossseg::eval::threshold_baseline(&data.test, 0.0, 0.0).unwrap();
    assert!(
        test_sharpe > bh.sharpe,
        "agent {test_sharpe} vs buy-and-hold {}",
        bh.sharpe
    );
    assert!(test_sharpe > sharpe(&bh.returns));
}

#[test]
fn training_is_deterministic() {
    let data = AgentData {
        train: vec![oracle_panel(2, 100, 4), oracle_panel(2, 80, 5)],
        validation: oracle_panel(2, 50, 6),
        test: oracle_panel(2, 50, 7),
    };
    let hyper = PpoHyper {
        horizon: 64,
        minibatch: 16,
        epochs: 3,
        total_timesteps: 5 * 64,
        ..Default::default()
    };
    let env = EnvConfig {
        include_portfolio: true,
        tc: 0.001,
        random_start: true,
        ..Default::default()
    };
    let cfg = PolicyConfig {
        depth: 2,
        width: 12,
        init_log_std: 0.0,
    };
    let a = train_agent(&data, &env, &cfg, &hyper, 3).unwrap();
    let b = train_agent(&data, &env, &cfg, &hyper, 3).unwrap();
    assert_eq!(a.series, b.series);
    assert_eq!(a.params, b.params);
    assert_eq!(a.series.records.len(), 5);
}
