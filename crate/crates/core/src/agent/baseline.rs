//! Plain PPO on the extrinsic reward only: no memory, no reflection, no
//! autoencoder. It shares the network, the advantage recursion and the
//! surrogate update with the full learner but keeps its own collection loop,
//! so it serves as the reference trace for the disabled-module ablation.

use std::collections::VecDeque;

use rand::Rng as _;

use super::gae::gae_stream;
use super::policy::{sample_categorical, PolicyNet, PolicyOptimizer};
use super::ppo::{ppo_update, PpoBatch};
use super::rollout::RETURN_WINDOW;
use super::train::{MetricsRow, TrainConfig};
use crate::env::{self, Action};
use crate::nn::LOG_CLAMP;
use crate::seed::{component_rng, stream};
use crate::Result;

pub fn train_plain(cfg: &TrainConfig, mut on_row: impl FnMut(&MetricsRow) -> Result<()>) -> Result<PolicyNet> {
    cfg.validate()?;
    let spec = &cfg.spec;
    let n_envs = cfg.num_env;
    let mut policy = PolicyNet::new(
        spec.n_cells(),
        Action::COUNT,
        cfg.hidden,
        &mut component_rng(cfg.seed, stream::POLICY_INIT),
    )?;
    let mut opt = PolicyOptimizer::new(&policy, cfg.ppo.stable_eps);
    let mut action_rng = component_rng(cfg.seed, stream::ACTION);
    let mut ppo_rng = component_rng(cfg.seed, stream::PPO_SHUFFLE);

    let mut envs: Vec<_> = (0..n_envs).map(|_| env::reset(spec, 0)).collect();
    let mut returns_so_far = vec![0.0; n_envs];
    let mut visited = vec![false; spec.n_cells()];
    visited[spec.cell_index(spec.start)] = true;
    let mut recent: VecDeque<f64> = VecDeque::new();
    let mut falls = 0u64;
    let mut env_steps = 0u64;

    for update in 1..=cfg.updates {
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut log_probs = Vec::new();
        let mut rewards = Vec::new();
        let mut values = Vec::new();
        let mut dones = Vec::new();
        for _ in 0..cfg.num_step {
            for (e, (state, o)) in envs.iter_mut().enumerate() {
                let u: f64 = action_rng.gen();
                let (probs, v, _) = policy.act(o)?;
                let a = sample_categorical(&probs, u);
                let (next, info) = env::step_mut(state, spec, Action::from_index(a)?)?;
                let done = info.terminated || info.truncated;
                obs.push(*o);
                actions.push(a);
                log_probs.push(probs[a].max(LOG_CLAMP).ln());
                rewards.push(info.reward);
                values.push(v);
                dones.push(done);
                visited[next.index()] = true;
                falls += u64::from(info.fell);
                returns_so_far[e] += info.reward;
                *o = next;
                if done {
                    if recent.len() == RETURN_WINDOW {
                        recent.pop_front();
                    }
                    recent.push_back(returns_so_far[e]);
                    returns_so_far[e] = 0.0;
                    (*state, *o) = env::reset(spec, 0);
                }
            }
        }
        env_steps += obs.len() as u64;
        let bootstrap: Vec<f64> = envs.iter().map(|(_, o)| policy.act(o).map(|r| r.1)).collect::<Result<_>>()?;
        let ext = gae_stream(
            &rewards,
            &values,
            &dones,
            &bootstrap,
            n_envs,
            cfg.reward.gamma_ext,
            cfg.reward.gae_lambda,
            true,
        );
        let advantages: Vec<f64> = ext.advantages.iter().map(|a| cfg.reward.ext_coef * a).collect();
        let batch = PpoBatch {
            obs: &obs,
            actions: &actions,
            old_log_probs: &log_probs,
            advantages: &advantages,
            ext_returns: &ext.returns,
            int_returns: None,
        };
        let stats = ppo_update(&mut policy, &mut opt, &batch, &cfg.ppo, &mut ppo_rng)?;
        let mean_return = if recent.is_empty() { 0.0 } else { recent.iter().sum::<f64>() / recent.len() as f64 };
        on_row(&MetricsRow {
            update,
            env_steps,
            mean_ext_return: mean_return,
            mean_int_reward: 0.0,
            memory_action_frac: 0.0,
            cliff_falls_cum: falls,
            coverage: visited.iter().filter(|&&v| v).count(),
            pred_loss: None,
            refl_loss: None,
            ae_loss: None,
            policy_loss: stats.policy_loss,
            v_ext_loss: stats.v_ext_loss,
            v_int_loss: stats.v_int_loss,
            entropy: stats.entropy,
        })?;
    }
    Ok(policy)
}
