//! Clipped-surrogate update for [`PolicyNet`].
//!
//! The per-example loss is
//! `-min(ρA, clip(ρ, 1±ε)A) + c_v·[(V_ext − R_ext)² + (V_int − R_int)²] − c_H·H(π)`
//! averaged over a minibatch, where `ρ = π(a|s) / π_old(a|s)`.

use rand::seq::SliceRandom;

use super::gae::normalize_advantages;
use super::policy::{PolicyNet, PolicyOptimizer};
use crate::env::Observation;
use crate::nn;
use crate::seed::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub lr: f64,
    /// Guards advantage normalization and Adam.
    pub stable_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.1,
            epochs: 4,
            minibatches: 4,
            entropy_coef: 0.001,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            lr: 1e-4,
            stable_eps: 1e-8,
        }
    }
}

/// Flattened training data for one update.
pub struct PpoBatch<'a> {
    pub obs: &'a [Observation],
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    /// Raw combined advantages; normalized inside the update.
    pub advantages: &'a [f64],
    pub ext_returns: &'a [f64],
    /// Absent when the intrinsic head is not trained.
    pub int_returns: Option<&'a [f64]>,
}

/// Means over every minibatch step of the update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub v_ext_loss: f64,
    pub v_int_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Gradient of the surrogate and entropy terms with respect to the logits of
/// one example, before the `1/m` minibatch scaling. Returns
/// (gradient, surrogate loss, clipped?).
pub fn policy_logit_grad(
    probs: &[f64],
    action: usize,
    log_prob: f64,
    old_log_prob: f64,
    advantage: f64,
    clip_eps: f64,
    entropy_coef: f64,
    entropy: f64,
) -> (Vec<f64>, f64, bool) {
    let ratio = (log_prob - old_log_prob).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    let surrogate = unclipped.min(clipped);
    // When the clipped branch is the minimum the ratio has no gradient.
    let coef = if unclipped <= clipped { -unclipped } else { 0.0 };
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let indicator = if j == action { 1.0 } else { 0.0 };
            let ent = if p > 0.0 { entropy_coef * p * (p.max(nn::LOG_CLAMP).ln() + entropy) } else { 0.0 };
            coef * (indicator - p) + ent
        })
        .collect();
    (grad, -surrogate, (ratio - 1.0).abs() > clip_eps)
}

pub fn ppo_update(
    net: &mut PolicyNet,
    opt: &mut PolicyOptimizer,
    batch: &PpoBatch<'_>,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<PpoStats> {
    let n = batch.obs.len();
    if n == 0 {
        return Err(Error::Validation("empty PPO batch".into()));
    }
    if cfg.minibatches == 0 || cfg.epochs == 0 {
        return Err(Error::Validation("PPO needs at least one epoch and one minibatch".into()));
    }
    let mut advantages = batch.advantages.to_vec();
    normalize_advantages(&mut advantages, cfg.stable_eps);

    let mb_size = n.div_ceil(cfg.minibatches);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = PpoStats::default();
    let mut steps = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for (mb, chunk) in order.chunks(mb_size).enumerate() {
            let m = chunk.len() as f64;
            let mut grads = net.zeros_like();
            let mut mb_stats = PpoStats::default();
            for &i in chunk {
                let out = net.evaluate(&batch.obs[i])?;
                let action = batch.actions[i];
                let entropy = out.entropy();
                let (mut g_logits, surrogate, clipped) = policy_logit_grad(
                    &out.probs,
                    action,
                    out.log_prob(action),
                    batch.old_log_probs[i],
                    advantages[i],
                    cfg.clip_eps,
                    cfg.entropy_coef,
                    entropy,
                );
                for g in &mut g_logits {
                    *g /= m;
                }
                let mut g_h = net
                    .policy_head
                    .backward(&out.policy_cache, &g_logits, None, &mut grads[1], true)
                    .expect("input gradient requested");

                let ext_err = out.v_ext - batch.ext_returns[i];
                let g_ve = [2.0 * cfg.value_coef * ext_err / m];
                let gh_ext = net
                    .v_ext_head
                    .backward(&out.v_ext_cache, &g_ve, None, &mut grads[2], true)
                    .expect("input gradient requested");
                for (a, b) in g_h.iter_mut().zip(&gh_ext) {
                    *a += b;
                }
                let mut int_sq = 0.0;
                if let Some(int_returns) = batch.int_returns {
                    let int_err = out.v_int - int_returns[i];
                    int_sq = int_err * int_err;
                    let g_vi = [2.0 * cfg.value_coef * int_err / m];
                    let gh_int = net
                        .v_int_head
                        .backward(&out.v_int_cache, &g_vi, None, &mut grads[3], true)
                        .expect("input gradient requested");
                    for (a, b) in g_h.iter_mut().zip(&gh_int) {
                        *a += b;
                    }
                }
                net.trunk.backward(&out.trunk_cache, &g_h, None, &mut grads[0], false);

                mb_stats.policy_loss += surrogate / m;
                mb_stats.v_ext_loss += ext_err * ext_err / m;
                mb_stats.v_int_loss += int_sq / m;
                mb_stats.entropy += entropy / m;
                mb_stats.clip_fraction += if clipped { 1.0 / m } else { 0.0 };
            }
            let total = mb_stats.policy_loss + cfg.value_coef * (mb_stats.v_ext_loss + mb_stats.v_int_loss)
                - cfg.entropy_coef * mb_stats.entropy;
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, minibatch: mb });
            }
            nn::clip_grad_norm(&mut grads, cfg.max_grad_norm);
            let train_int = batch.int_returns.is_some();
            for (k, (params, g)) in net.parts_mut().into_iter().zip(&grads).enumerate() {
                if k == 3 && !train_int {
                    continue;
                }
                nn::adam_step(params, g, &mut opt.states[k], cfg.lr)?;
            }
            stats.policy_loss += mb_stats.policy_loss;
            stats.v_ext_loss += mb_stats.v_ext_loss;
            stats.v_int_loss += mb_stats.v_int_loss;
            stats.entropy += mb_stats.entropy;
            stats.clip_fraction += mb_stats.clip_fraction;
            steps += 1;
        }
    }
    let k = steps as f64;
    stats.policy_loss /= k;
    stats.v_ext_loss /= k;
    stats.v_int_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    Ok(stats)
}
