//! Generalized advantage estimation over a time-major rollout.
//!
//! Arrays are laid out `[t * n_envs + e]`. `bootstrap` holds `V(s_T)` for
//! each environment after the last collected step.

use super::RewardConfig;

/// Advantages and returns for one reward stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaeOutput {
    /// `ext_coef·A_ext (+ int_coef·A_int)`, before normalization.
    pub advantages: Vec<f64>,
    pub ext: Stream,
    /// Absent when the intrinsic stream is disabled.
    pub int: Option<Stream>,
}

/// One stream of GAE. With `episodic` set, the recursion and the bootstrap
/// are cut at every done flag.
pub fn gae_stream(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    n_envs: usize,
    gamma: f64,
    lambda: f64,
    episodic: bool,
) -> Stream {
    let n = rewards.len();
    assert!(n_envs > 0 && n % n_envs == 0, "rollout is not rectangular");
    assert!(values.len() == n && dones.len() == n && bootstrap.len() == n_envs);
    let n_steps = n / n_envs;
    let mut advantages = vec![0.0; n];
    for e in 0..n_envs {
        let mut next_adv = 0.0;
        let mut next_value = bootstrap[e];
        for t in (0..n_steps).rev() {
            let i = t * n_envs + e;
            let keep = if episodic && dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * keep * next_value - values[i];
            let adv = delta + gamma * lambda * keep * next_adv;
            advantages[i] = adv;
            next_adv = adv;
            next_value = values[i];
        }
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Stream { advantages, returns }
}

/// Intrinsic inputs for [`compute_gae`].
pub struct IntrinsicInputs<'a> {
    pub rewards: &'a [f64],
    pub values: &'a [f64],
    pub bootstrap: &'a [f64],
}

pub fn compute_gae(
    ext_rewards: &[f64],
    ext_values: &[f64],
    dones: &[bool],
    ext_bootstrap: &[f64],
    intrinsic: Option<IntrinsicInputs<'_>>,
    n_envs: usize,
    cfg: &RewardConfig,
) -> GaeOutput {
    let ext = gae_stream(
        ext_rewards,
        ext_values,
        dones,
        ext_bootstrap,
        n_envs,
        cfg.gamma_ext,
        cfg.gae_lambda,
        true,
    );
    let int = intrinsic.map(|i| {
        gae_stream(i.rewards, i.values, dones, i.bootstrap, n_envs, cfg.gamma_int, cfg.gae_lambda, false)
    });
    let advantages = match &int {
        Some(int) => ext
            .advantages
            .iter()
            .zip(&int.advantages)
            .map(|(e, i)| cfg.ext_coef * e + cfg.int_coef * i)
            .collect(),
        None => ext.advantages.iter().map(|e| cfg.ext_coef * e).collect(),
    };
    GaeOutput { advantages, ext, int }
}

/// Shifts to zero mean and scales by `std + eps` (population std).
pub fn normalize_advantages(adv: &mut [f64], eps: f64) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    #[test]
    fn zero_everything_gives_zero_advantages() {
        let z = vec![0.0; 8];
        let out = compute_gae(&z, &z, &[false; 8], &[0.0; 2], None, 2, &cfg());
        assert!(out.advantages.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn single_step_is_td_error() {
        let s = gae_stream(&[1.5], &[0.2], &[false], &[0.7], 1, 0.9, 0.95, true);
        assert_eq!(s.advantages[0], 1.5 + 0.9 * 0.7 - 0.2);
    }

    #[test]
    fn four_step_recursion_matches_hand_unroll() {
        let r = [1.0, 0.0, -0.5, 2.0];
        let v = [0.1, 0.2, 0.3, 0.4];
        let d = [false, true, false, false];
        let (g, l, boot) = (0.9, 0.8, 0.5);
        let s = gae_stream(&r, &v, &d, &[boot], 1, g, l, true);
        let d3 = 2.0 + g * boot - 0.4;
        let d2 = -0.5 + g * 0.4 - 0.3;
        let d1 = 0.0 - 0.2;
        let d0 = 1.0 + g * 0.2 - 0.1;
        let a3 = d3;
        let a2 = d2 + g * l * a3;
        let a1 = d1;
        let a0 = d0 + g * l * a1;
        for (got, want) in s.advantages.iter().zip([a0, a1, a2, a3]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn intrinsic_stream_ignores_dones() {
        let r = [0.3, 0.1, 0.4, 0.2];
        let v = [0.0; 4];
        let a = gae_stream(&r, &v, &[false; 4], &[0.5], 1, 0.99, 0.95, false);
        let b = gae_stream(&r, &v, &[true, false, true, true], &[0.5], 1, 0.99, 0.95, false);
        assert_eq!(a, b);
        let e = gae_stream(&r, &v, &[true, false, true, true], &[0.5], 1, 0.99, 0.95, true);
        assert_ne!(a, e);
    }

    #[test]
    fn normalization_moments() {
        let mut a = vec![1.0, 2.0, 3.0, 10.0, -4.0];
        normalize_advantages(&mut a, 1e-8);
        let mean = a.iter().sum::<f64>() / 5.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((std - 1.0).abs() < 1e-6);
    }
}
