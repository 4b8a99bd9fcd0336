//! Shared-trunk actor-critic with one policy head and two value heads.

use crate::codec::{Reader, Writer};
use crate::env::Observation;
use crate::nn::{self, Activation, AdamState, ForwardCache, NetParams, LOG_CLAMP};
use crate::seed::Rng;
use crate::Result;

pub const DEFAULT_HIDDEN: usize = 64;

/// Policy logits come out of an identity head; the softmax is applied here
/// so the clipped-surrogate gradient can be written directly in logit space.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub trunk: NetParams,
    pub policy_head: NetParams,
    pub v_ext_head: NetParams,
    pub v_int_head: NetParams,
}

/// Everything one forward pass produces for a single observation.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub probs: Vec<f64>,
    pub v_ext: f64,
    pub v_int: f64,
    pub trunk_cache: ForwardCache,
    pub policy_cache: ForwardCache,
    pub v_ext_cache: ForwardCache,
    pub v_int_cache: ForwardCache,
}

impl PolicyOutput {
    pub fn log_prob(&self, action: usize) -> f64 {
        self.probs[action].max(LOG_CLAMP).ln()
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .map(|&p| if p > 0.0 { p * p.max(LOG_CLAMP).ln() } else { 0.0 })
            .sum::<f64>()
    }
}

impl PolicyNet {
    /// Initialization order is trunk, policy, extrinsic value, intrinsic value.
    pub fn new(obs_dim: usize, n_actions: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let relu = Activation::Relu;
        let trunk = NetParams::init_with_rng(&[obs_dim, hidden, hidden], &[relu, relu], rng)?;
        let policy_head = NetParams::init_with_rng(&[hidden, n_actions], &[Activation::Identity], rng)?;
        let v_ext_head = NetParams::init_with_rng(&[hidden, 1], &[Activation::Identity], rng)?;
        let v_int_head = NetParams::init_with_rng(&[hidden, 1], &[Activation::Identity], rng)?;
        Ok(PolicyNet { trunk, policy_head, v_ext_head, v_int_head })
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.policy_head.output_dim()
    }

    pub fn parts(&self) -> [&NetParams; 4] {
        [&self.trunk, &self.policy_head, &self.v_ext_head, &self.v_int_head]
    }

    pub fn parts_mut(&mut self) -> [&mut NetParams; 4] {
        [&mut self.trunk, &mut self.policy_head, &mut self.v_ext_head, &mut self.v_int_head]
    }

    pub fn zeros_like(&self) -> [NetParams; 4] {
        self.parts().map(|p| p.zeros_like())
    }

    pub fn evaluate(&self, obs: &Observation) -> Result<PolicyOutput> {
        let (h, trunk_cache) = self.trunk.forward(&obs.to_dense())?;
        let (mut probs, policy_cache) = self.policy_head.forward(&h)?;
        nn::softmax_in_place(&mut probs);
        let (ve, v_ext_cache) = self.v_ext_head.forward(&h)?;
        let (vi, v_int_cache) = self.v_int_head.forward(&h)?;
        Ok(PolicyOutput {
            probs,
            v_ext: ve[0],
            v_int: vi[0],
            trunk_cache,
            policy_cache,
            v_ext_cache,
            v_int_cache,
        })
    }

    /// Distribution and both value estimates, without caches.
    pub fn act(&self, obs: &Observation) -> Result<(Vec<f64>, f64, f64)> {
        let h = self.trunk.output(&obs.to_dense())?;
        let mut p = self.policy_head.output(&h)?;
        nn::softmax_in_place(&mut p);
        let ve = self.v_ext_head.output(&h)?[0];
        let vi = self.v_int_head.output(&h)?[0];
        Ok((p, ve, vi))
    }

    pub fn probs(&self, obs: &Observation) -> Result<Vec<f64>> {
        let h = self.trunk.output(&obs.to_dense())?;
        let mut p = self.policy_head.output(&h)?;
        nn::softmax_in_place(&mut p);
        Ok(p)
    }

    pub fn write(&self, w: &mut Writer) {
        for p in self.parts() {
            nn::write_params(w, p);
        }
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        Ok(PolicyNet {
            trunk: nn::read_params(r)?,
            policy_head: nn::read_params(r)?,
            v_ext_head: nn::read_params(r)?,
            v_int_head: nn::read_params(r)?,
        })
    }
}

/// Adam moments for each of the four parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOptimizer {
    pub states: [AdamState; 4],
}

impl PolicyOptimizer {
    pub fn new(net: &PolicyNet, eps: f64) -> Self {
        PolicyOptimizer { states: net.parts().map(|p| AdamState::new(p, eps)) }
    }

    pub fn write(&self, w: &mut Writer) {
        for s in &self.states {
            nn::write_adam(w, s);
        }
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        Ok(PolicyOptimizer {
            states: [nn::read_adam(r)?, nn::read_adam(r)?, nn::read_adam(r)?, nn::read_adam(r)?],
        })
    }
}

/// Inverse-CDF draw from `probs` given `u` in [0, 1).
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn evaluate_gives_distribution_and_scalars() {
        let net = PolicyNet::new(12, 4, 8, &mut rng_from(0)).unwrap();
        let out = net.evaluate(&Observation::new(3, 12).unwrap()).unwrap();
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.v_ext.is_finite() && out.v_int.is_finite());
        assert_eq!(out.probs, net.probs(&Observation::new(3, 12).unwrap()).unwrap());
        assert!(out.entropy() > 0.0 && out.entropy() <= (4f64).ln() + 1e-12);
    }

    #[test]
    fn categorical_inverse_cdf() {
        let p = [0.25, 0.5, 0.25];
        assert_eq!(sample_categorical(&p, 0.0), 0);
        assert_eq!(sample_categorical(&p, 0.3), 1);
        assert_eq!(sample_categorical(&p, 0.8), 2);
        assert_eq!(sample_categorical(&p, 0.999_999_999_999), 2);
    }
}
