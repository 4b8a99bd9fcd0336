//! Exploitation networks trained from the memory buffers.
//!
//! The prediction net imitates actions stored in the M-buffer (cross-entropy
//! on the one-hot taken action). The reflection net scores
//! (observation, action) pairs: M-buffer pairs are pushed toward 1 and
//! R-buffer pairs toward 0 with squared error.

use crate::codec::{Reader, Writer};
use crate::env::Observation;
use crate::memory::{MBuffer, RBuffer};
use crate::nn::{self, Activation, AdamState, LossKind, NetParams};
use crate::seed::Rng;
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 64;

/// Result of a training call that may have had nothing to train on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainStatus {
    /// Mean loss of the final gradient step (0 for zero updates).
    Trained(f64),
    Skipped(&'static str),
}

impl TrainStatus {
    pub fn loss(self) -> Option<f64> {
        match self {
            TrainStatus::Trained(l) => Some(l),
            TrainStatus::Skipped(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionNet {
    pub params: NetParams,
    pub adam: AdamState,
    pub train_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionNet {
    pub params: NetParams,
    pub adam: AdamState,
    pub train_steps: u64,
}

impl PredictionNet {
    pub fn new(obs_dim: usize, n_actions: usize, hidden: usize, adam_eps: f64, rng: &mut Rng) -> Result<Self> {
        let params = NetParams::init_with_rng(
            &[obs_dim, hidden, hidden, n_actions],
            &[Activation::Relu, Activation::Relu, Activation::Softmax],
            rng,
        )?;
        Ok(Self::from_params(params, adam_eps))
    }

    pub fn from_params(params: NetParams, adam_eps: f64) -> Self {
        let adam = AdamState::new(&params, adam_eps);
        PredictionNet { params, adam, train_steps: 0 }
    }

    pub fn n_actions(&self) -> usize {
        self.params.output_dim()
    }

    pub fn write(&self, w: &mut Writer) {
        nn::write_params(w, &self.params);
        nn::write_adam(w, &self.adam);
        w.u64(self.train_steps);
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        Ok(PredictionNet {
            params: nn::read_params(r)?,
            adam: nn::read_adam(r)?,
            train_steps: r.u64()?,
        })
    }
}

impl ReflectionNet {
    pub fn new(obs_dim: usize, n_actions: usize, hidden: usize, adam_eps: f64, rng: &mut Rng) -> Result<Self> {
        let params = NetParams::init_with_rng(
            &[obs_dim + n_actions, hidden, hidden, 1],
            &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
            rng,
        )?;
        Ok(Self::from_params(params, adam_eps))
    }

    pub fn from_params(params: NetParams, adam_eps: f64) -> Self {
        let adam = AdamState::new(&params, adam_eps);
        ReflectionNet { params, adam, train_steps: 0 }
    }

    pub fn write(&self, w: &mut Writer) {
        nn::write_params(w, &self.params);
        nn::write_adam(w, &self.adam);
        w.u64(self.train_steps);
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        Ok(ReflectionNet {
            params: nn::read_params(r)?,
            adam: nn::read_adam(r)?,
            train_steps: r.u64()?,
        })
    }
}

fn one_hot(index: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[index] = 1.0;
    v
}

/// Observation followed by the one-hot action.
pub fn reflection_input(obs: &Observation, action: usize, n_actions: usize) -> Vec<f64> {
    let mut x = vec![0.0; obs.dim() + n_actions];
    x[obs.index()] = 1.0;
    x[obs.dim() + action] = 1.0;
    x
}

pub fn train_prediction(
    net: &mut PredictionNet,
    mbuf: &MBuffer,
    updates: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<TrainStatus> {
    if mbuf.is_empty() {
        return Ok(TrainStatus::Skipped("M-buffer is empty"));
    }
    let n_actions = net.n_actions();
    let mut last = 0.0;
    for _ in 0..updates {
        let traj = mbuf.sample(rng)?;
        let examples: Vec<(Vec<f64>, Vec<f64>)> = traj
            .steps()
            .iter()
            .map(|s| (s.observation.to_dense(), one_hot(s.action, n_actions)))
            .collect();
        let batch: Vec<(&[f64], &[f64])> = examples.iter().map(|(x, t)| (x.as_slice(), t.as_slice())).collect();
        let (loss, grads) = nn::loss_and_grad(&net.params, &batch, LossKind::CrossEntropy, 0.0, None)?;
        nn::adam_step(&mut net.params, &grads, &mut net.adam, lr)?;
        net.train_steps += 1;
        last = loss;
    }
    Ok(TrainStatus::Trained(last))
}

/// Greedy action and the full distribution. Ties go to the lowest index.
pub fn predict_action(net: &PredictionNet, obs: &Observation) -> Result<(usize, Vec<f64>)> {
    let dist = net.params.output(&obs.to_dense())?;
    Ok((nn::argmax(&dist), dist))
}

pub fn train_reflection(
    net: &mut ReflectionNet,
    mbuf: &MBuffer,
    rbuf: &RBuffer,
    updates: usize,
    lr: f64,
    r_batch: usize,
    rng: &mut Rng,
) -> Result<TrainStatus> {
    if mbuf.is_empty() && rbuf.is_empty() {
        return Ok(TrainStatus::Skipped("both buffers are empty"));
    }
    let (pos, neg) = ([1.0], [0.0]);
    let mut last = 0.0;
    for _ in 0..updates {
        let mut inputs: Vec<(Vec<f64>, &[f64])> = Vec::new();
        if !mbuf.is_empty() {
            for s in mbuf.sample(rng)?.steps() {
                inputs.push((pair_input(net, &s.observation, s.action)?, &pos));
            }
        }
        if !rbuf.is_empty() {
            for (obs, a) in rbuf.sample(r_batch, rng)? {
                inputs.push((pair_input(net, &obs, a)?, &neg));
            }
        }
        let batch: Vec<(&[f64], &[f64])> = inputs.iter().map(|(x, t)| (x.as_slice(), *t)).collect();
        let (loss, grads) = nn::loss_and_grad(&net.params, &batch, LossKind::BinaryTargetMse, 0.0, None)?;
        nn::adam_step(&mut net.params, &grads, &mut net.adam, lr)?;
        net.train_steps += 1;
        last = loss;
    }
    Ok(TrainStatus::Trained(last))
}

fn pair_input(net: &ReflectionNet, obs: &Observation, action: usize) -> Result<Vec<f64>> {
    let n_actions = net.params.input_dim().saturating_sub(obs.dim());
    if action >= n_actions {
        return Err(Error::Validation(format!(
            "action {action} outside the {n_actions} actions the reflection net scores"
        )));
    }
    Ok(reflection_input(obs, action, n_actions))
}

/// C(s, a) for a single pair.
pub fn confidence(net: &ReflectionNet, obs: &Observation, action: usize) -> Result<f64> {
    Ok(net.params.output(&pair_input(net, obs, action)?)?[0])
}
