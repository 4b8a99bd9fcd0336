//! Autoencoder novelty signal.
//!
//! The per-state loss `½‖s − g(f(s))‖² + λ‖f(s)‖₁` is both the training
//! objective and the intrinsic reward, so states the model reconstructs
//! poorly (or encodes densely) pay more.

use rand::seq::index;

use crate::codec::{Reader, Writer};
use crate::env::Observation;
use crate::memrefl::TrainStatus;
use crate::nn::{self, Activation, AdamState, LossKind, NetParams};
use crate::seed::Rng;
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LATENT: usize = 32;
/// Floor on the running standard deviation used for normalization.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseFineModel {
    pub encoder: NetParams,
    pub decoder: NetParams,
    pub lambda_l1: f64,
    /// Moments over the stacked encoder-then-decoder parameters.
    pub adam: AdamState,
    pub train_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Novelty {
    pub reward: f64,
    pub recon_err: f64,
    pub sparsity: f64,
}

impl CoarseFineModel {
    pub fn new(
        obs_dim: usize,
        hidden: usize,
        latent: usize,
        lambda_l1: f64,
        adam_eps: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let encoder = NetParams::init_with_rng(
            &[obs_dim, hidden, latent],
            &[Activation::Relu, Activation::Relu],
            rng,
        )?;
        let mut decoder = NetParams::init_with_rng(
            &[latent, hidden, obs_dim],
            &[Activation::Relu, Activation::Sigmoid],
            rng,
        )?;
        // Start the reconstruction at the one-hot prior 1/obs_dim instead of
        // 0.5, so early loss reflects the cell rather than the output offset.
        if obs_dim > 1 {
            let prior = 1.0 / obs_dim as f64;
            let logit = (prior / (1.0 - prior)).ln();
            decoder.layers.last_mut().expect("two layers").bias.fill(logit);
        }
        Self::from_parts(encoder, decoder, lambda_l1, adam_eps)
    }

    pub fn from_parts(encoder: NetParams, decoder: NetParams, lambda_l1: f64, adam_eps: f64) -> Result<Self> {
        if !(lambda_l1 >= 0.0) || !lambda_l1.is_finite() {
            return Err(Error::Validation(format!("λ must be finite and non-negative, got {lambda_l1}")));
        }
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::Validation(format!(
                "encoder emits {} latents but decoder takes {}",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::Validation(format!(
                "decoder reconstructs {} values for {}-dimensional observations",
                decoder.output_dim(),
                encoder.input_dim()
            )));
        }
        let adam = AdamState::new(&encoder.concat(&decoder)?, adam_eps);
        Ok(CoarseFineModel { encoder, decoder, lambda_l1, adam, train_steps: 0 })
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Encoder and decoder as one network, with the index of the latent layer.
    pub fn stacked(&self) -> (NetParams, usize) {
        let mut layers = self.encoder.layers.clone();
        layers.extend(self.decoder.layers.iter().cloned());
        (NetParams { layers }, self.encoder.layers.len() - 1)
    }

    /// Latent layer handed to `nn::loss_and_grad`, absent when λ is zero.
    pub fn latent_index(&self) -> Option<usize> {
        (self.lambda_l1 > 0.0).then(|| self.encoder.layers.len() - 1)
    }

    pub fn write(&self, w: &mut Writer) {
        nn::write_params(w, &self.encoder);
        nn::write_params(w, &self.decoder);
        w.f64(self.lambda_l1);
        nn::write_adam(w, &self.adam);
        w.u64(self.train_steps);
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        let encoder = nn::read_params(r)?;
        let decoder = nn::read_params(r)?;
        let lambda = r.f64()?;
        let adam = nn::read_adam(r)?;
        let train_steps = r.u64()?;
        let mut model = Self::from_parts(encoder, decoder, lambda, adam.epsilon)?;
        model.adam = adam;
        model.train_steps = train_steps;
        Ok(model)
    }
}

fn check_dim(model: &CoarseFineModel, obs: &Observation) -> Result<()> {
    if obs.dim() != model.obs_dim() {
        return Err(Error::Validation(format!(
            "observation has dimension {}, model expects {}",
            obs.dim(),
            model.obs_dim()
        )));
    }
    Ok(())
}

/// Novelty of one observation under the current parameters.
pub fn intrinsic_reward(model: &CoarseFineModel, obs: &Observation) -> Result<Novelty> {
    check_dim(model, obs)?;
    let x = obs.to_dense();
    let z = model.encoder.output(&x)?;
    let y = model.decoder.output(&z)?;
    let (recon_err, _) = nn::example_loss(&y, &x, LossKind::Mse);
    let (sparsity, _) = nn::l1_with_subgradient(&z);
    let reward = if model.lambda_l1 > 0.0 {
        recon_err + model.lambda_l1 * sparsity
    } else {
        recon_err
    };
    Ok(Novelty { reward, recon_err, sparsity })
}

/// Number of examples drawn from a batch of `n` at `proportion`.
pub fn subsample_size(n: usize, proportion: f64) -> usize {
    ((n as f64 * proportion).floor() as usize).clamp(1, n)
}

/// One Adam step on a uniform subsample (without replacement) of the batch.
pub fn train_autoencoder(
    model: &mut CoarseFineModel,
    obs_batch: &[Observation],
    lr: f64,
    proportion: f64,
    rng: &mut Rng,
) -> Result<TrainStatus> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::Validation(format!("proportion must lie in (0, 1], got {proportion}")));
    }
    if obs_batch.is_empty() {
        return Ok(TrainStatus::Skipped("empty observation batch"));
    }
    for o in obs_batch {
        check_dim(model, o)?;
    }
    let k = subsample_size(obs_batch.len(), proportion);
    let mut picked = index::sample(rng, obs_batch.len(), k).into_vec();
    picked.sort_unstable();
    let dense: Vec<Vec<f64>> = picked.iter().map(|&i| obs_batch[i].to_dense()).collect();
    let batch: Vec<(&[f64], &[f64])> = dense.iter().map(|x| (x.as_slice(), x.as_slice())).collect();

    let (mut stacked, _) = model.stacked();
    let (loss, grads) = nn::loss_and_grad(&stacked, &batch, LossKind::Mse, model.lambda_l1, model.latent_index())?;
    nn::adam_step(&mut stacked, &grads, &mut model.adam, lr)?;
    let (encoder, decoder) = stacked.split_at(model.encoder.layers.len());
    model.encoder = encoder;
    model.decoder = decoder;
    model.train_steps += 1;
    Ok(TrainStatus::Trained(loss))
}

/// `‖f(s)‖₁` for each observation.
pub fn latent_sparsity_profile(model: &CoarseFineModel, obs_list: &[Observation]) -> Result<Vec<f64>> {
    obs_list
        .iter()
        .map(|o| {
            check_dim(model, o)?;
            let z = model.encoder.output(&o.to_dense())?;
            Ok(nn::l1_with_subgradient(&z).0)
        })
        .collect()
}

/// Welford running moments of the raw intrinsic reward stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningNormalizer {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    /// Observations during which the normalized reward is withheld.
    pub warmup: u64,
}

impl RunningNormalizer {
    pub fn new(warmup: u64) -> Self {
        RunningNormalizer { count: 0, mean: 0.0, m2: 0.0, warmup }
    }

    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn in_warmup(&self) -> bool {
        self.count <= self.warmup
    }

    pub fn write(&self, w: &mut Writer) {
        w.u64(self.count);
        w.f64(self.mean);
        w.f64(self.m2);
        w.u64(self.warmup);
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        Ok(RunningNormalizer { count: r.u64()?, mean: r.f64()?, m2: r.f64()?, warmup: r.u64()? })
    }
}

/// Like [`normalize_intrinsic`] but also subtracts the running mean. The
/// training loop uses this form: reconstruction losses share a large common
/// offset, and only the spread between cells says anything about novelty.
pub fn standardize_intrinsic(norm: &mut RunningNormalizer, r_i: f64) -> f64 {
    norm.update(r_i);
    if norm.in_warmup() {
        0.0
    } else {
        (r_i - norm.mean) / norm.std().max(STD_FLOOR)
    }
}

/// Folds `r_i` into the statistics, then scales it by the running std.
/// Returns 0 while the warm-up window is still open.
pub fn normalize_intrinsic(norm: &mut RunningNormalizer, r_i: f64) -> f64 {
    norm.update(r_i);
    if norm.in_warmup() {
        0.0
    } else {
        r_i / norm.std().max(STD_FLOOR)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng as _;

    fn model(lambda: f64, seed: u64) -> CoarseFineModel {
        CoarseFineModel::new(9, 16, 8, lambda, 1e-8, &mut rng_from(seed)).unwrap()
    }

    fn obs(i: usize) -> Observation {
        Observation::new(i, 9).unwrap()
    }

    #[test]
    fn reward_matches_training_loss() {
        for lambda in [0.0, 0.01, 0.3] {
            let m = model(lambda, 7);
            let (stacked, _) = m.stacked();
            for i in 0..9 {
                let x = obs(i).to_dense();
                let (loss, _) =
                    nn::loss_and_grad(&stacked, &[(&x, &x)], LossKind::Mse, lambda, m.latent_index()).unwrap();
                let r = intrinsic_reward(&m, &obs(i)).unwrap();
                assert!((r.reward - loss).abs() < 1e-10, "{} vs {loss}", r.reward);
                assert!(r.reward >= 0.0 && r.recon_err >= 0.0 && r.sparsity >= 0.0);
            }
        }
    }

    #[test]
    fn subsample_is_a_quarter() {
        assert_eq!(subsample_size(128, 0.25), 32);
        assert_eq!(subsample_size(3, 0.25), 1);
        assert_eq!(subsample_size(5, 1.0), 5);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let mut m = model(0.01, 1);
        let before = (m.encoder.clone(), m.decoder.clone());
        let batch: Vec<_> = (0..9).map(obs).collect();
        train_autoencoder(&mut m, &batch, 0.0, 1.0, &mut rng_from(0)).unwrap();
        assert_eq!((m.encoder.clone(), m.decoder.clone()), before);
        assert_eq!(m.train_steps, 1);
    }

    #[test]
    fn empty_batch_skips_and_bad_proportion_fails() {
        let mut m = model(0.01, 1);
        assert!(matches!(
            train_autoencoder(&mut m, &[], 1e-3, 0.5, &mut rng_from(0)).unwrap(),
            TrainStatus::Skipped(_)
        ));
        assert!(train_autoencoder(&mut m, &[obs(0)], 1e-3, 0.0, &mut rng_from(0)).is_err());
    }

    #[test]
    fn trained_state_is_least_novel() {
        let mut m = model(0.01, 3);
        let mut rng = rng_from(3);
        for _ in 0..400 {
            train_autoencoder(&mut m, &[obs(4)], 1e-2, 1.0, &mut rng).unwrap();
        }
        let seen = intrinsic_reward(&m, &obs(4)).unwrap().reward;
        for i in (0..9).filter(|&i| i != 4) {
            assert!(seen < intrinsic_reward(&m, &obs(i)).unwrap().reward);
        }
    }

    #[test]
    fn zero_observation_has_zero_sparsity() {
        let m = model(0.01, 2);
        let z = m.encoder.output(&[0.0; 9]).unwrap();
        assert_eq!(nn::l1_with_subgradient(&z).0, 0.0);
        let p = latent_sparsity_profile(&m, &[obs(2), obs(2)]).unwrap();
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn warmup_withholds_and_floor_saturates() {
        let mut n = RunningNormalizer::new(3);
        for _ in 0..3 {
            assert_eq!(normalize_intrinsic(&mut n, 2.0), 0.0);
        }
        assert_eq!(normalize_intrinsic(&mut n, 2.0), 2.0 / STD_FLOOR);
    }

    #[test]
    fn standardized_stream_is_centered() {
        let mut norm = RunningNormalizer::new(0);
        let out: Vec<f64> = (0..2000).map(|i| standardize_intrinsic(&mut norm, 500.0 + (i % 7) as f64)).collect();
        let tail = &out[1000..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!(tail.iter().all(|v| v.abs() < 3.0));
        let mut warm = RunningNormalizer::new(3);
        assert_eq!(standardize_intrinsic(&mut warm, 9.0), 0.0);
    }

    #[test]
    fn unit_variance_stream_normalizes_to_unit_scale() {
        let mut rng = rng_from(11);
        let mut n = RunningNormalizer::new(0);
        let out: Vec<f64> = (0..10_000)
            .map(|_| {
                let x: f64 = (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0;
                normalize_intrinsic(&mut n, x)
            })
            .skip(100)
            .collect();
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / out.len() as f64).sqrt();
        assert!((0.8..=1.25).contains(&sd), "{sd}");
    }
}
