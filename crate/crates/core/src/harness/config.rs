//! Flat `key = value` run configuration.
//!
//! Hyperparameter keys follow the published table names exactly
//! (`NumEnv`, `PPOEps`, ...). Everything else the harness needs has a
//! CamelCase key of the same style. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::agent::{EnsembleConfig, PpoConfig, RewardConfig, TrainConfig};
use crate::env::{make_env, EnvName, GridSpec, SpecOverrides};
use crate::{Error, Result};

/// Parsing and rendering of one config value.
pub trait ConfigValue: Sized {
    fn parse(key: &str, raw: &str) -> Result<Self>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse(key: &str, raw: &str) -> Result<Self> {
        let v: f64 = raw.parse().map_err(|_| Error::config(key, format!("`{raw}` is not a number")))?;
        if !v.is_finite() {
            return Err(Error::config(key, "value must be finite"));
        }
        Ok(v)
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for usize {
    fn parse(key: &str, raw: &str) -> Result<Self> {
        raw.parse().map_err(|_| Error::config(key, format!("`{raw}` is not a non-negative integer")))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse(key: &str, raw: &str) -> Result<Self> {
        raw.parse().map_err(|_| Error::config(key, format!("`{raw}` is not a non-negative integer")))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for bool {
    fn parse(key: &str, raw: &str) -> Result<Self> {
        match raw.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(Error::config(key, format!("`{raw}` is not a boolean"))),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for EnvName {
    fn parse(_key: &str, raw: &str) -> Result<Self> {
        raw.parse()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse(key: &str, raw: &str) -> Result<Self> {
        if raw.eq_ignore_ascii_case("none") {
            Ok(None)
        } else {
            T::parse(key, raw).map(Some)
        }
    }
    fn render(&self) -> String {
        self.as_ref().map_or_else(|| "none".to_string(), T::render)
    }
}

macro_rules! run_config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr => $key:literal, )*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Sets one key from its text form, without range validation.
            pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $( $key => self.$field = ConfigValue::parse(key, raw)?, )*
                    _ => return Err(Error::config(key, "unknown key")),
                }
                Ok(())
            }

            /// Every key in declaration order, one `key = value` per line.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $( writeln!(s, "{} = {}", $key, ConfigValue::render(&self.$field)).unwrap(); )*
                s
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( ($key, ConfigValue::render(&self.$field)), )*]
            }
        }
    };
}

run_config! {
    max_step_per_episode: usize = 4500 => "MaxStepPerEpisode",
    ext_coef: f64 = 2.0 => "ExtCoef",
    learning_rate: f64 = 1e-4 => "LearningRate",
    num_env: usize = 32 => "NumEnv",
    num_step: usize = 128 => "NumStep",
    gamma: f64 = 0.999 => "Gamma",
    int_gamma: f64 = 0.99 => "IntGamma",
    lambda: f64 = 0.95 => "Lambda",
    stable_eps: f64 = 1e-8 => "StableEps",
    clip_grad_norm: f64 = 0.5 => "ClipGradNorm",
    entropy: f64 = 0.001 => "Entropy",
    epoch: usize = 4 => "Epoch",
    mini_batch: usize = 4 => "MiniBatch",
    ppo_eps: f64 = 0.1 => "PPOEps",
    int_coef: f64 = 1.0 => "IntCoef",
    update_proportion: f64 = 0.25 => "UpdateProportion",
    obs_norm_step: usize = 50 => "ObsNormStep",
    confidence: f64 = 0.85 => "Confidence",
    good_buffer_size: usize = 10 => "GoodBufferSize",
    bad_buffer_size: usize = 5000 => "BadBufferSize",
    good_buffer_batch_size: usize = 1 => "GoodBufferBatchSize",
    bad_buffer_batch_size: usize = 128 => "BadBufferBatchSize",
    ori_policy_env_num: usize = 16 => "OriPolicyEnvNum",
    exploit_update: usize = 50 => "ExploitUpdate",
    env: EnvName = EnvName::CliffWalking => "Env",
    /// Overrides the layout's own width and height.
    grid_width: Option<usize> = None => "GridWidth",
    grid_height: Option<usize> = None => "GridHeight",
    seed: u64 = 0 => "Seed",
    num_update: usize = 50 => "NumUpdate",
    f_lambda: f64 = 0.01 => "FLambda",
    exploit_steps: usize = 64 => "ExploitSteps",
    exploit_learning_rate: f64 = 1e-4 => "ExploitLearningRate",
    autoencoder_learning_rate: f64 = 1e-4 => "AutoencoderLearningRate",
    failure_window: usize = 10 => "FailureWindow",
    int_clip: Option<f64> = None => "IntClip",
    value_coef: f64 = 0.5 => "ValueCoef",
    hidden_size: usize = 64 => "HiddenSize",
    latent_size: usize = 32 => "LatentSize",
    disable_memory: bool = false => "DisableMemory",
    disable_curiosity: bool = false => "DisableCuriosity",
    /// Sets the latent sparsity weight to zero.
    disable_f_discriminator: bool = false => "DisableFDiscriminator",
}

fn check(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, message))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.max_step_per_episode >= 1, "MaxStepPerEpisode", "must be at least 1")?;
        check(self.ext_coef >= 0.0, "ExtCoef", "must be non-negative")?;
        check(self.int_coef >= 0.0, "IntCoef", "must be non-negative")?;
        check(self.learning_rate > 0.0, "LearningRate", "must be positive")?;
        check(self.exploit_learning_rate > 0.0, "ExploitLearningRate", "must be positive")?;
        check(self.autoencoder_learning_rate > 0.0, "AutoencoderLearningRate", "must be positive")?;
        check(self.num_env >= 1, "NumEnv", "must be at least 1")?;
        check(self.num_step >= 1, "NumStep", "must be at least 1")?;
        check((0.0..1.0).contains(&self.gamma), "Gamma", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.int_gamma), "IntGamma", "must lie in [0, 1)")?;
        check((0.0..=1.0).contains(&self.lambda), "Lambda", "must lie in [0, 1]")?;
        check(self.stable_eps > 0.0, "StableEps", "must be positive")?;
        check(self.clip_grad_norm > 0.0, "ClipGradNorm", "must be positive")?;
        check(self.entropy >= 0.0, "Entropy", "must be non-negative")?;
        check(self.epoch >= 1, "Epoch", "must be at least 1")?;
        check(
            self.mini_batch >= 1 && self.mini_batch <= self.num_env * self.num_step,
            "MiniBatch",
            "must lie in [1, NumEnv·NumStep]",
        )?;
        check(self.ppo_eps > 0.0 && self.ppo_eps < 1.0, "PPOEps", "must lie in (0, 1)")?;
        check(
            self.update_proportion > 0.0 && self.update_proportion <= 1.0,
            "UpdateProportion",
            "must lie in (0, 1]",
        )?;
        check((0.0..=1.0).contains(&self.confidence), "Confidence", "must lie in [0, 1]")?;
        check(self.good_buffer_size >= 1, "GoodBufferSize", "must be at least 1")?;
        check(self.bad_buffer_size >= 1, "BadBufferSize", "must be at least 1")?;
        check(
            self.good_buffer_batch_size == 1,
            "GoodBufferBatchSize",
            "only one trajectory per exploitation step is supported",
        )?;
        check(self.bad_buffer_batch_size >= 1, "BadBufferBatchSize", "must be at least 1")?;
        check(self.ori_policy_env_num <= self.num_env, "OriPolicyEnvNum", "must not exceed NumEnv")?;
        check(self.exploit_update >= 1, "ExploitUpdate", "must be at least 1")?;
        check(self.grid_width.map_or(true, |w| w >= 1), "GridWidth", "must be at least 1")?;
        check(self.grid_height.map_or(true, |h| h >= 1), "GridHeight", "must be at least 1")?;
        check(self.num_update >= 1, "NumUpdate", "must be at least 1")?;
        check(self.f_lambda >= 0.0, "FLambda", "must be non-negative")?;
        check(self.failure_window >= 1, "FailureWindow", "must be at least 1")?;
        check(self.int_clip.map_or(true, |c| c > 0.0), "IntClip", "must be positive")?;
        check(self.value_coef >= 0.0, "ValueCoef", "must be non-negative")?;
        check(self.hidden_size >= 1, "HiddenSize", "must be at least 1")?;
        check(self.latent_size >= 1, "LatentSize", "must be at least 1")?;
        Ok(())
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// FNV-1a over the canonical text form.
    pub fn hash(&self) -> u64 {
        self.to_text().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let base = SpecOverrides { width: self.grid_width, height: self.grid_height, ..SpecOverrides::default() };
        let layout = make_env(self.env, &base)?;
        let overrides = SpecOverrides {
            max_steps: Some(layout.max_steps.min(self.max_step_per_episode)),
            ..base
        };
        make_env(self.env, &overrides)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        self.validate()?;
        let spec = self.grid_spec()?;
        let has_goal = spec.goal.is_some();
        Ok(TrainConfig {
            spec,
            seed: self.seed,
            num_env: self.num_env,
            num_step: self.num_step,
            updates: self.num_update,
            hidden: self.hidden_size,
            latent: self.latent_size,
            reward: RewardConfig {
                ext_coef: self.ext_coef,
                int_coef: self.int_coef,
                gamma_ext: self.gamma,
                gamma_int: self.int_gamma,
                gae_lambda: self.lambda,
                int_clip: self.int_clip,
            },
            ppo: PpoConfig {
                clip_eps: self.ppo_eps,
                epochs: self.epoch,
                minibatches: self.mini_batch,
                entropy_coef: self.entropy,
                value_coef: self.value_coef,
                max_grad_norm: self.clip_grad_norm,
                lr: self.learning_rate,
                stable_eps: self.stable_eps,
            },
            ensemble: EnsembleConfig {
                kappa: self.confidence,
                ensemble_env_count: self.num_env - self.ori_policy_env_num,
                failure_window: self.failure_window,
            },
            // Without a goal every return ties and the memory only keeps short walks.
            memory_enabled: !self.disable_memory && has_goal,
            curiosity_enabled: !self.disable_curiosity,
            lambda_l1: if self.disable_f_discriminator { 0.0 } else { self.f_lambda },
            update_proportion: self.update_proportion,
            obs_norm_step: self.obs_norm_step,
            good_buffer_size: self.good_buffer_size,
            bad_buffer_size: self.bad_buffer_size,
            bad_batch_size: self.bad_buffer_batch_size,
            exploit_update: self.exploit_update,
            exploit_steps: self.exploit_steps,
            exploit_lr: self.exploit_learning_rate,
            ae_lr: self.autoencoder_learning_rate,
        })
    }
}

/// Defaults, then the file (if any), then `overrides` in order.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Splits a `key=value` command-line override.
pub fn split_override(raw: &str) -> Result<(String, String)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| Error::config(raw, "override must look like key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
