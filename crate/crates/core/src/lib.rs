//! Memory-reflection reinforcement learning on gridworlds.
//!
//! The crate is organised bottom-up:
//!
//! * [`env`]: seedable gridworlds (Cliff Walking, Four Rooms, Dark Chamber).
//! * [`oracle`]: exact tabular dynamic programming and verifiers for reward
//!   shaping invariance and confidence-gated policy improvement.
//! * [`nn`]: a small dense network kernel with analytic backprop and Adam.
//! * [`memory`]: the advantageous-trajectory buffer and the failure buffer.
//! * [`memrefl`]: the prediction and reflection networks.
//! * [`curiosity`]: the autoencoder intrinsic reward.
//! * [`agent`]: PPO with dual discount streams, the ensemble gate and the
//!   full training loop.
//! * [`harness`]: configuration, experiment orchestration and exports.

pub mod agent;
pub mod codec;
pub mod curiosity;
pub mod env;
mod error;
pub mod harness;
pub mod memory;
pub mod memrefl;
pub mod nn;
pub mod oracle;
pub mod seed;

pub use error::{Error, Result};
