//! GFlowNet samplers trained with Trajectory Balance, over either the flat or
//! the hierarchical construction environment.

mod replay;
mod rollout;
mod tb;
mod train;

pub use replay::{ReplayBuffer, ReplayEntry};
pub use rollout::{rollout_batch, uniform_rollout, Trajectory};
pub use tb::{tb_loss, TbGrads, TbModel, TbTerms};
pub use train::{sample_library_set, train_gfn, GfnConfig, GfnTrainer, TrainRecord};

use rand::Rng;

use crate::env::Environment;
use crate::error::Result;

/// A single trajectory drawn with exploration probability `epsilon`.
pub fn sample_trajectory<E: Environment>(
    model: &TbModel,
    env: &E,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    Ok(rollout_batch(env, &model.forward, 1, epsilon, rng)?
        .pop()
        .expect("one trajectory requested"))
}
