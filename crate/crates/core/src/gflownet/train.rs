use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replay::ReplayBuffer;
use super::rollout::{rollout_batch, Trajectory};
use super::tb::{tb_loss, TbModel};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::library::SampleSet;
use crate::neural::Adam;
use crate::reward::{RewardConfig, ScoreTable};

/// Trajectory Balance training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GfnConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Learning rate for log Z; `None` uses `learning_rate`.
    pub log_z_learning_rate: Option<f64>,
    pub forward_batch: usize,
    pub replay_batch: usize,
    pub replay_capacity: usize,
    pub beta: f64,
    /// Probability of a uniformly random valid action during training.
    pub epsilon: f64,
    /// Hidden widths shared by the forward and backward policies.
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for GfnConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            learning_rate: 1e-4,
            log_z_learning_rate: None,
            forward_batch: 50,
            replay_batch: 50,
            replay_capacity: 1000,
            beta: 64.0,
            epsilon: 0.1,
            hidden: vec![512; 4],
            seed: 0,
        }
    }
}

impl GfnConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iterations", self.iterations),
            ("forward_batch", self.forward_batch),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(lr) = self.log_z_learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config("log_z_learning_rate must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        RewardConfig::new(self.beta)?;
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub mean_log_reward: f64,
    pub log_z: f64,
    /// Cumulative number of terminal reward evaluations.
    pub reward_calls: u64,
}

/// A model with its optimizer state, replay buffer and RNG; training can be
/// resumed by calling [`GfnTrainer::step`] again.
pub struct GfnTrainer<'a, E: Environment> {
    pub cfg: GfnConfig,
    pub model: TbModel,
    env: &'a E,
    table: &'a ScoreTable,
    reward: RewardConfig,
    opt_forward: Adam,
    opt_backward: Adam,
    opt_log_z: Adam,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    iteration: usize,
    reward_calls: u64,
}

impl<'a, E: Environment> GfnTrainer<'a, E> {
    pub fn new(cfg: GfnConfig, env: &'a E, table: &'a ScoreTable) -> Result<Self> {
        cfg.validate()?;
        table.check_spec(env.spec())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = TbModel::new(env, &cfg.hidden, &mut rng)?;
        Ok(Self {
            opt_forward: Adam::new(model.forward.param_count(), cfg.learning_rate),
            opt_backward: Adam::new(model.backward.param_count(), cfg.learning_rate),
            opt_log_z: Adam::new(1, cfg.log_z_learning_rate.unwrap_or(cfg.learning_rate)),
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            reward: RewardConfig::new(cfg.beta)?,
            model,
            env,
            table,
            rng,
            iteration: 0,
            reward_calls: 0,
            cfg,
        })
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    fn log_reward(&mut self, traj: &Trajectory) -> Result<f64> {
        self.reward_calls += 1;
        let mean = self
            .table
            .tensor()
            .library_mean(&traj.terminal, self.env.spec())?;
        Ok(self.reward.log_reward_from_mean(mean))
    }

    /// One iteration: fresh rollouts plus replayed trajectories, mean TB loss
    /// over the combined batch, one Adam step on every parameter group.
    pub fn step(&mut self) -> Result<TrainRecord> {
        let replay_ready = self.buffer.len() >= self.cfg.replay_batch;
        let n_fresh = if replay_ready {
            self.cfg.forward_batch
        } else {
            self.cfg.forward_batch + self.cfg.replay_batch
        };
        let fresh = rollout_batch(
            self.env,
            &self.model.forward,
            n_fresh,
            self.cfg.epsilon,
            &mut self.rng,
        )?;
        let mut batch: Vec<(Trajectory, f64)> = Vec::with_capacity(n_fresh + self.cfg.replay_batch);
        for t in fresh {
            let r = self.log_reward(&t)?;
            batch.push((t, r));
        }
        let fresh_mean = batch.iter().map(|(_, r)| r).sum::<f64>() / batch.len() as f64;
        if replay_ready {
            for e in self.buffer.sample(self.cfg.replay_batch, &mut self.rng) {
                batch.push((e.trajectory.clone(), e.log_reward));
            }
        }

        let weight = 1.0 / batch.len() as f64;
        let mut grads = self.model.zero_grads();
        let mut loss = 0.0;
        for (t, r) in &batch {
            loss +=
                weight * tb_loss(&self.model, self.env, t, *r, Some((&mut grads, weight)))?.loss;
        }
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged at iteration {}: loss {loss}, log_z {}",
                self.iteration, self.model.log_z
            )));
        }
        self.opt_forward
            .step(self.model.forward.params_mut(), &grads.forward)?;
        self.opt_backward
            .step(self.model.backward.params_mut(), &grads.backward)?;
        let mut log_z = [self.model.log_z];
        self.opt_log_z.step(&mut log_z, &[grads.log_z])?;
        self.model.log_z = log_z[0];

        for (t, r) in batch.into_iter().take(n_fresh) {
            self.buffer.push(t, r);
        }
        let record = TrainRecord {
            iteration: self.iteration,
            loss,
            mean_log_reward: fresh_mean,
            log_z: self.model.log_z,
            reward_calls: self.reward_calls,
        };
        self.iteration += 1;
        Ok(record)
    }

    /// Runs the configured number of iterations and returns the log.
    pub fn run(&mut self) -> Result<Vec<TrainRecord>> {
        let mut log = Vec::with_capacity(self.cfg.iterations);
        let every = (self.cfg.iterations / 20).max(1);
        for _ in 0..self.cfg.iterations {
            let rec = self.step()?;
            if rec.iteration % every == 0 {
                info!(
                    "iter {:>6}  loss {:>12.5}  mean log R {:>9.4}  log Z {:>9.4}",
                    rec.iteration, rec.loss, rec.mean_log_reward, rec.log_z
                );
            } else {
                debug!("iter {} loss {}", rec.iteration, rec.loss);
            }
            log.push(rec);
        }
        Ok(log)
    }
}

/// Trains a TB model from scratch.
pub fn train_gfn<E: Environment>(
    cfg: &GfnConfig,
    env: &E,
    table: &ScoreTable,
) -> Result<(TbModel, Vec<TrainRecord>)> {
    let mut trainer = GfnTrainer::new(cfg.clone(), env, table)?;
    let log = trainer.run()?;
    Ok((trainer.model, log))
}

/// Draws `n` designs from the forward policy with no exploration noise.
pub fn sample_library_set<E: Environment>(
    model: &TbModel,
    env: &E,
    table: &ScoreTable,
    beta: f64,
    n: usize,
    rng: &mut impl rand::Rng,
) -> Result<SampleSet> {
    model.check_env(env)?;
    let reward = RewardConfig::new(beta)?;
    let mut set = SampleSet::new(env.spec().clone(), *env.constraint(), beta);
    const CHUNK: usize = 256;
    let mut left = n;
    while left > 0 {
        let k = left.min(CHUNK);
        for t in rollout_batch(env, &model.forward, k, 0.0, rng)? {
            let mean = table.tensor().library_mean(&t.terminal, env.spec())?;
            set.entries.push(crate::library::SampleEntry {
                state: t.terminal,
                log_reward: reward.log_reward_from_mean(mean),
                mean_score: mean,
            });
        }
        left -= k;
    }
    Ok(set)
}
