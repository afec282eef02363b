use log::{debug, info};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::score_designs;
use crate::env::{Environment, Step};
use crate::error::{Error, Result};
use crate::gflownet::{rollout_batch, Trajectory};
use crate::library::SampleSet;
use crate::neural::{layer_sizes, masked_log_softmax, Adam, Mlp};
use crate::reward::{RewardConfig, ScoreTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Environment steps between learning-rate decays.
    pub lr_decay_period: u64,
    pub lr_decay: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub trajectories_per_iteration: usize,
    pub epochs: usize,
    /// Trajectories per minibatch.
    pub minibatch: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1e-4,
            lr_decay_period: 1_000_000,
            lr_decay: 0.5,
            clip: 0.1,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            trajectories_per_iteration: 64,
            epochs: 16,
            minibatch: 2,
            epsilon: 0.001,
            beta: 64.0,
            hidden: vec![256, 256],
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!(
                "clip must lie in (0, 1), got {}",
                self.clip
            )));
        }
        let counts = [
            self.iterations,
            self.trajectories_per_iteration,
            self.epochs,
            self.minibatch,
        ];
        if counts.contains(&0) || self.lr_decay_period == 0 {
            return Err(Error::Config("PPO counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0) {
            return Err(Error::Config(
                "learning rate and decay must be positive".into(),
            ));
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

/// Separate actor (action logits) and critic (state value) networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoModel {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PpoModel {
    pub fn new<E: Environment>(env: &E, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let obs = env.observation_len();
        Ok(Self {
            actor: Mlp::new(&layer_sizes(obs, hidden, env.action_count()), rng)?,
            critic: Mlp::new(&layer_sizes(obs, hidden, 1), rng)?,
        })
    }

    pub fn zero_grads(&self) -> PpoGrads {
        PpoGrads {
            actor: vec![0.0; self.actor.param_count()],
            critic: vec![0.0; self.critic.param_count()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoGrads {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

/// Flattened transitions with their behaviour log-probabilities, returns and
/// advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch {
    pub obs: Array2<f64>,
    pub masks: Vec<Vec<bool>>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn select(&self, rows: &[usize]) -> PpoBatch {
        PpoBatch {
            obs: self.obs.select(Axis(0), rows),
            masks: rows.iter().map(|&r| self.masks[r].clone()).collect(),
            actions: rows.iter().map(|&r| self.actions[r]).collect(),
            old_log_probs: rows.iter().map(|&r| self.old_log_probs[r]).collect(),
            returns: rows.iter().map(|&r| self.returns[r]).collect(),
            advantages: rows.iter().map(|&r| self.advantages[r]).collect(),
        }
    }
}

/// Loss coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoCoefs {
    pub clip: f64,
    pub entropy: f64,
    pub value: f64,
}

impl From<&PpoConfig> for PpoCoefs {
    fn from(c: &PpoConfig) -> Self {
        Self {
            clip: c.clip,
            entropy: c.entropy_coef,
            value: c.value_coef,
        }
    }
}

/// Mean over transitions of
/// `−min(r·A, clip(r, 1−ε, 1+ε)·A) − c_H·H(π(·|s)) + c_V·(V(s) − G)²`
/// with `r = π(a|s) / π_old(a|s)`. When `grads` is given the gradient is
/// added into it.
pub fn ppo_loss(
    model: &PpoModel,
    batch: &PpoBatch,
    coefs: PpoCoefs,
    grads: Option<&mut PpoGrads>,
) -> Result<f64> {
    let n = batch.len();
    if n == 0 {
        return Ok(0.0);
    }
    let inv = 1.0 / n as f64;
    let (logits, a_cache) = model.actor.forward_cached(batch.obs.view())?;
    let (values, c_cache) = model.critic.forward_cached(batch.obs.view())?;
    let mut d_logits = Array2::<f64>::zeros(logits.dim());
    let mut d_values = Array2::<f64>::zeros(values.dim());
    let mut loss = 0.0;
    for t in 0..n {
        let lp = masked_log_softmax(
            logits.row(t).as_slice().expect("row-major"),
            &batch.masks[t],
        )?;
        let a = batch.actions[t];
        let adv = batch.advantages[t];
        let ratio = (lp[a] - batch.old_log_probs[t]).exp();
        let clipped = ratio.clamp(1.0 - coefs.clip, 1.0 + coefs.clip);
        let unclipped_active = ratio * adv <= clipped * adv;
        let surrogate = if unclipped_active {
            ratio * adv
        } else {
            clipped * adv
        };
        let entropy: f64 = lp
            .iter()
            .filter(|l| l.is_finite())
            .map(|&l| -l.exp() * l)
            .sum();
        let v = values[[t, 0]];
        let err = v - batch.returns[t];
        loss += inv * (-surrogate - coefs.entropy * entropy + coefs.value * err * err);

        let ds = if unclipped_active { ratio * adv } else { 0.0 };
        let mut row = d_logits.row_mut(t);
        for (i, &l) in lp.iter().enumerate() {
            if !l.is_finite() {
                continue;
            }
            let p = l.exp();
            let onehot = if i == a { 1.0 } else { 0.0 };
            let d_entropy = -p * (l + entropy);
            row[i] = inv * (-ds * (onehot - p) - coefs.entropy * d_entropy);
        }
        d_values[[t, 0]] = inv * coefs.value * 2.0 * err;
    }
    if let Some(g) = grads {
        model
            .actor
            .backward(&a_cache, d_logits.view(), &mut g.actor)?;
        model
            .critic
            .backward(&c_cache, d_values.view(), &mut g.critic)?;
    }
    Ok(loss)
}

/// Replays trajectories through the environment into transitions, with the
/// terminal return `β · mean` on every step and advantages `G − V(s)`.
fn build_batch<E: Environment>(
    env: &E,
    critic: &Mlp,
    trajs: &[Trajectory],
    returns: &[f64],
) -> Result<(PpoBatch, Vec<std::ops::Range<usize>>)> {
    let total: usize = trajs.iter().map(|t| t.actions.len()).sum();
    let mut obs = Array2::<f64>::zeros((total, env.observation_len()));
    let mut masks = Vec::with_capacity(total);
    let mut ranges = Vec::with_capacity(trajs.len());
    let mut row = 0;
    for t in trajs {
        let start = row;
        let mut state = env.initial_state();
        for &a in &t.actions {
            env.write_observation(&state, obs.row_mut(row).as_slice_mut().expect("row-major"));
            masks.push(env.action_mask(&state));
            row += 1;
            match env.apply(&state, a)? {
                Step::Continue(next) => state = next,
                Step::Terminal(_) => break,
            }
        }
        ranges.push(start..row);
    }
    let values = critic.forward(obs.view())?;
    let mut ret = Vec::with_capacity(total);
    for (t, &g) in trajs.iter().zip(returns) {
        ret.extend(std::iter::repeat_n(g, t.actions.len()));
    }
    let advantages = ret
        .iter()
        .zip(values.column(0))
        .map(|(g, v)| g - v)
        .collect();
    Ok((
        PpoBatch {
            obs,
            masks,
            actions: trajs
                .iter()
                .flat_map(|t| t.actions.iter().copied())
                .collect(),
            old_log_probs: trajs
                .iter()
                .flat_map(|t| t.forward_log_probs.iter().copied())
                .collect(),
            returns: ret,
            advantages,
        },
        ranges,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoRecord {
    pub iteration: usize,
    pub loss: f64,
    pub mean_return: f64,
    pub learning_rate: f64,
    pub env_steps: u64,
}

pub struct PpoTrainer<'a, E: Environment> {
    pub cfg: PpoConfig,
    pub model: PpoModel,
    env: &'a E,
    table: &'a ScoreTable,
    reward: RewardConfig,
    opt_actor: Adam,
    opt_critic: Adam,
    rng: ChaCha8Rng,
    iteration: usize,
    env_steps: u64,
}

impl<'a, E: Environment> PpoTrainer<'a, E> {
    pub fn new(cfg: PpoConfig, env: &'a E, table: &'a ScoreTable) -> Result<Self> {
        cfg.validate()?;
        table.check_spec(env.spec())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = PpoModel::new(env, &cfg.hidden, &mut rng)?;
        Ok(Self {
            opt_actor: Adam::new(model.actor.param_count(), cfg.learning_rate),
            opt_critic: Adam::new(model.critic.param_count(), cfg.learning_rate),
            reward: RewardConfig::new(cfg.beta)?,
            model,
            env,
            table,
            rng,
            iteration: 0,
            env_steps: 0,
            cfg,
        })
    }

    fn current_lr(&self) -> f64 {
        let decays = self.env_steps / self.cfg.lr_decay_period;
        self.cfg.learning_rate * self.cfg.lr_decay.powi(decays.min(i32::MAX as u64) as i32)
    }

    pub fn step(&mut self) -> Result<PpoRecord> {
        let trajs = rollout_batch(
            self.env,
            &self.model.actor,
            self.cfg.trajectories_per_iteration,
            self.cfg.epsilon,
            &mut self.rng,
        )?;
        let returns = trajs
            .iter()
            .map(|t| {
                let mean = self
                    .table
                    .tensor()
                    .library_mean(&t.terminal, self.env.spec())?;
                Ok(self.reward.log_reward_from_mean(mean))
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
        let (batch, ranges) = build_batch(self.env, &self.model.critic, &trajs, &returns)?;
        self.env_steps += batch.len() as u64;
        let lr = self.current_lr();
        self.opt_actor.lr = lr;
        self.opt_critic.lr = lr;

        let coefs = PpoCoefs::from(&self.cfg);
        let mut order: Vec<usize> = (0..trajs.len()).collect();
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.minibatch) {
                let rows: Vec<usize> = chunk.iter().flat_map(|&i| ranges[i].clone()).collect();
                let mb = batch.select(&rows);
                let mut g = self.model.zero_grads();
                let loss = ppo_loss(&self.model, &mb, coefs, Some(&mut g))?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "PPO loss {loss} at iteration {}",
                        self.iteration
                    )));
                }
                self.opt_actor
                    .step(self.model.actor.params_mut(), &g.actor)?;
                self.opt_critic
                    .step(self.model.critic.params_mut(), &g.critic)?;
                loss_sum += loss;
                updates += 1;
            }
        }
        let rec = PpoRecord {
            iteration: self.iteration,
            loss: loss_sum / updates as f64,
            mean_return,
            learning_rate: lr,
            env_steps: self.env_steps,
        };
        self.iteration += 1;
        Ok(rec)
    }

    pub fn run(&mut self) -> Result<Vec<PpoRecord>> {
        let every = (self.cfg.iterations / 20).max(1);
        let mut log = Vec::with_capacity(self.cfg.iterations);
        for _ in 0..self.cfg.iterations {
            let r = self.step()?;
            if r.iteration % every == 0 {
                info!(
                    "ppo iter {:>5}  loss {:>10.4}  mean return {:>8.4}  lr {:.2e}",
                    r.iteration, r.loss, r.mean_return, r.learning_rate
                );
            } else {
                debug!("ppo iter {} loss {}", r.iteration, r.loss);
            }
            log.push(r);
        }
        Ok(log)
    }
}

pub fn ppo_train<E: Environment>(
    env: &E,
    table: &ScoreTable,
    cfg: &PpoConfig,
) -> Result<(PpoModel, Vec<PpoRecord>)> {
    let mut trainer = PpoTrainer::new(cfg.clone(), env, table)?;
    let log = trainer.run()?;
    Ok((trainer.model, log))
}

/// Draws `n` designs from the actor without exploration.
pub fn ppo_sample<E: Environment>(
    model: &PpoModel,
    env: &E,
    table: &ScoreTable,
    beta: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SampleSet> {
    let mut designs = Vec::with_capacity(n);
    let mut left = n;
    while left > 0 {
        let k = left.min(256);
        designs.extend(
            rollout_batch(env, &model.actor, k, 0.0, rng)?
                .into_iter()
                .map(|t| t.terminal),
        );
        left -= k;
    }
    score_designs(env.spec(), env.constraint(), table, beta, designs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{FlatEnv, MaskRule};
    use crate::library::{CycleSpec, SizeConstraint};

    fn env() -> FlatEnv {
        FlatEnv::new(
            CycleSpec::new(vec![1, 2, 2]).unwrap(),
            SizeConstraint::new(1, 4).unwrap(),
            MaskRule::Completable,
        )
        .unwrap()
    }

    fn random_model(env: &FlatEnv, seed: u64) -> PpoModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = PpoModel::new(env, &[7, 5], &mut rng).unwrap();
        for net in [&mut m.actor, &mut m.critic] {
            for p in net.params_mut() {
                *p = rng.random_range(-1.0..1.0);
            }
        }
        m
    }

    fn batch(env: &FlatEnv, model: &PpoModel, seed: u64, shift: f64) -> PpoBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajs = rollout_batch(env, &model.actor, 3, 0.5, &mut rng).unwrap();
        let returns: Vec<f64> = (0..3).map(|i| 1.0 + i as f64).collect();
        let (mut b, _) = build_batch(env, &model.critic, &trajs, &returns).unwrap();
        // move behaviour log-probs so some ratios fall outside the clip range
        for (i, lp) in b.old_log_probs.iter_mut().enumerate() {
            *lp += shift * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        b
    }

    const COEFS: PpoCoefs = PpoCoefs {
        clip: 0.1,
        entropy: 1e-3,
        value: 0.5,
    };

    fn params(m: &mut PpoModel, which: usize) -> &mut [f64] {
        if which == 0 {
            m.actor.params_mut()
        } else {
            m.critic.params_mut()
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let env = env();
        for (seed, shift) in [(0, 0.0), (1, 0.05), (2, 0.4)] {
            let mut m = random_model(&env, seed);
            let b = batch(&env, &m, seed, shift);
            let mut g = m.zero_grads();
            ppo_loss(&m, &b, COEFS, Some(&mut g)).unwrap();
            let h = 1e-5;
            for which in 0..2 {
                let n = if which == 0 {
                    g.actor.len()
                } else {
                    g.critic.len()
                };
                for i in 0..n {
                    let orig = params(&mut m, which)[i];
                    params(&mut m, which)[i] = orig + h;
                    let up = ppo_loss(&m, &b, COEFS, None).unwrap();
                    params(&mut m, which)[i] = orig - h;
                    let down = ppo_loss(&m, &b, COEFS, None).unwrap();
                    params(&mut m, which)[i] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = if which == 0 { g.actor[i] } else { g.critic[i] };
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                    assert!(rel <= 1e-6, "net {which} param {i}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn clipped_ratios_carry_no_surrogate_gradient() {
        let env = env();
        let m = random_model(&env, 4);
        let mut b = batch(&env, &m, 4, 0.0);
        // ratio e^{0.5} > 1.1 with positive advantage: clipped branch
        for lp in b.old_log_probs.iter_mut() {
            *lp -= 0.5;
        }
        b.advantages.iter_mut().for_each(|a| *a = 1.0);
        let coefs = PpoCoefs {
            entropy: 0.0,
            value: 0.0,
            ..COEFS
        };
        let mut g = m.zero_grads();
        let loss = ppo_loss(&m, &b, coefs, Some(&mut g)).unwrap();
        assert!((loss + 1.1).abs() < 1e-12);
        assert!(g.actor.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_advantage_leaves_entropy_gradient_only() {
        let env = env();
        let m = random_model(&env, 5);
        let mut b = batch(&env, &m, 5, 0.2);
        b.advantages.iter_mut().for_each(|a| *a = 0.0);
        let mut g = m.zero_grads();
        ppo_loss(
            &m,
            &b,
            PpoCoefs {
                value: 0.0,
                ..COEFS
            },
            Some(&mut g),
        )
        .unwrap();
        let mut g_ent = m.zero_grads();
        let entropy_only = PpoCoefs {
            clip: 0.1,
            entropy: 1e-3,
            value: 0.0,
        };
        let mut b2 = b.clone();
        b2.old_log_probs.iter_mut().for_each(|l| *l += 7.0);
        ppo_loss(&m, &b2, entropy_only, Some(&mut g_ent)).unwrap();
        for (a, e) in g.actor.iter().zip(&g_ent.actor) {
            assert!((a - e).abs() < 1e-15);
        }
        assert!(g.actor.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn learning_rate_halves_each_period() {
        let env = env();
        let t = ScoreTable::from_fn([1, 2, 2], |_, j, k| (j + k) as f32 / 2.0).unwrap();
        let cfg = PpoConfig {
            hidden: vec![4],
            lr_decay_period: 10,
            ..PpoConfig::default()
        };
        let mut tr = PpoTrainer::new(cfg, &env, &t).unwrap();
        tr.env_steps = 25;
        assert!((tr.current_lr() - 0.25e-4).abs() < 1e-18);
    }
}
