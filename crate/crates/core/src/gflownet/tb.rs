//! Trajectory Balance objective.
//!
//! `L(τ) = (log Z + Σ log P_F(a_t | s_t) − log R(x) − Σ log P_B(s_{t−1} | s_t))²`
//!
//! The backward policy chooses which set bit to remove. Only transitions that
//! complete a block addition have a backward factor; stop and the
//! hierarchical cycle/cluster micro-steps unwind with probability one.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::env::{backward_action_count, backward_mask, Environment, Step};
use crate::error::{Error, Result};
use crate::neural::{layer_sizes, log_prob_grad, masked_log_softmax, Mlp};

/// Forward policy, backward policy and the learned log-partition function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TbModel {
    pub forward: Mlp,
    pub backward: Mlp,
    pub log_z: f64,
}

impl TbModel {
    pub fn new<E: Environment>(
        env: &E,
        hidden: &[usize],
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        let obs = env.observation_len();
        Ok(Self {
            forward: Mlp::new(&layer_sizes(obs, hidden, env.action_count()), rng)?,
            backward: Mlp::new(
                &layer_sizes(obs, hidden, backward_action_count(env.spec())),
                rng,
            )?,
            log_z: 0.0,
        })
    }

    /// Checks head widths against an environment.
    pub fn check_env<E: Environment>(&self, env: &E) -> Result<()> {
        let obs = env.observation_len();
        for (net, out) in [
            (&self.forward, env.action_count()),
            (&self.backward, backward_action_count(env.spec())),
        ] {
            if net.input_dim() != obs {
                return Err(Error::dim(obs, net.input_dim()));
            }
            if net.output_dim() != out {
                return Err(Error::dim(out, net.output_dim()));
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> TbGrads {
        TbGrads {
            forward: vec![0.0; self.forward.param_count()],
            backward: vec![0.0; self.backward.param_count()],
            log_z: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TbGrads {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub log_z: f64,
}

impl TbGrads {
    pub fn is_finite(&self) -> bool {
        self.log_z.is_finite()
            && self.forward.iter().all(|g| g.is_finite())
            && self.backward.iter().all(|g| g.is_finite())
    }
}

/// Observations, masks and chosen indices along a trajectory, split into the
/// forward and backward policy inputs.
struct Replayed {
    fwd_obs: Array2<f64>,
    fwd_masks: Vec<Vec<bool>>,
    fwd_actions: Vec<usize>,
    bwd_obs: Array2<f64>,
    bwd_masks: Vec<Vec<bool>>,
    bwd_actions: Vec<usize>,
}

fn replay<E: Environment>(env: &E, traj: &Trajectory) -> Result<Replayed> {
    let obs_len = env.observation_len();
    let t = traj.actions.len();
    let n_back = traj.terminal.count_ones();
    let mut out = Replayed {
        fwd_obs: Array2::zeros((t, obs_len)),
        fwd_masks: Vec::with_capacity(t),
        fwd_actions: traj.actions.clone(),
        bwd_obs: Array2::zeros((n_back, obs_len)),
        bwd_masks: Vec::with_capacity(n_back),
        bwd_actions: Vec::with_capacity(n_back),
    };
    let mut state = env.initial_state();
    for (step, &a) in traj.actions.iter().enumerate() {
        let mask = env.action_mask(&state);
        if !mask.get(a).copied().unwrap_or(false) {
            return Err(Error::InvalidTrajectory(format!(
                "action {a} at step {step} is not valid"
            )));
        }
        env.write_observation(
            &state,
            out.fwd_obs.row_mut(step).as_slice_mut().expect("row-major"),
        );
        out.fwd_masks.push(mask);
        let added = env.added_bit(&state, a);
        match env.apply(&state, a)? {
            Step::Continue(next) => {
                if let Some(bit) = added {
                    let row = out.bwd_actions.len();
                    if row >= n_back {
                        return Err(Error::InvalidTrajectory(
                            "more additions than set bits in the terminal".into(),
                        ));
                    }
                    env.write_observation(
                        &next,
                        out.bwd_obs.row_mut(row).as_slice_mut().expect("row-major"),
                    );
                    out.bwd_masks.push(backward_mask(env.design(&next)));
                    out.bwd_actions.push(bit);
                }
                state = next;
            }
            Step::Terminal(design) => {
                if step + 1 != t || design != traj.terminal {
                    return Err(Error::InvalidTrajectory(
                        "trajectory does not end at its recorded terminal".into(),
                    ));
                }
                return Ok(out);
            }
        }
    }
    Err(Error::InvalidTrajectory("trajectory never stops".into()))
}

/// Masked log-softmax of every row and the sum of the chosen entries.
fn head_log_probs(
    logits: &Array2<f64>,
    masks: &[Vec<bool>],
    actions: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut total = 0.0;
    let mut rows = Vec::with_capacity(actions.len());
    for (r, (&a, mask)) in actions.iter().zip(masks).enumerate() {
        let lp = masked_log_softmax(logits.row(r).as_slice().expect("row-major"), mask)?;
        if !lp[a].is_finite() {
            return Err(Error::InvalidTrajectory(format!(
                "log-probability {} for action {a}",
                lp[a]
            )));
        }
        total += lp[a];
        rows.push(lp);
    }
    Ok((total, rows))
}

fn head_grad(rows: &[Vec<f64>], actions: &[usize], scale: f64) -> Array2<f64> {
    let width = rows.first().map_or(0, Vec::len);
    let mut grad = Array2::zeros((rows.len(), width));
    for (r, (lp, &a)) in rows.iter().zip(actions).enumerate() {
        log_prob_grad(
            lp,
            a,
            scale,
            grad.row_mut(r).as_slice_mut().expect("row-major"),
        );
    }
    grad
}

/// Result of evaluating the objective on one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TbTerms {
    pub loss: f64,
    pub sum_log_pf: f64,
    pub sum_log_pb: f64,
}

/// Trajectory Balance loss of one trajectory. When `grads` is given, adds
/// `weight · ∂L/∂θ` into it.
pub fn tb_loss<E: Environment>(
    model: &TbModel,
    env: &E,
    traj: &Trajectory,
    log_reward: f64,
    grads: Option<(&mut TbGrads, f64)>,
) -> Result<TbTerms> {
    if !log_reward.is_finite() {
        return Err(Error::InvalidTrajectory(format!("log-reward {log_reward}")));
    }
    let r = replay(env, traj)?;
    let Some((g, weight)) = grads else {
        let f_logits = model.forward.forward(r.fwd_obs.view())?;
        let b_logits = model.backward.forward(r.bwd_obs.view())?;
        let (sum_f, _) = head_log_probs(&f_logits, &r.fwd_masks, &r.fwd_actions)?;
        let (sum_b, _) = head_log_probs(&b_logits, &r.bwd_masks, &r.bwd_actions)?;
        let delta = model.log_z + sum_f - log_reward - sum_b;
        return Ok(TbTerms {
            loss: delta * delta,
            sum_log_pf: sum_f,
            sum_log_pb: sum_b,
        });
    };

    let (f_logits, f_cache) = model.forward.forward_cached(r.fwd_obs.view())?;
    let (b_logits, b_cache) = model.backward.forward_cached(r.bwd_obs.view())?;
    let (sum_f, f_rows) = head_log_probs(&f_logits, &r.fwd_masks, &r.fwd_actions)?;
    let (sum_b, b_rows) = head_log_probs(&b_logits, &r.bwd_masks, &r.bwd_actions)?;
    let delta = model.log_z + sum_f - log_reward - sum_b;
    let coeff = 2.0 * delta * weight;

    let df = head_grad(&f_rows, &r.fwd_actions, coeff);
    model
        .forward
        .backward(&f_cache, df.view(), &mut g.forward)?;
    if !b_rows.is_empty() {
        let db = head_grad(&b_rows, &r.bwd_actions, -coeff);
        model
            .backward
            .backward(&b_cache, db.view(), &mut g.backward)?;
    }
    g.log_z += coeff;
    Ok(TbTerms {
        loss: delta * delta,
        sum_log_pf: sum_f,
        sum_log_pb: sum_b,
    })
}
