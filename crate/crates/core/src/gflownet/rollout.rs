use ndarray::Array2;
use rand::Rng;

use crate::env::{Environment, Step};
use crate::error::Result;
use crate::library::DesignState;
use crate::neural::{masked_log_softmax, sample_log_probs, sample_uniform_valid, Mlp};

/// A complete forward trajectory: head indices of every action (ending with
/// stop), the policy's log-probability of each, and the terminal design.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub actions: Vec<usize>,
    pub forward_log_probs: Vec<f64>,
    pub terminal: DesignState,
}

/// Rolls out `n` trajectories in lockstep, batching the policy evaluations of
/// all unfinished trajectories at each depth.
///
/// With probability `epsilon` an action is drawn uniformly among the valid
/// ones, otherwise from the masked policy. Recorded log-probabilities are
/// always the policy's own.
pub fn rollout_batch<E: Environment>(
    env: &E,
    policy: &Mlp,
    n: usize,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    let obs_len = env.observation_len();
    let mut states: Vec<Option<E::State>> = (0..n).map(|_| Some(env.initial_state())).collect();
    let mut actions: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut log_probs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut terminals: Vec<Option<DesignState>> = vec![None; n];

    loop {
        let active: Vec<usize> = (0..n).filter(|&i| states[i].is_some()).collect();
        if active.is_empty() {
            break;
        }
        let mut obs = Array2::<f64>::zeros((active.len(), obs_len));
        for (row, &i) in active.iter().enumerate() {
            let state = states[i].as_ref().expect("active");
            env.write_observation(state, obs.row_mut(row).as_slice_mut().expect("row-major"));
        }
        let logits = policy.forward(obs.view())?;
        for (row, &i) in active.iter().enumerate() {
            let state = states[i].take().expect("active");
            let mask = env.action_mask(&state);
            let lp = masked_log_softmax(logits.row(row).as_slice().expect("row-major"), &mask)?;
            let action = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                sample_uniform_valid(&mask, rng)?
            } else {
                sample_log_probs(&lp, rng)
            };
            actions[i].push(action);
            log_probs[i].push(lp[action]);
            match env.apply(&state, action)? {
                Step::Continue(next) => states[i] = Some(next),
                Step::Terminal(design) => terminals[i] = Some(design),
            }
        }
    }

    Ok(actions
        .into_iter()
        .zip(log_probs)
        .zip(terminals)
        .map(|((actions, forward_log_probs), terminal)| Trajectory {
            actions,
            forward_log_probs,
            terminal: terminal.expect("every rollout terminates"),
        })
        .collect())
}

/// Rolls out trajectories with actions drawn uniformly among valid ones.
pub fn uniform_rollout<E: Environment>(env: &E, rng: &mut impl Rng) -> Result<Trajectory> {
    let mut state = env.initial_state();
    let mut actions = Vec::new();
    let mut forward_log_probs = Vec::new();
    loop {
        let mask = env.action_mask(&state);
        let valid = mask.iter().filter(|&&m| m).count();
        let action = sample_uniform_valid(&mask, rng)?;
        actions.push(action);
        forward_log_probs.push(-(valid as f64).ln());
        match env.apply(&state, action)? {
            Step::Continue(next) => state = next,
            Step::Terminal(terminal) => {
                return Ok(Trajectory {
                    actions,
                    forward_log_probs,
                    terminal,
                })
            }
        }
    }
}
