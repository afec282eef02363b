//! Comparison samplers: uniform random construction, per-cycle greedy
//! selection, Metropolis–Hastings over bit flips, and PPO.

mod greedy;
mod mcmc;
mod ppo;
mod random;

pub use greedy::{block_marginals, greedy_select};
pub use mcmc::{
    mcmc_sample, random_feasible_design, McmcChain, McmcConfig, McmcStats, ProposalMode,
    StepOutcome,
};
pub use ppo::{
    ppo_loss, ppo_sample, ppo_train, PpoBatch, PpoCoefs, PpoConfig, PpoGrads, PpoModel, PpoRecord,
    PpoTrainer,
};
pub use random::sample_random;

use crate::error::Result;
use crate::library::{CycleSpec, DesignState, SampleEntry, SampleSet, SizeConstraint};
use crate::reward::{RewardConfig, ScoreTable};

/// Scores designs into a [`SampleSet`].
pub fn score_designs(
    spec: &CycleSpec,
    constraint: &SizeConstraint,
    table: &ScoreTable,
    beta: f64,
    designs: impl IntoIterator<Item = DesignState>,
) -> Result<SampleSet> {
    let reward = RewardConfig::new(beta)?;
    table.check_spec(spec)?;
    let mut set = SampleSet::new(spec.clone(), *constraint, beta);
    for state in designs {
        let mean = table.tensor().library_mean(&state, spec)?;
        set.entries.push(SampleEntry {
            state,
            log_reward: reward.log_reward_from_mean(mean),
            mean_score: mean,
        });
    }
    Ok(set)
}
