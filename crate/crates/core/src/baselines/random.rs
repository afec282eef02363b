use rand::Rng;

use super::score_designs;
use crate::env::Environment;
use crate::error::Result;
use crate::gflownet::uniform_rollout;
use crate::library::SampleSet;
use crate::reward::ScoreTable;

/// `n` designs built by choosing uniformly among valid actions at every step,
/// stop included.
pub fn sample_random<E: Environment>(
    env: &E,
    table: &ScoreTable,
    beta: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SampleSet> {
    let designs = (0..n)
        .map(|_| uniform_rollout(env, rng).map(|t| t.terminal))
        .collect::<Result<Vec<_>>>()?;
    score_designs(env.spec(), env.constraint(), table, beta, designs)
}
