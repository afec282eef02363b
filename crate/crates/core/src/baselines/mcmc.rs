use log::info;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::score_designs;
use crate::env::{Feasibility, MaskRule};
use crate::error::{Error, Result};
use crate::library::{encode_selection, CycleSpec, DesignState, SampleSet, SizeConstraint};
use crate::reward::{RewardConfig, ScoreAccumulator, ScoreTable, Tensor3};

/// How proposals that leave the size window are treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalMode {
    /// Redraw without advancing the chain.
    #[default]
    PaperSkip,
    /// Count as a rejected step (plain Metropolis–Hastings on the feasible set).
    StandardReject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub chain_length: usize,
    pub beta: f64,
    pub mode: ProposalMode,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 5000,
            chain_length: 250,
            beta: 64.0,
            mode: ProposalMode::PaperSkip,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.chain_length == 0 {
            return Err(Error::Config(
                "n_chains and chain_length must be positive".into(),
            ));
        }
        RewardConfig::new(self.beta)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// The proposal left the size window (standard-reject mode only).
    OutOfWindow,
    /// No single flip stays inside the window (paper-skip mode only).
    Stuck,
}

/// Counters accumulated over one or more chains.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcStats {
    pub steps: u64,
    pub accepted: u64,
    pub out_of_window: u64,
    /// Proposals discarded without counting a step.
    pub skipped: u64,
    pub stuck: u64,
    /// Reward evaluations, including chain initialization.
    pub proxy_calls: u64,
}

impl McmcStats {
    fn merge(&mut self, o: &McmcStats) {
        self.steps += o.steps;
        self.accepted += o.accepted;
        self.out_of_window += o.out_of_window;
        self.skipped += o.skipped;
        self.stuck += o.stuck;
        self.proxy_calls += o.proxy_calls;
    }
}

/// One Metropolis–Hastings chain over single-bit flips.
pub struct McmcChain<'a> {
    spec: &'a CycleSpec,
    constraint: SizeConstraint,
    tensor: &'a Tensor3,
    beta: f64,
    mode: ProposalMode,
    state: DesignState,
    counts: Vec<usize>,
    acc: ScoreAccumulator,
    mean: f64,
    pub stats: McmcStats,
}

impl<'a> McmcChain<'a> {
    pub fn new(
        spec: &'a CycleSpec,
        constraint: SizeConstraint,
        table: &'a ScoreTable,
        beta: f64,
        mode: ProposalMode,
        init: DesignState,
    ) -> Result<Self> {
        let counts = init.cycle_counts(spec)?;
        let size: u64 = counts.iter().map(|&c| c as u64).product();
        if !constraint.contains(size) {
            return Err(Error::Config(format!(
                "initial design has size {size} outside the window"
            )));
        }
        let acc = ScoreAccumulator::from_state(&init, spec, table.tensor())?;
        let mean = acc.mean()?;
        Ok(Self {
            spec,
            constraint,
            tensor: table.tensor(),
            beta,
            mode,
            state: init,
            counts,
            acc,
            mean,
            stats: McmcStats {
                proxy_calls: 1,
                ..McmcStats::default()
            },
        })
    }

    pub fn state(&self) -> &DesignState {
        &self.state
    }

    pub fn mean_score(&self) -> f64 {
        self.mean
    }

    fn size_after(&self, cycle: usize, add: bool) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(c, &n)| match (c == cycle, add) {
                (false, _) => n as u64,
                (true, true) => n as u64 + 1,
                (true, false) => n as u64 - 1,
            })
            .product()
    }

    fn any_flip_in_window(&self) -> bool {
        (0..self.counts.len()).any(|c| {
            (self.counts[c] < self.spec.cycle_size(c)
                && self.constraint.contains(self.size_after(c, true)))
                || (self.counts[c] > 0 && self.constraint.contains(self.size_after(c, false)))
        })
    }

    /// Probability of accepting a move that changes the mean score by `delta`.
    pub fn acceptance(beta: f64, delta: f64) -> f64 {
        (beta * delta).min(0.0).exp()
    }

    /// Advances the chain by one counted step.
    pub fn step(&mut self, rng: &mut impl Rng) -> Result<StepOutcome> {
        let n = self.spec.total_bits();
        let outcome = loop {
            let bit = rng.random_range(0..n);
            let (cycle, block) = self.spec.locate(bit);
            let add = !self.state.get(bit);
            if !self.constraint.contains(self.size_after(cycle, add)) {
                match self.mode {
                    ProposalMode::StandardReject => break StepOutcome::OutOfWindow,
                    ProposalMode::PaperSkip => {
                        self.stats.skipped += 1;
                        if !self.any_flip_in_window() {
                            break StepOutcome::Stuck;
                        }
                        continue;
                    }
                }
            }
            self.stats.proxy_calls += 1;
            let (sum, size) = self.acc.peek_toggle(self.tensor, cycle, block);
            let proposed = sum / size as f64;
            let alpha = Self::acceptance(self.beta, proposed - self.mean);
            if alpha >= 1.0 || rng.random::<f64>() < alpha {
                if add {
                    self.acc.add_block(self.tensor, cycle, block)?;
                    self.counts[cycle] += 1;
                } else {
                    self.acc.remove_block(self.tensor, cycle, block)?;
                    self.counts[cycle] -= 1;
                }
                self.state.toggle(bit);
                self.mean = self.acc.mean()?;
                break StepOutcome::Accepted;
            }
            break StepOutcome::Rejected;
        };
        self.stats.steps += 1;
        match outcome {
            StepOutcome::Accepted => self.stats.accepted += 1,
            StepOutcome::OutOfWindow => self.stats.out_of_window += 1,
            StepOutcome::Stuck => self.stats.stuck += 1,
            StepOutcome::Rejected => {}
        }
        Ok(outcome)
    }
}

/// Uniform count tuple from the window, then uniform blocks per cycle.
pub fn random_feasible_design(
    spec: &CycleSpec,
    tuples: &[Vec<usize>],
    rng: &mut impl Rng,
) -> Result<DesignState> {
    if tuples.is_empty() {
        return Err(Error::Config(
            "no count tuple lies inside the size window".into(),
        ));
    }
    let counts = &tuples[rng.random_range(0..tuples.len())];
    let selections: Vec<Vec<usize>> = counts
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let mut v = sample_indices(rng, spec.cycle_size(c), k).into_vec();
            v.sort_unstable();
            v
        })
        .collect();
    encode_selection(&selections, spec)
}

/// Runs independent chains from random feasible starts and returns each
/// chain's final state.
pub fn mcmc_sample(
    table: &ScoreTable,
    spec: &CycleSpec,
    constraint: &SizeConstraint,
    cfg: &McmcConfig,
) -> Result<(SampleSet, McmcStats)> {
    cfg.validate()?;
    table.check_spec(spec)?;
    let tuples =
        Feasibility::new(spec, *constraint, MaskRule::Completable)?.feasible_count_tuples();
    let mut total = McmcStats::default();
    let mut finals = Vec::with_capacity(cfg.n_chains);
    for chain in 0..cfg.n_chains {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(chain as u64);
        let init = random_feasible_design(spec, &tuples, &mut rng)?;
        let mut mc = McmcChain::new(spec, *constraint, table, cfg.beta, cfg.mode, init)?;
        for _ in 0..cfg.chain_length {
            mc.step(&mut rng)?;
        }
        total.merge(&mc.stats);
        finals.push(mc.state);
    }
    info!(
        "mcmc: {} chains, {} steps, acceptance {:.3}, {} skipped, {} proxy calls",
        cfg.n_chains,
        total.steps,
        total.accepted as f64 / total.steps.max(1) as f64,
        total.skipped,
        total.proxy_calls
    );
    Ok((
        score_designs(spec, constraint, table, cfg.beta, finals)?,
        total,
    ))
}
