//! Sequential construction environments.
//!
//! Both environments grow a design monotonically, one building block at a
//! time, and terminate with an explicit stop action. The flat variant exposes
//! one action per bit; the hierarchical variant splits each block choice into
//! cycle, cluster and block micro-steps.

mod feasibility;
pub mod flat;
pub mod hier;

pub use feasibility::{Feasibility, MaskRule};
pub use flat::{FlatAction, FlatEnv, FlatState};
pub use hier::{HierAction, HierEnv, HierState, Phase};

use crate::error::Result;
use crate::library::{CycleSpec, DesignState, SizeConstraint};

/// Outcome of applying a valid action.
#[derive(Debug, Clone, PartialEq)]
pub enum Step<S> {
    Continue(S),
    Terminal(DesignState),
}

/// A finite, monotone construction MDP with a fixed-width action head.
pub trait Environment {
    type State: Clone + std::fmt::Debug;

    fn spec(&self) -> &CycleSpec;

    fn constraint(&self) -> &SizeConstraint;

    fn initial_state(&self) -> Self::State;

    /// Width of the forward policy head.
    fn action_count(&self) -> usize;

    fn observation_len(&self) -> usize;

    fn write_observation(&self, state: &Self::State, out: &mut [f64]);

    fn observation(&self, state: &Self::State) -> Vec<f64> {
        let mut v = vec![0.0; self.observation_len()];
        self.write_observation(state, &mut v);
        v
    }

    fn action_mask(&self, state: &Self::State) -> Vec<bool>;

    fn apply(&self, state: &Self::State, action: usize) -> Result<Step<Self::State>>;

    fn design<'a>(&self, state: &'a Self::State) -> &'a DesignState;

    /// The flat bit set by `action`, if it completes a block addition. Only
    /// these transitions carry a non-trivial backward probability.
    fn added_bit(&self, state: &Self::State, action: usize) -> Option<usize>;
}

/// Width of the backward policy head: one removal choice per bit.
pub fn backward_action_count(spec: &CycleSpec) -> usize {
    spec.total_bits()
}

/// Backward mask: only set bits can be removed.
pub fn backward_mask(design: &DesignState) -> Vec<bool> {
    (0..design.len()).map(|i| design.get(i)).collect()
}
