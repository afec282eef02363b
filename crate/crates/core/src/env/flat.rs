//! Flat construction MDP: one action per building block plus a stop action.

use super::{Environment, Feasibility, MaskRule, Step};
use crate::error::{Error, Result};
use crate::library::{CycleSpec, DesignState, SizeConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlatAction {
    Flip(usize),
    Stop,
}

impl FlatAction {
    /// Head index: flips occupy `0..total_bits`, stop is `total_bits`.
    pub fn index(self, total_bits: usize) -> usize {
        match self {
            FlatAction::Flip(i) => i,
            FlatAction::Stop => total_bits,
        }
    }

    pub fn from_index(index: usize, total_bits: usize) -> Result<Self> {
        match index {
            i if i < total_bits => Ok(FlatAction::Flip(i)),
            i if i == total_bits => Ok(FlatAction::Stop),
            i => Err(Error::InvalidTransition(format!(
                "action {i} out of range for {} actions",
                total_bits + 1
            ))),
        }
    }
}

/// A design together with its cached per-cycle counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlatState {
    design: DesignState,
    counts: Vec<usize>,
}

impl FlatState {
    pub fn new(design: DesignState, spec: &CycleSpec) -> Result<Self> {
        let counts = design.cycle_counts(spec)?;
        Ok(Self { design, counts })
    }

    pub fn design(&self) -> &DesignState {
        &self.design
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

#[derive(Debug, Clone)]
pub struct FlatEnv {
    spec: CycleSpec,
    constraint: SizeConstraint,
    feasibility: Feasibility,
}

impl FlatEnv {
    pub fn new(spec: CycleSpec, constraint: SizeConstraint, rule: MaskRule) -> Result<Self> {
        let feasibility = Feasibility::new(&spec, constraint, rule)?;
        Ok(Self {
            spec,
            constraint,
            feasibility,
        })
    }

    pub fn feasibility(&self) -> &Feasibility {
        &self.feasibility
    }

    pub fn state(&self, design: DesignState) -> Result<FlatState> {
        FlatState::new(design, &self.spec)
    }

    /// Mask of length `total_bits + 1`; the last entry is stop.
    pub fn valid_mask(&self, state: &FlatState) -> Vec<bool> {
        let n = self.spec.total_bits();
        let mut mask = vec![false; n + 1];
        for c in 0..self.spec.n_cycles() {
            if !self.feasibility.can_add(&state.counts, c) {
                continue;
            }
            let off = self.spec.offset(c);
            for (i, m) in mask[off..off + self.spec.cycle_size(c)]
                .iter_mut()
                .enumerate()
            {
                *m = !state.design.get(off + i);
            }
        }
        mask[n] = self.feasibility.can_stop(&state.counts);
        mask
    }

    pub fn step(&self, state: &FlatState, action: FlatAction) -> Result<Step<FlatState>> {
        let n = self.spec.total_bits();
        match action {
            FlatAction::Stop => {
                if !self.feasibility.can_stop(&state.counts) {
                    return Err(Error::InvalidTransition(format!(
                        "stop with library size {} outside [{}, {}]",
                        crate::library::product(&state.counts),
                        self.constraint.min(),
                        self.constraint.max()
                    )));
                }
                Ok(Step::Terminal(state.design.clone()))
            }
            FlatAction::Flip(i) => {
                if i >= n {
                    return Err(Error::InvalidTransition(format!(
                        "bit {i} out of range for {n} bits"
                    )));
                }
                if state.design.get(i) {
                    return Err(Error::InvalidTransition(format!("bit {i} is already set")));
                }
                let (cycle, _) = self.spec.locate(i);
                if !self.feasibility.can_add(&state.counts, cycle) {
                    return Err(Error::InvalidTransition(format!(
                        "adding a block to cycle {cycle} is masked by the size window"
                    )));
                }
                let mut next = state.clone();
                next.design.set(i);
                next.counts[cycle] += 1;
                Ok(Step::Continue(next))
            }
        }
    }

    /// Every `(parent, action)` pair leading to `design`: one per set bit.
    pub fn parents(&self, design: &DesignState) -> Vec<(DesignState, FlatAction)> {
        parents_flat(design)
    }
}

/// Parents of `design` under bit-setting transitions.
pub fn parents_flat(design: &DesignState) -> Vec<(DesignState, FlatAction)> {
    design
        .iter_ones()
        .map(|i| {
            let mut p = design.clone();
            p.clear(i);
            (p, FlatAction::Flip(i))
        })
        .collect()
}

impl Environment for FlatEnv {
    type State = FlatState;

    fn spec(&self) -> &CycleSpec {
        &self.spec
    }

    fn constraint(&self) -> &SizeConstraint {
        &self.constraint
    }

    fn initial_state(&self) -> FlatState {
        FlatState {
            design: DesignState::zeros(self.spec.total_bits()),
            counts: vec![0; self.spec.n_cycles()],
        }
    }

    fn action_count(&self) -> usize {
        self.spec.total_bits() + 1
    }

    fn observation_len(&self) -> usize {
        self.spec.total_bits()
    }

    fn write_observation(&self, state: &FlatState, out: &mut [f64]) {
        state.design.write_f64(out);
    }

    fn action_mask(&self, state: &FlatState) -> Vec<bool> {
        self.valid_mask(state)
    }

    fn apply(&self, state: &FlatState, action: usize) -> Result<Step<FlatState>> {
        self.step(
            state,
            FlatAction::from_index(action, self.spec.total_bits())?,
        )
    }

    fn design<'a>(&self, state: &'a FlatState) -> &'a DesignState {
        &state.design
    }

    fn added_bit(&self, _state: &FlatState, action: usize) -> Option<usize> {
        (action < self.spec.total_bits()).then_some(action)
    }
}
