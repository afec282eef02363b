//! Hierarchical construction MDP: each block addition is three micro-steps,
//! choosing a cycle, then a structural cluster within it, then a block within
//! that cluster. Stop is offered only when no micro-triple is in progress.
//!
//! The policy head is a single vector laid out as
//! `[cycles | stop | clusters (max over cycles) | blocks (max cycle size)]`;
//! each phase masks every section but its own.

use super::{Environment, Feasibility, MaskRule, Step};
use crate::cluster::ClusterMap;
use crate::error::{Error, Result};
use crate::library::{CycleSpec, DesignState, SizeConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    ChooseCycle,
    ChooseCluster,
    ChooseBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HierAction {
    Cycle(usize),
    Stop,
    Cluster(usize),
    /// Cycle-local block index.
    Block(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HierState {
    design: DesignState,
    counts: Vec<usize>,
    phase: Phase,
    cycle: Option<usize>,
    cluster: Option<usize>,
}

impl HierState {
    pub fn design(&self) -> &DesignState {
        &self.design
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn chosen_cycle(&self) -> Option<usize> {
        self.cycle
    }

    pub fn chosen_cluster(&self) -> Option<usize> {
        self.cluster
    }
}

#[derive(Debug, Clone)]
pub struct HierEnv {
    spec: CycleSpec,
    constraint: SizeConstraint,
    feasibility: Feasibility,
    clusters: ClusterMap,
    max_clusters: usize,
    max_block: usize,
}

impl HierEnv {
    pub fn new(
        spec: CycleSpec,
        constraint: SizeConstraint,
        clusters: ClusterMap,
        rule: MaskRule,
    ) -> Result<Self> {
        clusters.check_spec(&spec)?;
        let feasibility = Feasibility::new(&spec, constraint, rule)?;
        let max_clusters = clusters.max_cluster_count();
        let max_block = spec.sizes().iter().copied().max().unwrap_or(0);
        Ok(Self {
            spec,
            constraint,
            feasibility,
            clusters,
            max_clusters,
            max_block,
        })
    }

    pub fn clusters(&self) -> &ClusterMap {
        &self.clusters
    }

    /// The ChooseCycle-phase state holding `design`.
    pub fn state(&self, design: DesignState) -> Result<HierState> {
        let counts = design.cycle_counts(&self.spec)?;
        Ok(HierState {
            design,
            counts,
            phase: Phase::ChooseCycle,
            cycle: None,
            cluster: None,
        })
    }

    fn stop_index(&self) -> usize {
        self.spec.n_cycles()
    }

    fn cluster_base(&self) -> usize {
        self.spec.n_cycles() + 1
    }

    fn block_base(&self) -> usize {
        self.cluster_base() + self.max_clusters
    }

    pub fn action_index(&self, action: HierAction) -> usize {
        match action {
            HierAction::Cycle(c) => c,
            HierAction::Stop => self.stop_index(),
            HierAction::Cluster(k) => self.cluster_base() + k,
            HierAction::Block(b) => self.block_base() + b,
        }
    }

    pub fn decode_action(&self, index: usize) -> Result<HierAction> {
        let n = self.spec.n_cycles();
        Ok(match index {
            i if i < n => HierAction::Cycle(i),
            i if i == n => HierAction::Stop,
            i if i < self.block_base() => HierAction::Cluster(i - self.cluster_base()),
            i if i < self.block_base() + self.max_block => HierAction::Block(i - self.block_base()),
            i => {
                return Err(Error::InvalidTransition(format!(
                    "action {i} out of range for {} actions",
                    self.block_base() + self.max_block
                )))
            }
        })
    }

    fn cluster_has_free_block(&self, state: &HierState, cycle: usize, cluster: usize) -> bool {
        self.clusters
            .members(cycle, cluster)
            .iter()
            .any(|&b| !state.design.get(self.spec.flat_index(cycle, b)))
    }

    pub fn valid_mask(&self, state: &HierState) -> Vec<bool> {
        let mut mask = vec![false; self.action_count()];
        match state.phase {
            Phase::ChooseCycle => {
                for (c, m) in mask[..self.spec.n_cycles()].iter_mut().enumerate() {
                    *m = self.feasibility.can_add(&state.counts, c);
                }
                mask[self.stop_index()] = self.feasibility.can_stop(&state.counts);
            }
            Phase::ChooseCluster => {
                let c = state.cycle.expect("cycle chosen in ChooseCluster");
                let base = self.cluster_base();
                for k in 0..self.clusters.cluster_count(c) {
                    mask[base + k] = self.cluster_has_free_block(state, c, k);
                }
            }
            Phase::ChooseBlock => {
                let c = state.cycle.expect("cycle chosen in ChooseBlock");
                let k = state.cluster.expect("cluster chosen in ChooseBlock");
                let base = self.block_base();
                for &b in self.clusters.members(c, k) {
                    mask[base + b] = !state.design.get(self.spec.flat_index(c, b));
                }
            }
        }
        mask
    }

    pub fn step(&self, state: &HierState, action: HierAction) -> Result<Step<HierState>> {
        let idx = self.action_index(action);
        if idx >= self.action_count() || !self.valid_mask(state)[idx] {
            return Err(Error::InvalidTransition(format!(
                "{action:?} is not valid in phase {:?}",
                state.phase
            )));
        }
        let mut next = state.clone();
        match action {
            HierAction::Stop => return Ok(Step::Terminal(state.design.clone())),
            HierAction::Cycle(c) => {
                next.phase = Phase::ChooseCluster;
                next.cycle = Some(c);
            }
            HierAction::Cluster(k) => {
                next.phase = Phase::ChooseBlock;
                next.cluster = Some(k);
            }
            HierAction::Block(b) => {
                let c = state.cycle.expect("cycle chosen");
                next.design.set(self.spec.flat_index(c, b));
                next.counts[c] += 1;
                next.phase = Phase::ChooseCycle;
                next.cycle = None;
                next.cluster = None;
            }
        }
        Ok(Step::Continue(next))
    }

    /// Writes `bits ⊕ one-hot cycle ⊕ one-hot cluster ⊕ [cycle picked, cluster picked]`.
    pub fn encode_observation(&self, state: &HierState, out: &mut [f64]) {
        let bits = self.spec.total_bits();
        let n = self.spec.n_cycles();
        debug_assert_eq!(out.len(), self.observation_len());
        out.fill(0.0);
        state.design.write_f64(&mut out[..bits]);
        if let Some(c) = state.cycle {
            out[bits + c] = 1.0;
        }
        if let Some(k) = state.cluster {
            out[bits + n + k] = 1.0;
        }
        let flags = bits + n + self.max_clusters;
        out[flags] = f64::from(u8::from(state.cycle.is_some()));
        out[flags + 1] = f64::from(u8::from(state.cluster.is_some()));
    }
}

impl Environment for HierEnv {
    type State = HierState;

    fn spec(&self) -> &CycleSpec {
        &self.spec
    }

    fn constraint(&self) -> &SizeConstraint {
        &self.constraint
    }

    fn initial_state(&self) -> HierState {
        HierState {
            design: DesignState::zeros(self.spec.total_bits()),
            counts: vec![0; self.spec.n_cycles()],
            phase: Phase::ChooseCycle,
            cycle: None,
            cluster: None,
        }
    }

    fn action_count(&self) -> usize {
        self.block_base() + self.max_block
    }

    fn observation_len(&self) -> usize {
        self.spec.total_bits() + self.spec.n_cycles() + self.max_clusters + 2
    }

    fn write_observation(&self, state: &HierState, out: &mut [f64]) {
        self.encode_observation(state, out);
    }

    fn action_mask(&self, state: &HierState) -> Vec<bool> {
        self.valid_mask(state)
    }

    fn apply(&self, state: &HierState, action: usize) -> Result<Step<HierState>> {
        self.step(state, self.decode_action(action)?)
    }

    fn design<'a>(&self, state: &'a HierState) -> &'a DesignState {
        &state.design
    }

    fn added_bit(&self, state: &HierState, action: usize) -> Option<usize> {
        match (state.phase, self.decode_action(action)) {
            (Phase::ChooseBlock, Ok(HierAction::Block(b))) => {
                Some(self.spec.flat_index(state.cycle?, b))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(sizes: &[usize], min: u64, max: u64, assign: Vec<Vec<usize>>) -> HierEnv {
        HierEnv::new(
            CycleSpec::new(sizes.to_vec()).unwrap(),
            SizeConstraint::new(min, max).unwrap(),
            ClusterMap::new(assign).unwrap(),
            MaskRule::default(),
        )
        .unwrap()
    }

    fn tiny() -> HierEnv {
        env(&[2, 2, 2], 1, 4, vec![vec![0, 1], vec![0, 0], vec![1, 0]])
    }

    fn cont(s: Step<HierState>) -> HierState {
        match s {
            Step::Continue(s) => s,
            Step::Terminal(_) => panic!("unexpected terminal"),
        }
    }

    #[test]
    fn full_scale_observation_width() {
        let spec = CycleSpec::new(vec![90, 89, 197]).unwrap();
        let assign = vec![
            (0..90).map(|b| b % 10).collect(),
            (0..89).map(|b| b % 10).collect(),
            (0..197).map(|b| b % 20).collect(),
        ];
        let e = HierEnv::new(
            spec,
            SizeConstraint::new(20_000, 25_000).unwrap(),
            ClusterMap::new(assign).unwrap(),
            MaskRule::default(),
        )
        .unwrap();
        assert_eq!(e.observation_len(), 376 + 3 + 20 + 2);
        assert_eq!(e.observation_len(), 401);
    }

    #[test]
    fn fresh_state_mask_and_observation() {
        let e = tiny();
        let s = e.initial_state();
        let m = e.valid_mask(&s);
        assert_eq!(&m[..4], &[true, true, true, false]);
        assert!(m[4..].iter().all(|&v| !v));
        let obs = e.observation(&s);
        assert!(obs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn picking_a_cycle_sets_one_hot_and_flag() {
        let e = tiny();
        let s = cont(e.step(&e.initial_state(), HierAction::Cycle(1)).unwrap());
        assert_eq!(s.phase(), Phase::ChooseCluster);
        assert_eq!(s.chosen_cycle(), Some(1));
        let obs = e.observation(&s);
        assert_eq!(&obs[6..9], &[0.0, 1.0, 0.0]);
        assert_eq!(&obs[11..13], &[1.0, 0.0]);
    }

    #[test]
    fn full_micro_triple_sets_bit_and_resets() {
        let e = tiny();
        let s = cont(e.step(&e.initial_state(), HierAction::Cycle(2)).unwrap());
        let m = e.valid_mask(&s);
        assert_eq!(&m[4..6], &[true, true]);
        let s = cont(e.step(&s, HierAction::Cluster(1)).unwrap());
        let m = e.valid_mask(&s);
        // cluster 1 of cycle 2 holds block 0 only
        assert_eq!(&m[6..8], &[true, false]);
        assert!(e.added_bit(&s, e.action_index(HierAction::Block(0))) == Some(4));
        let s = cont(e.step(&s, HierAction::Block(0)).unwrap());
        assert_eq!(s.phase(), Phase::ChooseCycle);
        assert_eq!(s.design(), &DesignState::parse("00|00|10").unwrap());
        assert_eq!((s.chosen_cycle(), s.chosen_cluster()), (None, None));
    }

    #[test]
    fn stop_only_at_top() {
        let e = tiny();
        let s = e.state(DesignState::parse("10|10|10").unwrap()).unwrap();
        assert!(matches!(
            e.step(&s, HierAction::Stop).unwrap(),
            Step::Terminal(_)
        ));
        let s = cont(e.step(&s, HierAction::Cycle(0)).unwrap());
        assert!(matches!(
            e.step(&s, HierAction::Stop),
            Err(Error::InvalidTransition(_))
        ));
    }

    #[test]
    fn full_cycle_masked() {
        let e = tiny();
        let s = e.state(DesignState::parse("11|00|00").unwrap()).unwrap();
        assert!(!e.valid_mask(&s)[0]);
    }

    #[test]
    fn overshooting_cycle_masked() {
        let e = tiny();
        let s = e.state(DesignState::parse("11|11|10").unwrap()).unwrap();
        let m = e.valid_mask(&s);
        assert_eq!(&m[..4], &[false, false, false, true]);
    }

    #[test]
    fn exhausted_cluster_masked() {
        let e = tiny();
        let s = e.state(DesignState::parse("00|10|00").unwrap()).unwrap();
        let s = cont(e.step(&s, HierAction::Cycle(1)).unwrap());
        // both blocks of cycle 2 share cluster 0, one is still free
        assert_eq!(&e.valid_mask(&s)[4..6], &[true, false]);
        let s = cont(e.step(&s, HierAction::Cluster(0)).unwrap());
        assert_eq!(&e.valid_mask(&s)[6..8], &[false, true]);
    }

    #[test]
    fn action_decoding_roundtrip() {
        let e = tiny();
        for i in 0..e.action_count() {
            assert_eq!(e.action_index(e.decode_action(i).unwrap()), i);
        }
        assert!(e.decode_action(e.action_count()).is_err());
    }
}
