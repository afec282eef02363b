//! Library reward: the mean per-molecule score over the Cartesian product of
//! selected blocks, scaled by `beta` in log space.
//!
//! Rewards are handled as `log R(x) = beta * mean_score(x)` everywhere. With
//! `beta = 64` the linear reward reaches `e^64`, so nothing here exponentiates.

use crate::error::{Error, Result};
use crate::library::{decode_selection, CycleSpec, DesignState};

/// Tables with more cells than this are summed with compensation.
pub const COMPENSATED_SUM_THRESHOLD: usize = 1_000_000;

/// Dense row-major 3-way tensor of per-molecule values, `i1` outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    values: Vec<f32>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], values: Vec<f32>) -> Result<Self> {
        let cells = dims.iter().product::<usize>();
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "tensor dims must be positive, got {dims:?}"
            )));
        }
        if values.len() != cells {
            return Err(Error::dim(cells, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at flat index {i}"
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn from_fn(
        dims: [usize; 3],
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(dims.iter().product());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    values.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, values)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        f64::from(self.values[(i * self.dims[1] + j) * self.dims[2] + k])
    }

    pub fn check_spec(&self, spec: &CycleSpec) -> Result<()> {
        if spec.n_cycles() != 3 {
            return Err(Error::Config(format!(
                "score tensors require exactly 3 cycles, spec has {}",
                spec.n_cycles()
            )));
        }
        for c in 0..3 {
            if spec.cycle_size(c) != self.dims[c] {
                return Err(Error::dim(spec.cycle_size(c), self.dims[c]));
            }
        }
        Ok(())
    }

    /// Sum over the Cartesian product `s1 x s2 x s3`.
    pub fn cartesian_sum(&self, sel: &[Vec<usize>]) -> f64 {
        let compensated = self.cells() > COMPENSATED_SUM_THRESHOLD;
        let mut acc = NeumaierSum::default();
        for &i in &sel[0] {
            for &j in &sel[1] {
                let row = (i * self.dims[1] + j) * self.dims[2];
                let mut part = 0.0;
                for &k in &sel[2] {
                    part += f64::from(self.values[row + k]);
                }
                if compensated {
                    acc.add(part);
                } else {
                    acc.sum += part;
                }
            }
        }
        acc.value()
    }

    /// Mean over the decoded library of `state`.
    pub fn library_mean(&self, state: &DesignState, spec: &CycleSpec) -> Result<f64> {
        self.check_spec(spec)?;
        let sel = decode_selection(state, spec)?;
        let size: usize = sel.iter().map(Vec::len).product();
        if size == 0 {
            return Err(Error::EmptyLibrary);
        }
        Ok(self.cartesian_sum(&sel) / size as f64)
    }
}

/// Per-molecule scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable(Tensor3);

impl ScoreTable {
    pub fn new(dims: [usize; 3], values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!(
                "score {} at flat index {i} is outside [0, 1]",
                values[i]
            )));
        }
        Ok(Self(Tensor3::new(dims, values)?))
    }

    pub fn from_fn(dims: [usize; 3], f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let t = Tensor3::from_fn(dims, f)?;
        Self::new(t.dims, t.values)
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }

    pub fn dims(&self) -> [usize; 3] {
        self.0.dims
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.0.get(i, j, k)
    }

    pub fn check_spec(&self, spec: &CycleSpec) -> Result<()> {
        self.0.check_spec(spec)
    }

    /// The spec matching this table's dims.
    pub fn cycle_spec(&self) -> CycleSpec {
        CycleSpec::new(self.0.dims.to_vec()).expect("tensor dims are positive")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    beta: f64,
}

impl RewardConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn log_reward_from_mean(&self, mean: f64) -> f64 {
        self.beta * mean
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { beta: 64.0 }
    }
}

/// Mean score over the library encoded by `state`.
pub fn mean_score(state: &DesignState, spec: &CycleSpec, table: &ScoreTable) -> Result<f64> {
    table.0.library_mean(state, spec)
}

/// `log R(x) = beta * mean_score(x)`.
pub fn log_reward(
    state: &DesignState,
    spec: &CycleSpec,
    table: &ScoreTable,
    cfg: &RewardConfig,
) -> Result<f64> {
    Ok(cfg.log_reward_from_mean(mean_score(state, spec, table)?))
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Running Cartesian sum that follows a design one block at a time.
///
/// Adding block `b` to cycle `c` changes the sum by the slice of the tensor at
/// `b` restricted to the current selections of the other two cycles.
#[derive(Debug, Clone)]
pub struct ScoreAccumulator {
    selections: [Vec<usize>; 3],
    member: [Vec<bool>; 3],
    sum: NeumaierSum,
    // total magnitude folded into `sum` since it was last recomputed
    mass: f64,
}

/// Cancellation ratio past which a removal recomputes the sum from scratch.
const REBUILD_RATIO: f64 = 1e6;

impl ScoreAccumulator {
    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            selections: Default::default(),
            member: dims.map(|n| vec![false; n]),
            sum: NeumaierSum::default(),
            mass: 0.0,
        }
    }

    pub fn from_state(state: &DesignState, spec: &CycleSpec, tensor: &Tensor3) -> Result<Self> {
        tensor.check_spec(spec)?;
        let sel = decode_selection(state, spec)?;
        let mut acc = Self::empty(tensor.dims());
        let total = tensor.cartesian_sum(&sel);
        acc.sum.add(total);
        acc.mass = total.abs();
        for (c, blocks) in sel.into_iter().enumerate() {
            for &b in &blocks {
                acc.member[c][b] = true;
            }
            acc.selections[c] = blocks;
        }
        Ok(acc)
    }

    pub fn sum(&self) -> f64 {
        self.sum.value()
    }

    pub fn selections(&self) -> &[Vec<usize>; 3] {
        &self.selections
    }

    pub fn contains(&self, cycle: usize, block: usize) -> bool {
        self.member[cycle][block]
    }

    pub fn size(&self) -> u64 {
        self.selections.iter().map(|s| s.len() as u64).product()
    }

    pub fn mean(&self) -> Result<f64> {
        match self.size() {
            0 => Err(Error::EmptyLibrary),
            n => Ok(self.sum() / n as f64),
        }
    }

    /// Sum of the tensor over molecules that use `block` in `cycle` together
    /// with the current selections of the other cycles.
    pub fn slice_sum(&self, tensor: &Tensor3, cycle: usize, block: usize) -> f64 {
        let [s0, s1, s2] = &self.selections;
        let mut total = 0.0;
        match cycle {
            0 => {
                for &j in s1 {
                    for &k in s2 {
                        total += tensor.get(block, j, k);
                    }
                }
            }
            1 => {
                for &i in s0 {
                    for &k in s2 {
                        total += tensor.get(i, block, k);
                    }
                }
            }
            2 => {
                for &i in s0 {
                    for &j in s1 {
                        total += tensor.get(i, j, block);
                    }
                }
            }
            _ => panic!("cycle {cycle} out of range for a 3-cycle tensor"),
        }
        total
    }

    fn check_block(&self, cycle: usize, block: usize) -> Result<()> {
        if cycle >= 3 || block >= self.member[cycle].len() {
            return Err(Error::InvalidTransition(format!(
                "block {block} of cycle {cycle} does not exist"
            )));
        }
        Ok(())
    }

    /// Adds `block` to `cycle` and returns the change in the running sum.
    pub fn add_block(&mut self, tensor: &Tensor3, cycle: usize, block: usize) -> Result<f64> {
        self.check_block(cycle, block)?;
        if self.member[cycle][block] {
            return Err(Error::InvalidTransition(format!(
                "block {block} of cycle {cycle} is already selected"
            )));
        }
        let delta = self.slice_sum(tensor, cycle, block);
        self.sum.add(delta);
        self.mass += delta.abs();
        let sel = &mut self.selections[cycle];
        let at = sel.partition_point(|&b| b < block);
        sel.insert(at, block);
        self.member[cycle][block] = true;
        Ok(delta)
    }

    /// Removes `block` from `cycle` and returns the (non-positive) change in
    /// the running sum.
    pub fn remove_block(&mut self, tensor: &Tensor3, cycle: usize, block: usize) -> Result<f64> {
        self.check_block(cycle, block)?;
        if !self.member[cycle][block] {
            return Err(Error::InvalidTransition(format!(
                "block {block} of cycle {cycle} is not selected"
            )));
        }
        let sel = &mut self.selections[cycle];
        let at = sel.partition_point(|&b| b < block);
        sel.remove(at);
        self.member[cycle][block] = false;
        let delta = -self.slice_sum(tensor, cycle, block);
        self.sum.add(delta);
        self.mass += delta.abs();
        if self.mass > REBUILD_RATIO * self.sum().abs() {
            // the surviving sum is small next to what cancelled; rounding in
            // the removed slices would dominate it
            let total = tensor.cartesian_sum(&self.selections);
            self.sum = NeumaierSum::default();
            self.sum.add(total);
            self.mass = total.abs();
        }
        Ok(delta)
    }

    /// Sum and size after toggling `block` in `cycle`, without mutating.
    pub fn peek_toggle(&self, tensor: &Tensor3, cycle: usize, block: usize) -> (f64, u64) {
        let slice = self.slice_sum(tensor, cycle, block);
        let mut counts = self.selections.each_ref().map(|s| s.len() as u64);
        if self.member[cycle][block] {
            counts[cycle] -= 1;
            (self.sum() - slice, counts.iter().product())
        } else {
            counts[cycle] += 1;
            (self.sum() + slice, counts.iter().product())
        }
    }
}
