//! Library algebra: synthesis cycles, the binary selection vector, and
//! Cartesian-product size accounting.
//!
//! A design is one flat bit vector covering every building block of every
//! cycle. Block `j` of cycle `i` lives at flat index `offset(i) + j`, where
//! `offset(i)` is the sum of the sizes of all earlier cycles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of available building blocks per synthesis cycle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CycleSpec {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl CycleSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!(
                "at least 2 cycles are required, got {}",
                sizes.len()
            )));
        }
        if let Some(i) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!("cycle {i} has no building blocks")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        for &n in &sizes {
            offsets.push(acc);
            acc += n;
        }
        offsets.push(acc);
        Ok(Self { sizes, offsets })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_cycles(&self) -> usize {
        self.sizes.len()
    }

    pub fn cycle_size(&self, cycle: usize) -> usize {
        self.sizes[cycle]
    }

    pub fn total_bits(&self) -> usize {
        self.offsets[self.sizes.len()]
    }

    /// Flat index of the first block of `cycle`.
    pub fn offset(&self, cycle: usize) -> usize {
        self.offsets[cycle]
    }

    pub fn flat_index(&self, cycle: usize, block: usize) -> usize {
        debug_assert!(block < self.sizes[cycle]);
        self.offsets[cycle] + block
    }

    /// Maps a flat bit index back to `(cycle, block)`.
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        debug_assert!(flat < self.total_bits());
        let cycle = self.offsets.partition_point(|&o| o <= flat) - 1;
        (cycle, flat - self.offsets[cycle])
    }

    /// Size of the full combinatorial library (every block selected).
    pub fn full_library_size(&self) -> u64 {
        self.sizes
            .iter()
            .fold(1u64, |acc, &n| acc.saturating_mul(n as u64))
    }
}

impl TryFrom<Vec<usize>> for CycleSpec {
    type Error = Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        CycleSpec::new(sizes)
    }
}

impl From<CycleSpec> for Vec<usize> {
    fn from(spec: CycleSpec) -> Self {
        spec.sizes
    }
}

/// Inclusive bounds on the number of molecules in a designed library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawConstraint", into = "RawConstraint")]
pub struct SizeConstraint {
    min: u64,
    max: u64,
}

#[derive(Serialize, Deserialize)]
struct RawConstraint {
    min_size: u64,
    max_size: u64,
}

impl TryFrom<RawConstraint> for SizeConstraint {
    type Error = Error;

    fn try_from(raw: RawConstraint) -> Result<Self> {
        SizeConstraint::new(raw.min_size, raw.max_size)
    }
}

impl From<SizeConstraint> for RawConstraint {
    fn from(c: SizeConstraint) -> Self {
        RawConstraint {
            min_size: c.min,
            max_size: c.max,
        }
    }
}

impl SizeConstraint {
    pub fn new(min: u64, max: u64) -> Result<Self> {
        if min == 0 || min > max {
            return Err(Error::Config(format!(
                "size window must satisfy 1 <= min <= max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> u64 {
        self.min
    }

    pub fn max(&self) -> u64 {
        self.max
    }

    pub fn contains(&self, size: u64) -> bool {
        self.min <= size && size <= self.max
    }
}

const WORD: usize = 64;

/// The flat binary selection vector, packed into 64-bit words.
///
/// Bits past `len` in the last word are always zero, so word-wise equality,
/// hashing and population counts are exact.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DesignState {
    words: Vec<u64>,
    len: usize,
}

impl DesignState {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(WORD)],
            len,
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                s.set(i);
            }
        }
        s
    }

    /// Parses a string of `'0'`/`'1'` characters. `'|'` and whitespace are
    /// ignored so cycle separators can be written inline.
    pub fn parse(text: &str) -> Result<Self> {
        let mut bits = Vec::with_capacity(text.len());
        for (pos, ch) in text.chars().enumerate() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                '|' | '_' => {}
                c if c.is_whitespace() => {}
                c => {
                    return Err(Error::Config(format!(
                        "unexpected character {c:?} at position {pos} in bit string"
                    )))
                }
            }
        }
        Ok(Self::from_bits(&bits))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD] |= 1 << (i % WORD);
    }

    pub fn clear(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD] &= !(1 << (i % WORD));
    }

    pub fn toggle(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD] ^= 1 << (i % WORD);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of set bits in `[start, end)`.
    pub fn count_ones_in(&self, start: usize, end: usize) -> usize {
        (start..end).filter(|&i| self.get(i)).count()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * WORD + tz)
            })
        })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Number of differing bits.
    pub fn hamming(&self, other: &DesignState) -> Result<u64> {
        if self.len != other.len {
            return Err(Error::dim(self.len, other.len));
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a ^ b).count_ones()))
            .sum())
    }

    /// Writes the bits as `0.0`/`1.0` into `out`.
    pub fn write_f64(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len);
        out.fill(0.0);
        for i in self.iter_ones() {
            out[i] = 1.0;
        }
    }

    /// Bit string with `'|'` between cycles.
    pub fn to_cycle_string(&self, spec: &CycleSpec) -> String {
        let mut s = String::with_capacity(self.len + spec.n_cycles());
        for c in 0..spec.n_cycles() {
            if c > 0 {
                s.push('|');
            }
            for b in 0..spec.cycle_size(c) {
                s.push(if self.get(spec.flat_index(c, b)) {
                    '1'
                } else {
                    '0'
                });
            }
        }
        s
    }

    fn check_spec(&self, spec: &CycleSpec) -> Result<()> {
        if self.len != spec.total_bits() {
            return Err(Error::dim(spec.total_bits(), self.len));
        }
        Ok(())
    }

    /// Selected block count per cycle.
    pub fn cycle_counts(&self, spec: &CycleSpec) -> Result<Vec<usize>> {
        self.check_spec(spec)?;
        let mut counts = vec![0; spec.n_cycles()];
        for i in self.iter_ones() {
            counts[spec.locate(i).0] += 1;
        }
        Ok(counts)
    }
}

impl fmt::Debug for DesignState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DesignState(")?;
        for i in 0..self.len {
            write!(f, "{}", u8::from(self.get(i)))?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for DesignState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            write!(f, "{}", u8::from(self.get(i)))?;
        }
        Ok(())
    }
}

/// Per-cycle selected block indices (cycle-local, ascending).
pub fn decode_selection(state: &DesignState, spec: &CycleSpec) -> Result<Vec<Vec<usize>>> {
    state.check_spec(spec)?;
    let mut out = vec![Vec::new(); spec.n_cycles()];
    for i in state.iter_ones() {
        let (c, b) = spec.locate(i);
        out[c].push(b);
    }
    Ok(out)
}

/// Inverse of [`decode_selection`].
pub fn encode_selection(selections: &[Vec<usize>], spec: &CycleSpec) -> Result<DesignState> {
    if selections.len() != spec.n_cycles() {
        return Err(Error::dim(spec.n_cycles(), selections.len()));
    }
    let mut state = DesignState::zeros(spec.total_bits());
    for (c, blocks) in selections.iter().enumerate() {
        for &b in blocks {
            if b >= spec.cycle_size(c) {
                return Err(Error::Config(format!(
                    "block {b} out of range for cycle {c} of size {}",
                    spec.cycle_size(c)
                )));
            }
            state.set(spec.flat_index(c, b));
        }
    }
    Ok(state)
}

/// `|L(x)|`: the product of per-cycle selection counts.
pub fn library_size(state: &DesignState, spec: &CycleSpec) -> Result<u64> {
    Ok(product(&state.cycle_counts(spec)?))
}

pub(crate) fn product(counts: &[usize]) -> u64 {
    counts
        .iter()
        .fold(1u64, |acc, &n| acc.saturating_mul(n as u64))
}

/// One terminal design with its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEntry {
    pub state: DesignState,
    pub log_reward: f64,
    pub mean_score: f64,
}

/// A collection of terminal designs, the unit of evaluation and export.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub spec: CycleSpec,
    pub constraint: SizeConstraint,
    pub beta: f64,
    pub entries: Vec<SampleEntry>,
}

impl SampleSet {
    pub fn new(spec: CycleSpec, constraint: SizeConstraint, beta: f64) -> Self {
        Self {
            spec,
            constraint,
            beta,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &DesignState> {
        self.entries.iter().map(|e| &e.state)
    }

    /// Checks that every entry is size-feasible and that each log-reward equals
    /// `beta * mean_score` to within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            let size = library_size(&e.state, &self.spec)?;
            if !self.constraint.contains(size) {
                return Err(Error::Config(format!(
                    "entry {i} has library size {size} outside [{}, {}]",
                    self.constraint.min(),
                    self.constraint.max()
                )));
            }
            if !(0.0..=1.0).contains(&e.mean_score) {
                return Err(Error::Config(format!(
                    "entry {i} has mean score {} outside [0, 1]",
                    e.mean_score
                )));
            }
            if (e.log_reward - self.beta * e.mean_score).abs() > tol * (1.0 + e.log_reward.abs()) {
                return Err(Error::Config(format!(
                    "entry {i}: log-reward {} inconsistent with beta * mean = {}",
                    e.log_reward,
                    self.beta * e.mean_score
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(s: &[usize]) -> CycleSpec {
        CycleSpec::new(s.to_vec()).unwrap()
    }

    #[test]
    fn spec_rejects_degenerate() {
        assert!(CycleSpec::new(vec![3]).is_err());
        assert!(CycleSpec::new(vec![3, 0, 2]).is_err());
        assert_eq!(spec(&[90, 89, 197]).total_bits(), 376);
    }

    #[test]
    fn locate_inverts_flat_index() {
        let s = spec(&[2, 3, 1]);
        for c in 0..3 {
            for b in 0..s.cycle_size(c) {
                assert_eq!(s.locate(s.flat_index(c, b)), (c, b));
            }
        }
    }

    #[test]
    fn decode_examples() {
        let s = spec(&[2, 2, 3]);
        let x = DesignState::parse("10|01|110").unwrap();
        assert_eq!(
            decode_selection(&x, &s).unwrap(),
            vec![vec![0], vec![1], vec![0, 1]]
        );
        let zero = DesignState::zeros(7);
        assert_eq!(
            decode_selection(&zero, &s).unwrap(),
            vec![Vec::<usize>::new(), vec![], vec![]]
        );

        let big = spec(&[90, 89, 197]);
        let mut x = DesignState::zeros(376);
        for c in 0..3 {
            x.set(big.offset(c));
        }
        assert_eq!(
            decode_selection(&x, &big).unwrap(),
            vec![vec![0], vec![0], vec![0]]
        );
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let s = spec(&[2, 2, 3]);
        let x = DesignState::zeros(6);
        assert_eq!(
            decode_selection(&x, &s),
            Err(Error::Dimension {
                expected: 7,
                got: 6
            })
        );
        assert!(matches!(library_size(&x, &s), Err(Error::Dimension { .. })));
    }

    #[test]
    fn library_size_examples() {
        let s = spec(&[2, 2, 3]);
        let x = DesignState::parse("10|11|011").unwrap();
        assert_eq!(library_size(&x, &s).unwrap(), 4);
        assert_eq!(library_size(&DesignState::zeros(7), &s).unwrap(), 0);

        let big = spec(&[90, 89, 197]);
        let all = DesignState::from_bits(&[true; 376]);
        assert_eq!(library_size(&all, &big).unwrap(), 90 * 89 * 197);
        assert_eq!(library_size(&all, &big).unwrap(), 1_577_970);
    }

    #[test]
    fn constraint_bounds() {
        assert!(SizeConstraint::new(0, 3).is_err());
        assert!(SizeConstraint::new(4, 3).is_err());
        let c = SizeConstraint::new(2, 4).unwrap();
        assert!(!c.contains(1) && c.contains(2) && c.contains(4) && !c.contains(5));
    }

    #[test]
    fn packed_bits_past_len_stay_zero() {
        let mut x = DesignState::zeros(70);
        x.set(69);
        x.set(3);
        assert_eq!(x.iter_ones().collect::<Vec<_>>(), vec![3, 69]);
        x.toggle(69);
        assert_eq!(x.count_ones(), 1);
        assert_eq!(
            x,
            DesignState::from_bits(&{
                let mut v = [false; 70];
                v[3] = true;
                v
            })
        );
    }

    fn spec_and_bits() -> impl Strategy<Value = (CycleSpec, Vec<bool>)> {
        prop::collection::vec(1usize..6, 2..5).prop_flat_map(|sizes| {
            let total: usize = sizes.iter().sum();
            (
                Just(CycleSpec::new(sizes).unwrap()),
                prop::collection::vec(any::<bool>(), total),
            )
        })
    }

    proptest! {
        #[test]
        fn decode_encode_roundtrip((s, bits) in spec_and_bits()) {
            let x = DesignState::from_bits(&bits);
            let sel = decode_selection(&x, &s).unwrap();
            prop_assert_eq!(encode_selection(&sel, &s).unwrap(), x);
        }

        #[test]
        fn size_is_monotone_and_zero_iff_empty_cycle((s, bits) in spec_and_bits(), flip in 0usize..64) {
            let x = DesignState::from_bits(&bits);
            let size = library_size(&x, &s).unwrap();
            let sel = decode_selection(&x, &s).unwrap();
            prop_assert_eq!(size == 0, sel.iter().any(|c| c.is_empty()));
            let i = flip % s.total_bits();
            if !x.get(i) {
                let mut y = x.clone();
                y.set(i);
                prop_assert!(library_size(&y, &s).unwrap() >= size);
            }
        }
    }
}
