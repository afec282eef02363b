use crate::error::{Error, Result};
use crate::library::{product, CycleSpec, SizeConstraint};

/// Upper bound on the number of per-cycle count tuples tabulated.
const MAX_TUPLES: usize = 1 << 26;

/// Which additions the forward mask admits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskRule {
    /// An addition is valid iff the enlarged library stays within `max`.
    MaxOnly,
    /// As `MaxOnly`, and the enlarged design must still be able to reach a
    /// library size inside the window. Removes dead ends such as `2/2/2` with
    /// window `[9, 9]` on `[3,3,3]`, where every addition overshoots.
    #[default]
    Completable,
}

/// Tabulates, for every tuple of per-cycle counts, whether some componentwise
/// larger tuple has a product inside the size window.
#[derive(Debug, Clone)]
pub struct Feasibility {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    constraint: SizeConstraint,
    rule: MaskRule,
    completable: Vec<bool>,
}

impl Feasibility {
    /// Fails when no design at all satisfies the window.
    pub fn new(spec: &CycleSpec, constraint: SizeConstraint, rule: MaskRule) -> Result<Self> {
        let sizes = spec.sizes().to_vec();
        let mut strides = vec![0; sizes.len()];
        let mut total = 1usize;
        for c in (0..sizes.len()).rev() {
            strides[c] = total;
            total = total
                .checked_mul(sizes[c] + 1)
                .filter(|&t| t <= MAX_TUPLES)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "too many count tuples to tabulate for cycle sizes {sizes:?}"
                    ))
                })?;
        }

        let mut completable = vec![false; total];
        let mut counts = vec![0usize; sizes.len()];
        // Descending index order visits every successor before its predecessor.
        for idx in (0..total).rev() {
            let mut rem = idx;
            for c in 0..sizes.len() {
                counts[c] = rem / strides[c];
                rem %= strides[c];
            }
            let size = product(&counts);
            completable[idx] = size <= constraint.max()
                && (size >= constraint.min()
                    || (0..sizes.len())
                        .any(|c| counts[c] < sizes[c] && completable[idx + strides[c]]));
        }
        if !completable[0] {
            return Err(Error::Config(format!(
                "no selection of blocks from {sizes:?} gives a library size in [{}, {}]",
                constraint.min(),
                constraint.max()
            )));
        }
        Ok(Self {
            sizes,
            strides,
            constraint,
            rule,
            completable,
        })
    }

    pub fn rule(&self) -> MaskRule {
        self.rule
    }

    pub fn constraint(&self) -> &SizeConstraint {
        &self.constraint
    }

    fn index(&self, counts: &[usize]) -> usize {
        counts.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Whether a design with these counts can still be completed to a
    /// size-feasible one by adding blocks.
    pub fn is_completable(&self, counts: &[usize]) -> bool {
        self.completable[self.index(counts)]
    }

    /// Whether adding one block to `cycle` is admissible from `counts`.
    pub fn can_add(&self, counts: &[usize], cycle: usize) -> bool {
        if counts[cycle] >= self.sizes[cycle] {
            return false;
        }
        match self.rule {
            MaskRule::MaxOnly => {
                let grown = counts.iter().enumerate().fold(1u64, |acc, (c, &n)| {
                    acc.saturating_mul((n + usize::from(c == cycle)) as u64)
                });
                grown <= self.constraint.max()
            }
            MaskRule::Completable => self.completable[self.index(counts) + self.strides[cycle]],
        }
    }

    pub fn can_stop(&self, counts: &[usize]) -> bool {
        self.constraint.contains(product(counts))
    }

    /// All count tuples whose product lies inside the window.
    pub fn feasible_count_tuples(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut counts = vec![0usize; self.sizes.len()];
        for idx in 0..self.completable.len() {
            if !self.completable[idx] {
                continue;
            }
            let mut rem = idx;
            for c in 0..self.sizes.len() {
                counts[c] = rem / self.strides[c];
                rem %= self.strides[c];
            }
            if self.can_stop(&counts) {
                out.push(counts.clone());
            }
        }
        out
    }
}
