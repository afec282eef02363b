//! Agglomerative clustering of building blocks by fingerprint similarity.
//!
//! Average linkage over Jaccard distance, merged bottom-up until the requested
//! number of clusters remains. Among pairs at equal distance the pair with the
//! lexicographically smallest `(min id, max id)` merges first, where a merged
//! cluster keeps the smaller of its two ids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{CycleSpec, DesignState};

/// Fixed-width binary fingerprints, one per block, grouped by cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintSet {
    cycles: Vec<Vec<DesignState>>,
}

impl FingerprintSet {
    pub fn new(cycles: Vec<Vec<DesignState>>) -> Result<Self> {
        for (c, fps) in cycles.iter().enumerate() {
            if let Some(first) = fps.first() {
                if let Some(bad) = fps.iter().position(|f| f.len() != first.len()) {
                    return Err(Error::Config(format!(
                        "cycle {c}: fingerprint {bad} has width {}, expected {}",
                        fps[bad].len(),
                        first.len()
                    )));
                }
            }
        }
        Ok(Self { cycles })
    }

    pub fn cycles(&self) -> &[Vec<DesignState>] {
        &self.cycles
    }

    pub fn check_spec(&self, spec: &CycleSpec) -> Result<()> {
        if self.cycles.len() != spec.n_cycles() {
            return Err(Error::dim(spec.n_cycles(), self.cycles.len()));
        }
        for (c, fps) in self.cycles.iter().enumerate() {
            if fps.len() != spec.cycle_size(c) {
                return Err(Error::dim(spec.cycle_size(c), fps.len()));
            }
        }
        Ok(())
    }
}

/// `1 - |a ∧ b| / |a ∨ b|`; two empty vectors are at distance 0.
pub fn jaccard_distance(a: &DesignState, b: &DesignState) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words().iter().zip(b.words()) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        0.0
    } else {
        1.0 - f64::from(inter) / f64::from(union)
    }
}

const TIE_EPS: f64 = 1e-12;

/// Per-cycle assignment of blocks to dense cluster ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct ClusterMap {
    assignments: Vec<Vec<usize>>,
    members: Vec<Vec<Vec<usize>>>,
}

impl ClusterMap {
    /// Builds a map from per-cycle assignments; ids must be dense per cycle.
    pub fn new(assignments: Vec<Vec<usize>>) -> Result<Self> {
        let mut members = Vec::with_capacity(assignments.len());
        for (c, assign) in assignments.iter().enumerate() {
            let k = assign.iter().max().map_or(0, |m| m + 1);
            let mut groups = vec![Vec::new(); k];
            for (b, &id) in assign.iter().enumerate() {
                groups[id].push(b);
            }
            if let Some(empty) = groups.iter().position(Vec::is_empty) {
                return Err(Error::Config(format!(
                    "cycle {c}: cluster id {empty} has no blocks (ids must be dense)"
                )));
            }
            members.push(groups);
        }
        Ok(Self {
            assignments,
            members,
        })
    }

    /// One cluster per block.
    pub fn singletons(spec: &CycleSpec) -> Self {
        Self::new(spec.sizes().iter().map(|&n| (0..n).collect()).collect())
            .expect("singleton ids are dense")
    }

    pub fn check_spec(&self, spec: &CycleSpec) -> Result<()> {
        if self.assignments.len() != spec.n_cycles() {
            return Err(Error::dim(spec.n_cycles(), self.assignments.len()));
        }
        for (c, a) in self.assignments.iter().enumerate() {
            if a.len() != spec.cycle_size(c) {
                return Err(Error::dim(spec.cycle_size(c), a.len()));
            }
        }
        Ok(())
    }

    pub fn n_cycles(&self) -> usize {
        self.assignments.len()
    }

    pub fn cluster_count(&self, cycle: usize) -> usize {
        self.members[cycle].len()
    }

    pub fn max_cluster_count(&self) -> usize {
        self.members.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn cluster_of(&self, cycle: usize, block: usize) -> usize {
        self.assignments[cycle][block]
    }

    /// Blocks of `cluster` in `cycle`, ascending.
    pub fn members(&self, cycle: usize, cluster: usize) -> &[usize] {
        &self.members[cycle][cluster]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }
}

impl TryFrom<Vec<Vec<usize>>> for ClusterMap {
    type Error = Error;

    fn try_from(a: Vec<Vec<usize>>) -> Result<Self> {
        ClusterMap::new(a)
    }
}

impl From<ClusterMap> for Vec<Vec<usize>> {
    fn from(m: ClusterMap) -> Self {
        m.assignments
    }
}

/// Average-linkage agglomeration of one cycle's fingerprints into `k`
/// clusters. Returns dense ids ordered by each cluster's smallest block.
pub fn agglomerate(fps: &[DesignState], k: usize) -> Result<Vec<usize>> {
    let n = fps.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {n} blocks"
        )));
    }
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = jaccard_distance(&fps[i], &fps[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut active: Vec<bool> = vec![true; n];
    let mut weight: Vec<usize> = vec![1; n];
    // root[b]: the id of the cluster currently holding block b
    let mut root: Vec<usize> = (0..n).collect();
    let mut remaining = n;

    while remaining > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let d = dist[i * n + j];
                // first pair wins unless strictly closer beyond rounding noise
                if best.is_none_or(|(bd, _, _)| d < bd - TIE_EPS) {
                    best = Some((d, i, j));
                }
            }
        }
        let (_, a, b) = best.expect("at least two active clusters");
        let (wa, wb) = (weight[a] as f64, weight[b] as f64);
        for c in 0..n {
            if active[c] && c != a && c != b {
                let d = (wa * dist[a * n + c] + wb * dist[b * n + c]) / (wa + wb);
                dist[a * n + c] = d;
                dist[c * n + a] = d;
            }
        }
        weight[a] += weight[b];
        active[b] = false;
        for r in root.iter_mut() {
            if *r == b {
                *r = a;
            }
        }
        remaining -= 1;
    }

    let mut dense = vec![usize::MAX; n];
    let mut next = 0;
    Ok(root
        .iter()
        .map(|&r| {
            if dense[r] == usize::MAX {
                dense[r] = next;
                next += 1;
            }
            dense[r]
        })
        .collect())
}

/// Clusters every cycle of `fps` into the requested number of clusters.
pub fn cluster_blocks(fps: &FingerprintSet, n_clusters: &[usize]) -> Result<ClusterMap> {
    if n_clusters.len() != fps.cycles.len() {
        return Err(Error::dim(fps.cycles.len(), n_clusters.len()));
    }
    let assignments = fps
        .cycles
        .iter()
        .zip(n_clusters)
        .map(|(cycle, &k)| agglomerate(cycle, k))
        .collect::<Result<Vec<_>>>()?;
    ClusterMap::new(assignments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(s: &str) -> DesignState {
        DesignState::parse(s).unwrap()
    }

    #[test]
    fn jaccard_values() {
        assert_eq!(jaccard_distance(&fp("1100"), &fp("1100")), 0.0);
        assert_eq!(jaccard_distance(&fp("0011"), &fp("0010")), 0.5);
        assert_eq!(jaccard_distance(&fp("1100"), &fp("0011")), 1.0);
        assert_eq!(jaccard_distance(&fp("0000"), &fp("0000")), 0.0);
        assert_eq!(jaccard_distance(&fp("0000"), &fp("0100")), 1.0);
    }

    #[test]
    fn four_vector_example() {
        let fps = [fp("1100"), fp("1100"), fp("0011"), fp("0010")];
        assert_eq!(agglomerate(&fps, 2).unwrap(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn identical_fingerprints_one_cluster() {
        let fps = vec![fp("101101"); 5];
        assert_eq!(agglomerate(&fps, 1).unwrap(), vec![0; 5]);
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let fps = [fp("1100"), fp("1100"), fp("0011")];
        assert_eq!(agglomerate(&fps, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn too_many_clusters_is_config_error() {
        let set = FingerprintSet::new(vec![vec![fp("10"), fp("01")], vec![fp("11")]]).unwrap();
        assert!(matches!(
            cluster_blocks(&set, &[2, 2]),
            Err(Error::Config(_))
        ));
        assert!(cluster_blocks(&set, &[0, 1]).is_err());
    }

    #[test]
    fn ties_merge_lowest_pair_first() {
        // all pairwise distances are 1.0
        let fps = [fp("1000"), fp("0100"), fp("0010"), fp("0001")];
        assert_eq!(agglomerate(&fps, 3).unwrap(), vec![0, 0, 1, 2]);
        assert_eq!(agglomerate(&fps, 2).unwrap(), vec![0, 0, 0, 1]);
    }

    /// Oracle: recompute average linkage from member lists at every merge.
    fn naive_average_linkage(fps: &[DesignState], k: usize) -> Vec<usize> {
        let mut clusters: Vec<Vec<usize>> = (0..fps.len()).map(|i| vec![i]).collect();
        while clusters.len() > k {
            let mut best = (f64::INFINITY, 0, 0);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let mut total = 0.0;
                    for &x in &clusters[a] {
                        for &y in &clusters[b] {
                            total += jaccard_distance(&fps[x], &fps[y]);
                        }
                    }
                    let d = total / (clusters[a].len() * clusters[b].len()) as f64;
                    if d < best.0 - 1e-12 {
                        best = (d, a, b);
                    }
                }
            }
            let merged = clusters.remove(best.2);
            clusters[best.1].extend(merged);
            clusters[best.1].sort_unstable();
        }
        let mut out = vec![0; fps.len()];
        for (id, c) in clusters.iter().enumerate() {
            for &b in c {
                out[b] = id;
            }
        }
        out
    }

    #[test]
    fn matches_naive_average_linkage() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let n = 6 + trial % 10;
            let fps: Vec<DesignState> = (0..n)
                .map(|_| {
                    DesignState::from_bits(
                        &(0..48).map(|_| rng.random_bool(0.3)).collect::<Vec<_>>(),
                    )
                })
                .collect();
            for k in 1..=n {
                assert_eq!(
                    agglomerate(&fps, k).unwrap(),
                    naive_average_linkage(&fps, k)
                );
            }
        }
    }

    #[test]
    fn mixed_width_rejected() {
        assert!(FingerprintSet::new(vec![vec![fp("10"), fp("011")]]).is_err());
    }

    #[test]
    fn dense_ids_required() {
        assert!(ClusterMap::new(vec![vec![0, 2, 2]]).is_err());
        let m = ClusterMap::new(vec![vec![1, 0, 1], vec![0]]).unwrap();
        assert_eq!(m.members(0, 1), &[0, 2]);
        assert_eq!(m.max_cluster_count(), 2);
    }
}
