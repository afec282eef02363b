use crate::error::{Error, Result};
use crate::library::{encode_selection, DesignState};
use crate::reward::ScoreTable;

/// Mean score of all molecules that contain each block, per cycle.
pub fn block_marginals(table: &ScoreTable) -> [Vec<f64>; 3] {
    let [n0, n1, n2] = table.dims();
    let mut sums = [vec![0.0; n0], vec![0.0; n1], vec![0.0; n2]];
    for i in 0..n0 {
        for j in 0..n1 {
            for k in 0..n2 {
                let p = table.get(i, j, k);
                sums[0][i] += p;
                sums[1][j] += p;
                sums[2][k] += p;
            }
        }
    }
    let per = [n1 * n2, n0 * n2, n0 * n1];
    for (s, &n) in sums.iter_mut().zip(&per) {
        s.iter_mut().for_each(|v| *v /= n as f64);
    }
    sums
}

/// Selects the `k[c]` blocks with the highest marginal in each cycle, lower
/// index first among ties.
pub fn greedy_select(table: &ScoreTable, k: &[usize]) -> Result<DesignState> {
    let spec = table.cycle_spec();
    if k.len() != 3 {
        return Err(Error::Config(format!(
            "expected 3 per-cycle counts, got {}",
            k.len()
        )));
    }
    let marginals = block_marginals(table);
    let mut selections = Vec::with_capacity(3);
    for (c, m) in marginals.iter().enumerate() {
        if k[c] > m.len() {
            return Err(Error::Config(format!(
                "cannot pick {} blocks from cycle {} of size {}",
                k[c],
                c,
                m.len()
            )));
        }
        let mut order: Vec<usize> = (0..m.len()).collect();
        order.sort_by(|&a, &b| m[b].total_cmp(&m[a]).then(a.cmp(&b)));
        order.truncate(k[c]);
        order.sort_unstable();
        selections.push(order);
    }
    encode_selection(&selections, &spec)
}
