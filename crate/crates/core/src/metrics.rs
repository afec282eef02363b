//! Evaluation of sample sets: pairwise Hamming diversity, top-k summaries,
//! and per-library property distributions.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{DesignState, SampleSet};
use crate::reward::Tensor3;

/// Sum of Hamming distances over unordered pairs, from per-bit counts:
/// a bit set in `c` of `n` states differs in `c · (n − c)` pairs.
fn pairwise_hamming_sum(states: &[&DesignState]) -> Result<(u128, usize)> {
    let bits = states[0].len();
    let mut ones = vec![0u64; bits];
    for s in states {
        if s.len() != bits {
            return Err(Error::dim(bits, s.len()));
        }
        for i in s.iter_ones() {
            ones[i] += 1;
        }
    }
    let n = states.len() as u128;
    let total = ones.iter().map(|&c| c as u128 * (n - c as u128)).sum();
    Ok((total, bits))
}

/// Mean normalized Hamming distance over all ordered pairs of distinct
/// positions in the sequence.
pub fn diversity<'a>(states: impl IntoIterator<Item = &'a DesignState>) -> Result<f64> {
    let states: Vec<&DesignState> = states.into_iter().collect();
    let n = states.len();
    if n < 2 {
        return Err(Error::UndefinedDiversity(n));
    }
    let (total, bits) = pairwise_hamming_sum(&states)?;
    if bits == 0 {
        return Ok(0.0);
    }
    let pairs = (n as u128) * (n as u128 - 1) / 2;
    Ok(total as f64 / (pairs as f64 * bits as f64))
}

/// Summary statistics of a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub k: usize,
    pub mean_probability: f64,
    /// `None` when fewer than two samples.
    pub diversity: Option<f64>,
    pub top_k_probability: f64,
    pub top_k_diversity: Option<f64>,
    pub top1_probability: f64,
}

/// Indices sorted by log-reward, highest first, stable among ties.
pub fn rank_by_reward(samples: &SampleSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        samples.entries[b]
            .log_reward
            .total_cmp(&samples.entries[a].log_reward)
    });
    order
}

pub fn topk_summary(samples: &SampleSet, k: usize) -> Result<EvalReport> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Config("cannot summarize an empty sample set".into()));
    }
    let k = if k > n {
        warn!("top-k of {k} requested from {n} samples; using {n}");
        n
    } else {
        k.max(1)
    };
    let order = rank_by_reward(samples);
    let mean_of = |idx: &[usize]| {
        idx.iter()
            .map(|&i| samples.entries[i].mean_score)
            .sum::<f64>()
            / idx.len() as f64
    };
    let div_of = |idx: &[usize]| match diversity(idx.iter().map(|&i| &samples.entries[i].state)) {
        Ok(d) => Ok(Some(d)),
        Err(Error::UndefinedDiversity(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let top = &order[..k];
    Ok(EvalReport {
        n_samples: n,
        k,
        mean_probability: mean_of(&order),
        diversity: div_of(&order)?,
        top_k_probability: mean_of(top),
        top_k_diversity: div_of(top)?,
        top1_probability: samples.entries[order[0]].mean_score,
    })
}

/// A named per-molecule property with the same shape as the score table.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyTable {
    pub name: String,
    pub values: Tensor3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub name: String,
    /// `bins + 1` edges; all equal when every value is the same.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Library-average property of each contributing sample.
    pub averages: Vec<f64>,
}

/// Library-average of each property for every sample, binned into `bins`
/// equal-width buckets spanning the observed range.
pub fn property_profile(
    samples: &SampleSet,
    props: &[PropertyTable],
    bins: usize,
) -> Result<Vec<Histogram>> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut out = Vec::with_capacity(props.len());
    for prop in props {
        prop.values.check_spec(&samples.spec)?;
        let mut averages = Vec::with_capacity(samples.len());
        for (i, e) in samples.entries.iter().enumerate() {
            match prop.values.library_mean(&e.state, &samples.spec) {
                Ok(m) => averages.push(m),
                Err(Error::EmptyLibrary) => warn!("sample {i} has an empty library; skipped"),
                Err(err) => return Err(err),
            }
        }
        out.push(histogram(&prop.name, averages, bins));
    }
    Ok(out)
}

fn histogram(name: &str, averages: Vec<f64>, bins: usize) -> Histogram {
    let lo = averages.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = averages.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; bins];
    if averages.is_empty() {
        return Histogram {
            name: name.to_string(),
            edges: Vec::new(),
            counts,
            averages,
        };
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|b| if b == bins { hi } else { lo + width * b as f64 })
        .collect();
    for &a in &averages {
        let b = if width > 0.0 {
            (((a - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Histogram {
        name: name.to_string(),
        edges,
        counts,
        averages,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{CycleSpec, SampleEntry, SizeConstraint};
    use proptest::prelude::*;

    fn st(s: &str) -> DesignState {
        DesignState::parse(s).unwrap()
    }

    #[test]
    fn hand_examples() {
        assert_eq!(diversity([&st("1010"), &st("1010")]).unwrap(), 0.0);
        assert_eq!(diversity([&st("0000"), &st("1111")]).unwrap(), 1.0);
        let v = [st("1100"), st("1010"), st("0110")];
        assert_eq!(diversity(&v).unwrap(), 0.5);
        assert_eq!(diversity([&st("1")]), Err(Error::UndefinedDiversity(1)));
        assert!(diversity([&st("10"), &st("101")]).is_err());
    }

    fn sample_set(rewards: &[(f64, &str)]) -> SampleSet {
        let spec = CycleSpec::new(vec![2, 2]).unwrap();
        let mut s = SampleSet::new(spec, SizeConstraint::new(1, 4).unwrap(), 1.0);
        for &(m, bits) in rewards {
            s.entries.push(SampleEntry {
                state: st(bits),
                log_reward: m,
                mean_score: m,
            });
        }
        s
    }

    #[test]
    fn topk_of_hand_set_samples() {
        let s = sample_set(&[
            (0.2, "1010"),
            (0.9, "1111"),
            (0.5, "0101"),
            (0.7, "1001"),
            (0.1, "0110"),
        ]);
        let r = topk_summary(&s, 2).unwrap();
        assert_eq!(r.top1_probability, 0.9);
        assert!((r.top_k_probability - 0.8).abs() < 1e-15);
        assert!((r.mean_probability - 0.48).abs() < 1e-15);
        // 1111 vs 1001: two of four bits differ
        assert_eq!(r.top_k_diversity, Some(0.5));
        let all = topk_summary(&s, 99).unwrap();
        assert_eq!(all.k, 5);
        assert_eq!(all.top_k_probability, all.mean_probability);
        assert_eq!(all.top_k_diversity, all.diversity);
    }

    #[test]
    fn equal_rewards_keep_insertion_order() {
        let s = sample_set(&[(0.3, "1010"), (0.3, "0101"), (0.3, "1111")]);
        assert_eq!(rank_by_reward(&s), vec![0, 1, 2]);
        let r = topk_summary(&s, 1).unwrap();
        assert_eq!(r.top_k_probability, r.mean_probability);
        assert_eq!(r.top_k_diversity, None);
    }

    fn spec222_set(states: &[&str]) -> SampleSet {
        let spec = CycleSpec::new(vec![2, 2, 2]).unwrap();
        let mut s = SampleSet::new(spec, SizeConstraint::new(1, 8).unwrap(), 1.0);
        for b in states {
            s.entries.push(SampleEntry {
                state: st(b),
                log_reward: 0.0,
                mean_score: 0.0,
            });
        }
        s
    }

    #[test]
    fn constant_property_fills_one_bin() {
        let s = spec222_set(&["10|10|10", "11|11|11", "01|11|10"]);
        let p = PropertyTable {
            name: "mw".into(),
            values: Tensor3::from_fn([2, 2, 2], |_, _, _| 3.5).unwrap(),
        };
        let h = &property_profile(&s, &[p], 4).unwrap()[0];
        assert_eq!(h.counts, vec![3, 0, 0, 0]);
        assert!(h.edges.iter().all(|&e| (e - 3.5).abs() < 1e-6));
    }

    #[test]
    fn property_averages_match_enumeration() {
        let s = spec222_set(&["10|11|01", "11|01|11", "00|11|11"]);
        let f = |i: usize, j: usize, k: usize| (i * 4 + j * 2 + k) as f32 * 1.5 - 2.0;
        let p = PropertyTable {
            name: "logp".into(),
            values: Tensor3::from_fn([2, 2, 2], f).unwrap(),
        };
        let h = &property_profile(&s, &[p], 3).unwrap()[0];
        // the empty first cycle of the third sample is skipped
        assert_eq!(h.averages.len(), 2);
        let brute = |sel: [&[usize]; 3]| {
            let mut t = 0.0;
            let mut n = 0.0;
            for &i in sel[0] {
                for &j in sel[1] {
                    for &k in sel[2] {
                        t += f(i, j, k) as f64;
                        n += 1.0;
                    }
                }
            }
            t / n
        };
        assert!((h.averages[0] - brute([&[0], &[0, 1], &[1]])).abs() < 1e-12);
        assert!((h.averages[1] - brute([&[0, 1], &[1], &[0, 1]])).abs() < 1e-12);
        assert_eq!(h.counts.iter().sum::<usize>(), 2);
    }

    proptest! {
        #[test]
        fn diversity_bounded_and_permutation_invariant(
            bits in prop::collection::vec(prop::collection::vec(any::<bool>(), 70), 2..12),
            rot in 0usize..12,
        ) {
            let states: Vec<DesignState> = bits.iter().map(|b| DesignState::from_bits(b)).collect();
            let d = diversity(&states).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            let mut rotated = states.clone();
            rotated.rotate_left(rot % states.len());
            prop_assert_eq!(diversity(&rotated).unwrap(), d);
            let repeated = vec![states[0].clone(); states.len()];
            prop_assert_eq!(diversity(&repeated).unwrap(), 0.0);
        }
    }
}
