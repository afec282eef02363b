use rand::Rng;

use crate::error::{Error, Result};

/// Log-probabilities of a softmax restricted to `mask`; masked entries are
/// `-inf`. Computed with a max shift over valid entries.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::dim(logits.len(), mask.len()));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NoValidAction);
    }
    if !max.is_finite() {
        return Err(Error::Numeric(format!("non-finite logit {max}")));
    }
    let sum: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| (l - max).exp())
        .sum();
    let log_z = max + sum.ln();
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - log_z } else { f64::NEG_INFINITY })
        .collect())
}

/// Draws an index from exponentiated log-probabilities.
pub fn sample_log_probs(log_probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_valid = 0;
    for (i, &lp) in log_probs.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        acc += lp.exp();
        last_valid = i;
        if u < acc {
            return i;
        }
    }
    last_valid
}

/// Uniform draw among the `true` entries of `mask`.
pub fn sample_uniform_valid(mask: &[bool], rng: &mut impl Rng) -> Result<usize> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::NoValidAction);
    }
    let pick = rng.random_range(0..n);
    Ok(mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .nth(pick)
        .map(|(i, _)| i)
        .expect("pick < count"))
}
