//! Minimal feed-forward stack for the learned samplers: an MLP with exact
//! batched backpropagation, Adam, and masked softmax heads.

mod adam;
mod mlp;
mod softmax;

pub use adam::Adam;
pub use mlp::{ForwardCache, Mlp};
pub use softmax::{masked_log_softmax, sample_log_probs, sample_uniform_valid};

/// Layer widths `[input, hidden.., output]`.
pub fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// Gradient of `Σ_rows w_r · log_softmax(logits_r)[a_r]` w.r.t. the logits of
/// one row: `w · (onehot(a) − p)` on valid entries, zero on masked ones.
pub fn log_prob_grad(log_probs: &[f64], action: usize, weight: f64, out: &mut [f64]) {
    for (i, (&lp, g)) in log_probs.iter().zip(out.iter_mut()).enumerate() {
        let p = if lp == f64::NEG_INFINITY {
            0.0
        } else {
            lp.exp()
        };
        let onehot = if i == action { 1.0 } else { 0.0 };
        *g += weight * (onehot - p);
    }
}
