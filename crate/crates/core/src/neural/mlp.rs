use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feed-forward network: affine + ReLU per hidden layer, affine output.
///
/// All weights and biases live in one flat vector so optimizers and
/// checkpoints treat the network as a single parameter slice. Layer `l`
/// stores its `in x out` weight matrix row-major, followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass: the input of every layer.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// He-uniform weights scaled by fan-in, zero biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        for l in 0..mlp.layer_count() {
            let (fan_in, _) = mlp.layer_shape(l);
            let bound = (6.0 / fan_in as f64).sqrt();
            let (w, _) = mlp.layer_range(l);
            for p in &mut mlp.params[w] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!(
                "an MLP needs at least an input and an output width, all positive; got {sizes:?}"
            )));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Input width, hidden widths and output width.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dim(self.params.len(), params.len()));
        }
        self.params = params;
        Ok(())
    }

    fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.sizes[l], self.sizes[l + 1])
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.sizes[..=l]
            .windows(2)
            .take(l)
            .map(|w| w[0] * w[1] + w[1])
            .sum::<usize>()
    }

    /// Index ranges of layer `l`'s weights and bias in the flat vector.
    fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let off = self.layer_offset(l);
        let (i, o) = self.layer_shape(l);
        (off..off + i * o, off + i * o..off + i * o + o)
    }

    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, _) = self.layer_range(l);
        ArrayView2::from_shape(self.layer_shape(l), &self.params[w]).expect("layer shape")
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, b) = self.layer_range(l);
        ArrayView1::from(&self.params[b])
    }

    pub fn weight_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let shape = self.layer_shape(l);
        let (w, _) = self.layer_range(l);
        ArrayViewMut2::from_shape(shape, &mut self.params[w]).expect("layer shape")
    }

    pub fn bias_mut(&mut self, l: usize) -> ArrayViewMut1<'_, f64> {
        let (_, b) = self.layer_range(l);
        ArrayViewMut1::from(&mut self.params[b])
    }

    fn check_input(&self, input: &ArrayView2<'_, f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), input.ncols()));
        }
        Ok(())
    }

    /// Row-wise forward pass without keeping activations.
    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut x = input.to_owned();
        for l in 0..self.layer_count() {
            x = self.affine(l, x.view());
            if l + 1 < self.layer_count() {
                x.mapv_inplace(relu);
            }
        }
        Ok(x)
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass that keeps what [`Mlp::backward`] needs.
    pub fn forward_cached(
        &self,
        input: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&input)?;
        let mut inputs = Vec::with_capacity(self.layer_count());
        let mut x = input.to_owned();
        for l in 0..self.layer_count() {
            let mut z = self.affine(l, x.view());
            inputs.push(x);
            if l + 1 < self.layer_count() {
                z.mapv_inplace(relu);
            }
            x = z;
        }
        Ok((x, ForwardCache { inputs }))
    }

    fn affine(&self, l: usize, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight(l));
        z += &self.bias(l);
        z
    }

    /// Reverse-mode pass. Accumulates parameter gradients into `grads` (same
    /// layout as [`Mlp::params`]) and returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<'_, f64>,
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        if grads.len() != self.params.len() {
            return Err(Error::dim(self.params.len(), grads.len()));
        }
        if cache.inputs.len() != self.layer_count() {
            return Err(Error::dim(self.layer_count(), cache.inputs.len()));
        }
        let rows = cache.inputs[0].nrows();
        if output_grad.dim() != (rows, self.output_dim()) {
            return Err(Error::dim(rows * self.output_dim(), output_grad.len()));
        }
        let mut delta = output_grad.to_owned();
        for l in (0..self.layer_count()).rev() {
            let a = &cache.inputs[l];
            let shape = self.layer_shape(l);
            let (wr, br) = self.layer_range(l);
            {
                let (gw, gb) = grads[wr.start..br.end].split_at_mut(wr.len());
                let mut gw = ArrayViewMut2::from_shape(shape, gw).expect("layer shape");
                general_mat_mul(1.0, &a.t(), &delta, 1.0, &mut gw);
                let mut gb = ArrayViewMut1::from(gb);
                gb += &delta.sum_axis(Axis(0));
            }
            let mut upstream = delta.dot(&self.weight(l).t());
            if l > 0 {
                // a is the ReLU output of the previous layer
                upstream.zip_mut_with(a, |g, &act| {
                    if act <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = upstream;
        }
        Ok(delta)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn layout_and_counts() {
        let m = Mlp::zeros(&[3, 4, 2]).unwrap();
        assert_eq!(m.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(m.weight(1).dim(), (4, 2));
        assert_eq!(m.bias(0).len(), 4);
        assert!(Mlp::zeros(&[3]).is_err());
        assert!(Mlp::zeros(&[3, 0, 1]).is_err());
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let mut m = Mlp::zeros(&[3, 5, 2]).unwrap();
        m.bias_mut(0).fill(0.7);
        m.bias_mut(1).assign(&array![0.25, -1.5]);
        let out = m.forward_one(&[0.3, -2.0, 4.0]).unwrap();
        assert_eq!(out, vec![0.25, -1.5]);
    }

    #[test]
    fn identity_layer_passes_non_negative_input() {
        let mut m = Mlp::zeros(&[3, 3, 3]).unwrap();
        m.weight_mut(0).assign(&Array2::eye(3));
        m.weight_mut(1).assign(&Array2::eye(3));
        assert_eq!(
            m.forward_one(&[0.5, 0.0, 2.0]).unwrap(),
            vec![0.5, 0.0, 2.0]
        );
    }

    #[test]
    fn width_mismatch() {
        let m = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            m.forward_one(&[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(&[4, 6, 3], &mut rng).unwrap();
        let x = random_input(5, 4, &mut rng);
        let (_, cache) = m.forward_cached(x.view()).unwrap();
        let mut g = vec![0.0; m.param_count()];
        let dx = m
            .backward(&cache, Array2::zeros((5, 3)).view(), &mut g)
            .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_network_sum_loss_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mlp::new(&[3, 2], &mut rng).unwrap();
        let x = array![[1.0, -2.0, 0.5]];
        let (_, cache) = m.forward_cached(x.view()).unwrap();
        let mut g = vec![0.0; m.param_count()];
        m.backward(&cache, Array2::ones((1, 2)).view(), &mut g)
            .unwrap();
        // dW = x^T 1, db = 1
        assert_eq!(g, vec![1.0, 1.0, -2.0, -2.0, 0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn backward_shape_errors() {
        let m = Mlp::zeros(&[2, 2]).unwrap();
        let (_, cache) = m.forward_cached(array![[1.0, 1.0]].view()).unwrap();
        let mut g = vec![0.0; 3];
        assert!(m
            .backward(&cache, array![[1.0, 1.0]].view(), &mut g)
            .is_err());
        let mut g = vec![0.0; m.param_count()];
        assert!(m.backward(&cache, array![[1.0]].view(), &mut g).is_err());
    }

    /// Central finite differences on `loss = Σ c ⊙ f(x)` for random `c`.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..10 {
            let depth = 1 + trial % 3;
            let mut sizes = vec![1 + rng.random_range(0..8)];
            for _ in 0..depth {
                sizes.push(1 + rng.random_range(0..8));
            }
            let mut m = Mlp::new(&sizes, &mut rng).unwrap();
            for b in m.params_mut() {
                *b += rng.random_range(-0.1..0.1);
            }
            let x = random_input(3, sizes[0], &mut rng);
            let c = random_input(3, *sizes.last().unwrap(), &mut rng);
            let loss = |m: &Mlp| (m.forward(x.view()).unwrap() * &c).sum();

            let (_, cache) = m.forward_cached(x.view()).unwrap();
            let mut g = vec![0.0; m.param_count()];
            m.backward(&cache, c.view(), &mut g).unwrap();

            let h = 1e-5;
            for i in 0..m.param_count() {
                let orig = m.params()[i];
                m.params_mut()[i] = orig + h;
                let up = loss(&m);
                m.params_mut()[i] = orig - h;
                let down = loss(&m);
                m.params_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
                assert!(rel <= 1e-6, "param {i}: fd {fd} vs analytic {}", g[i]);
            }
        }
    }
}
