//! Fully connected ReLU network with batched forward and backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<R> {
    /// `weights[k]` is `in_k x out_k`.
    pub weights: Vec<Array2<R>>,
    pub biases: Vec<Array1<R>>,
}

/// Activations kept from a forward pass; `acts[0]` is the input and
/// `acts[k]` the post-ReLU output of layer `k - 1`. The last entry is the
/// raw (linear) output.
#[derive(Debug, Clone)]
pub struct MlpTape<R> {
    pub acts: Vec<Array2<R>>,
}

impl<R: Real> MlpTape<R> {
    pub fn output(&self) -> &Array2<R> {
        self.acts.last().unwrap()
    }
}

impl<R: Real> Mlp<R> {
    /// `layers` linear maps: `input -> width -> ... -> width -> output`.
    pub fn new(input: usize, width: usize, output: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(width).take(layers - 1));
        dims.push(output);
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for k in 0..layers {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| R::from_f64(rng.gen_range(-bound..bound))));
            biases.push(Array1::zeros(fan_out));
        }
        Self { weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().ncols()
    }

    pub fn forward(&self, input: Array2<R>) -> MlpTape<R> {
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(input);
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[k].dot(w);
            z += b;
            if k < last {
                z.mapv_inplace(|v| if v > R::zero() { v } else { R::zero() });
            }
            acts.push(z);
        }
        MlpTape { acts }
    }

    /// Accumulate parameter gradients and return the gradient w.r.t. the input.
    pub fn backward(&self, tape: &MlpTape<R>, d_out: Array2<R>, dw: &mut [Array2<R>], db: &mut [Array1<R>]) -> Array2<R> {
        let mut delta = d_out;
        for k in (0..self.weights.len()).rev() {
            if k < self.weights.len() - 1 {
                // ReLU derivative from the stored post-activation
                ndarray::Zip::from(&mut delta)
                    .and(&tape.acts[k + 1])
                    .for_each(|d, &a| {
                        if a <= R::zero() {
                            *d = R::zero();
                        }
                    });
            }
            dw[k] += &tape.acts[k].t().dot(&delta);
            db[k] += &delta.sum_axis(Axis(0));
            delta = delta.dot(&self.weights[k].t());
        }
        delta
    }
}
