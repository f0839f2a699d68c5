//! Fully connected ReLU networks with a linear output layer.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{matmul, matmul_a_bt, matmul_at_b_acc};
use crate::error::ModelError;

/// Weights are stored `fan_in × fan_out`, row-major, so a batch of row
/// vectors multiplies from the left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Result<Self, ModelError> {
        check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    /// Uniform weights in `±1/√fan_in`, zero biases.
    pub fn init<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self, ModelError> {
        let mut p = Self::zeros(sizes)?;
        for (l, w) in p.weights.iter_mut().enumerate() {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes).expect("sizes already validated")
    }

    /// `(name suffix, shape, values)` for every tensor, weights before biases per layer.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.n_layers());
        for l in 0..self.n_layers() {
            out.push((format!("layer{l}.weight"), vec![self.sizes[l], self.sizes[l + 1]], &self.weights[l][..]));
            out.push((format!("layer{l}.bias"), vec![self.sizes[l + 1]], &self.biases[l][..]));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::with_capacity(2 * self.n_layers());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Batched forward pass over `rows` inputs laid out row-major.
    pub fn forward_batch(&self, input: &[f64], rows: usize) -> Result<(Vec<f64>, MlpTape), ModelError> {
        let d_in = self.input_dim();
        if input.len() != rows * d_in {
            return Err(ModelError::Dimension {
                what: "mlp input".into(),
                expected: rows * d_in,
                found: input.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.n_layers());
        let mut current = input.to_vec();
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut z = vec![0.0; rows * fan_out];
            matmul(rows, fan_in, fan_out, &current, &self.weights[l], &mut z);
            let bias = &self.biases[l];
            let last = l + 1 == self.n_layers();
            for row in z.chunks_exact_mut(fan_out) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += b;
                    if !last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(std::mem::replace(&mut current, z));
        }
        Ok((current, MlpTape { rows, activations }))
    }

    /// Backpropagates `d_output` through the pass recorded in `tape`,
    /// accumulating parameter gradients into `grads` and returning the
    /// gradient with respect to the input.
    pub fn backward_batch(&self, tape: &MlpTape, d_output: &[f64], grads: &mut MlpParams) -> Vec<f64> {
        let rows = tape.rows;
        let mut delta = d_output.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &tape.activations[l];
            matmul_at_b_acc(rows, fan_in, fan_out, input, &delta, &mut grads.weights[l]);
            let db = &mut grads.biases[l];
            for row in delta.chunks_exact(fan_out) {
                for (g, d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let mut d_input = vec![0.0; rows * fan_in];
            matmul_a_bt(rows, fan_out, fan_in, &delta, &self.weights[l], &mut d_input);
            if l > 0 {
                // The input of layer l is the ReLU output of layer l-1.
                for (d, &a) in d_input.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = d_input;
        }
        delta
    }
}

/// Layer inputs saved by [`MlpParams::forward_batch`].
#[derive(Debug, Clone)]
pub struct MlpTape {
    rows: usize,
    activations: Vec<Vec<f64>>,
}

fn check_sizes(sizes: &[usize]) -> Result<(), ModelError> {
    if sizes.len() < 2 {
        return Err(ModelError::Empty("layer size list (need input and output sizes)"));
    }
    if let Some(pos) = sizes.iter().position(|&s| s == 0) {
        return Err(ModelError::Dimension {
            what: format!("layer {pos} size"),
            expected: 1,
            found: 0,
        });
    }
    Ok(())
}

pub fn mlp_init(layer_sizes: &[usize], seed: u64) -> Result<MlpParams, ModelError> {
    MlpParams::init(layer_sizes, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Single-vector forward pass.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>, ModelError> {
    params.forward_batch(input, 1).map(|(out, _)| out)
}
