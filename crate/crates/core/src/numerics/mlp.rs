//! Small fully-connected networks with tanh hidden layers.
//!
//! One struct serves every network in the pipeline: the variable-wise
//! encoder and decoders of phase one, the detector autoencoder halves, and
//! the discriminator. Hidden layers apply tanh, the final layer is linear;
//! heads that need a squashed output (the discriminator) compose it on the
//! loss side where it can be done stably.
//!
//! The same parameters drive two execution paths. `forward` is plain
//! inference. For training, `insert_params` registers the parameters on a
//! [`Tape`] and `forward_on_tape` records the differentiable computation.

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::matrix::Matrix;
use super::rng::SeededRng;
use super::tape::{Gradients, NodeId, Tape};

/// Multi-layer perceptron parameters. Weight `i` has shape
/// `dims[i] x dims[i+1]`, biases are single rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
}

/// Tape node ids of one registration of an [`Mlp`]'s parameters.
pub struct MlpNodes {
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
}

impl MlpNodes {
    /// All registered parameter ids, weights then biases.
    pub fn all_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.weights.iter().chain(&self.biases).copied()
    }

    pub fn weight_id(&self, layer: usize) -> NodeId {
        self.weights[layer]
    }

    pub fn bias_id(&self, layer: usize) -> NodeId {
        self.biases[layer]
    }
}

impl Mlp {
    /// Fresh network with Glorot-uniform weights and zero biases.
    ///
    /// # Panics
    /// Panics if fewer than two layer sizes are given.
    pub fn glorot(dims: &[usize], rng: &mut SeededRng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output sizes");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Matrix::from_fn(fan_in, fan_out, |_, _| rng.range(-limit, limit)));
            biases.push(Matrix::zeros(1, fan_out));
        }
        Mlp { dims: dims.to_vec(), weights, biases }
    }

    /// Builds a network from explicit parameter matrices.
    ///
    /// # Panics
    /// Panics if the matrices do not form a consistent layer chain.
    pub fn from_parts(weights: Vec<Matrix>, biases: Vec<Matrix>) -> Self {
        assert!(!weights.is_empty(), "an MLP needs at least one layer");
        assert_eq!(weights.len(), biases.len(), "every layer needs weights and a bias");
        let mut dims = vec![weights[0].rows()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            assert_eq!(w.rows(), dims[i], "layer {i} input width mismatch");
            assert_eq!((b.rows(), b.cols()), (1, w.cols()), "layer {i} bias shape mismatch");
            dims.push(w.cols());
        }
        Mlp { dims, weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Matrix] {
        &self.biases
    }

    /// Plain forward pass over a batch (one sample per row).
    ///
    /// # Panics
    /// Panics if `x.cols()` differs from the input dimension.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols(), self.input_dim(), "input width mismatch");
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(w).add_row_broadcast(b);
            if i < last {
                h = h.map(f64::tanh);
            }
        }
        h
    }

    /// Registers all parameters as trainable tape leaves.
    pub fn insert_params(&self, tape: &mut Tape) -> MlpNodes {
        MlpNodes {
            weights: self.weights.iter().map(|w| tape.param(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.param(b.clone())).collect(),
        }
    }

    /// Registers all parameters as non-trainable tape constants, for
    /// forwarding through a network that must not receive gradients.
    pub fn insert_constants(&self, tape: &mut Tape) -> MlpNodes {
        MlpNodes {
            weights: self.weights.iter().map(|w| tape.constant(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.constant(b.clone())).collect(),
        }
    }

    /// Records the forward pass against previously inserted parameters.
    pub fn forward_on_tape(&self, tape: &mut Tape, nodes: &MlpNodes, x: NodeId) -> NodeId {
        let last = self.weights.len() - 1;
        let mut h = x;
        for i in 0..self.weights.len() {
            let lin = tape.matmul(h, nodes.weights[i]);
            h = tape.add_row(lin, nodes.biases[i]);
            if i < last {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// Shapes of all parameters in update order, for sizing an optimizer.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.weights
            .iter()
            .chain(&self.biases)
            .map(|m| (m.rows(), m.cols()))
            .collect()
    }

    /// Applies one optimizer step from the gradients of a backward pass.
    /// Parameters that did not participate in the loss are left unchanged.
    pub fn apply_step(&mut self, opt: &mut Adam, nodes: &MlpNodes, grads: &Gradients) {
        let collected: Vec<Option<&Matrix>> = nodes
            .weights
            .iter()
            .chain(&nodes.biases)
            .map(|&id| grads.get(id))
            .collect();
        let mut params: Vec<&mut Matrix> =
            self.weights.iter_mut().chain(self.biases.iter_mut()).collect();
        opt.step(&mut params, &collected);
    }

    /// Largest absolute difference across all parameters of two networks of
    /// identical architecture. Test support for frozen-parameter contracts.
    pub fn max_param_diff(&self, other: &Mlp) -> f64 {
        assert_eq!(self.dims, other.dims, "architectures differ");
        self.weights
            .iter()
            .zip(&other.weights)
            .chain(self.biases.iter().zip(&other.biases))
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}
