//! Tape-based reverse-mode automatic differentiation over matrices.
//!
//! A `Tape` records a computation as a flat list of nodes, each holding its
//! value (computed eagerly) and the operation that produced it. Calling
//! [`Tape::backward`] on a scalar node walks the list once in reverse and
//! accumulates adjoints, which works because node indices are already a
//! topological order of the graph: an operation can only reference nodes
//! created before it.
//!
//! The operation set is exactly what the four training losses in this crate
//! need. All losses are scalars over at most a few thousand parameters, so
//! reverse mode is the right direction.

use super::matexp::{acyclicity, acyclicity_grad};
use super::matrix::Matrix;
use super::NumericsError;

/// Index of a node on its tape.
pub type NodeId = usize;

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    /// Broadcast a `1 x c` bias row over every row of the left operand.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Numerically stable `log(sigmoid(x))`, used for cross-entropy terms.
    LogSigmoid(NodeId),
    Cos(NodeId),
    Log(NodeId),
    Abs(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    /// DAG penalty `h(W) = tr(e^{W o W}) - d` as a single scalar node.
    Acyclicity(NodeId),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the root with respect to the node, if any was accumulated.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but panics with context when absent; for
    /// parameters that must participate in the loss.
    pub fn expect(&self, id: NodeId) -> &Matrix {
        self.get(id).unwrap_or_else(|| panic!("node {id} received no gradient"))
    }
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Inserts a leaf that does not require gradients (inputs, masks).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Inserts a leaf that accumulates gradients (trainable parameters).
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    /// Value of a `1 x 1` node as a plain scalar.
    ///
    /// # Panics
    /// Panics if the node is not `1 x 1`.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert!(v.rows() == 1 && v.cols() == 1, "node {id} is not scalar");
        v.get(0, 0)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push_binary(value, Op::MatMul(a, b), a, b)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.transpose();
        self.push_unary(value, Op::Transpose(a), a)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.add(&self.nodes[b].value);
        self.push_binary(value, Op::Add(a, b), a, b)
    }

    /// `a + bias` where `bias` is a single row broadcast over `a`'s rows.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let value = self.nodes[a].value.add_row_broadcast(&self.nodes[bias].value);
        self.push_binary(value, Op::AddRow(a, bias), a, bias)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.sub(&self.nodes[b].value);
        self.push_binary(value, Op::Sub(a, b), a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.hadamard(&self.nodes[b].value);
        self.push_binary(value, Op::Mul(a, b), a, b)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a].value.scale(c);
        self.push_unary(value, Op::Scale(a, c), a)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::tanh);
        self.push_unary(value, Op::Tanh(a), a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(sigmoid);
        self.push_unary(value, Op::Sigmoid(a), a)
    }

    /// `log(sigmoid(x))` evaluated in softplus form so large negative inputs
    /// do not round to `log(0)`.
    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(log_sigmoid);
        self.push_unary(value, Op::LogSigmoid(a), a)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::cos);
        self.push_unary(value, Op::Cos(a), a)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::ln);
        self.push_unary(value, Op::Log(a), a)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::abs);
        self.push_unary(value, Op::Abs(a), a)
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![self.nodes[a].value.sum()]);
        self.push_unary(value, Op::Sum(a), a)
    }

    /// Mean of all entries as a `1 x 1` node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let value = Matrix::from_vec(1, 1, vec![v.sum() / v.len() as f64]);
        self.push_unary(value, Op::Mean(a), a)
    }

    /// Same entries viewed under a new shape (row-major order preserved).
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let value = self.nodes[a].value.reshape(rows, cols);
        self.push_unary(value, Op::Reshape(a), a)
    }

    /// Acyclicity penalty of a square node as a `1 x 1` scalar node.
    ///
    /// # Panics
    /// Panics if the input node is not square.
    pub fn acyclicity(&mut self, a: NodeId) -> NodeId {
        let h = acyclicity(&self.nodes[a].value).expect("acyclicity node requires a square input");
        let value = Matrix::from_vec(1, 1, vec![h]);
        self.push_unary(value, Op::Acyclicity(a), a)
    }

    /// Convenience chain for `mean(sum_j (a - b)_ij^2)` style losses: returns
    /// the scalar sum of squared entries of `a - b`, scaled by `c`.
    pub fn scaled_squared_error(&mut self, a: NodeId, b: NodeId, c: f64) -> NodeId {
        let diff = self.sub(a, b);
        let sq = self.mul(diff, diff);
        let total = self.sum(sq);
        self.scale(total, c)
    }

    /// Reverse pass from a scalar root. Returns one gradient per node that
    /// both requires gradients and participates in the root's value.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, NumericsError> {
        let root_value = &self.nodes[root].value;
        if root_value.rows() != 1 || root_value.cols() != 1 {
            return Err(NumericsError::NotScalar {
                rows: root_value.rows(),
                cols: root_value.cols(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for id in (0..=root).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else { continue };
            self.propagate(id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: NodeId, grad: &Matrix, grads: &mut [Option<Matrix>]) {
        match self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a].needs_grad {
                    let delta = grad.matmul(&self.nodes[b].value.transpose());
                    accumulate(grads, a, delta);
                }
                if self.nodes[b].needs_grad {
                    let delta = self.nodes[a].value.transpose().matmul(grad);
                    accumulate(grads, b, delta);
                }
            }
            Op::Transpose(a) => {
                if self.nodes[a].needs_grad {
                    accumulate(grads, a, grad.transpose());
                }
            }
            Op::Add(a, b) => {
                if self.nodes[a].needs_grad {
                    accumulate(grads, a, grad.clone());
                }
                if self.nodes[b].needs_grad {
                    accumulate(grads, b, grad.clone());
                }
            }
            Op::AddRow(a, bias) => {
                if self.nodes[a].needs_grad {
                    accumulate(grads, a, grad.clone());
                }
                if self.nodes[bias].needs_grad {
                    // The bias row feeds every row, so its adjoint is the
                    // column-wise sum of the incoming gradient.
                    let mut sums = Matrix::zeros(1, grad.cols());
                    for i in 0..grad.rows() {
                        for j in 0..grad.cols() {
                            sums.set(0, j, sums.get(0, j) + grad.get(i, j));
                        }
                    }
                    accumulate(grads, bias, sums);
                }
            }
            Op::Sub(a, b) => {
                if self.nodes[a].needs_grad {
                    accumulate(grads, a, grad.clone());
                }
                if self.nodes[b].needs_grad {
                    accumulate(grads, b, grad.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[a].needs_grad {
                    accumulate(grads, a, grad.hadamard(&self.nodes[b].value));
                }
                if self.nodes[b].needs_grad {
                    accumulate(grads, b, grad.hadamard(&self.nodes[a].value));
                }
            }
            Op::Scale(a, c) => {
                if self.nodes[a].needs_grad {
                    accumulate(grads, a, grad.scale(c));
                }
            }
            Op::Tanh(a) => {
                if self.nodes[a].needs_grad {
                    let y = &self.nodes[id].value;
                    let delta = grad.hadamard(&y.map(|t| 1.0 - t * t));
                    accumulate(grads, a, delta);
                }
            }
            Op::Sigmoid(a) => {
                if self.nodes[a].needs_grad {
                    let y = &self.nodes[id].value;
                    let delta = grad.hadamard(&y.map(|s| s * (1.0 - s)));
                    accumulate(grads, a, delta);
                }
            }
            Op::LogSigmoid(a) => {
                if self.nodes[a].needs_grad {
                    // d/dx log(sigmoid(x)) = sigmoid(-x)
                    let x = &self.nodes[a].value;
                    let delta = grad.hadamard(&x.map(|t| sigmoid(-t)));
                    accumulate(grads, a, delta);
                }
            }
            Op::Cos(a) => {
                if self.nodes[a].needs_grad {
                    let x = &self.nodes[a].value;
                    let delta = grad.hadamard(&x.map(|t| -t.sin()));
                    accumulate(grads, a, delta);
                }
            }
            Op::Log(a) => {
                if self.nodes[a].needs_grad {
                    let x = &self.nodes[a].value;
                    let delta = grad.hadamard(&x.map(|t| 1.0 / t));
                    accumulate(grads, a, delta);
                }
            }
            Op::Abs(a) => {
                if self.nodes[a].needs_grad {
                    let x = &self.nodes[a].value;
                    let delta = grad.hadamard(&x.map(sign));
                    accumulate(grads, a, delta);
                }
            }
            Op::Sum(a) => {
                if self.nodes[a].needs_grad {
                    let g = grad.get(0, 0);
                    let parent = &self.nodes[a].value;
                    accumulate(grads, a, Matrix::filled(parent.rows(), parent.cols(), g));
                }
            }
            Op::Mean(a) => {
                if self.nodes[a].needs_grad {
                    let parent = &self.nodes[a].value;
                    let g = grad.get(0, 0) / parent.len() as f64;
                    accumulate(grads, a, Matrix::filled(parent.rows(), parent.cols(), g));
                }
            }
            Op::Reshape(a) => {
                if self.nodes[a].needs_grad {
                    let parent = &self.nodes[a].value;
                    accumulate(grads, a, grad.reshape(parent.rows(), parent.cols()));
                }
            }
            Op::Acyclicity(a) => {
                if self.nodes[a].needs_grad {
                    let w = &self.nodes[a].value;
                    let g = acyclicity_grad(w).expect("validated square at construction");
                    accumulate(grads, a, g.scale(grad.get(0, 0)));
                }
            }
        }
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        self.nodes.len() - 1
    }

    fn push_unary(&mut self, value: Matrix, op: Op, a: NodeId) -> NodeId {
        let needs = self.nodes[a].needs_grad;
        self.push(value, op, needs)
    }

    fn push_binary(&mut self, value: Matrix, op: Op, a: NodeId, b: NodeId) -> NodeId {
        let needs = self.nodes[a].needs_grad || self.nodes[b].needs_grad;
        self.push(value, op, needs)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x)) = min(x, 0) - ln(1 + e^{-|x|})`, exact for extreme inputs.
#[inline]
fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
