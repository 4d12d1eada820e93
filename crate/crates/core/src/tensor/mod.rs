//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! data plus whatever it needs for the backward pass. Node insertion order is
//! a topological order, so [`Graph::backward`] is a single reverse sweep.
//! Gradients accumulate across backward calls until [`Graph::zero_grads`].

mod gradcheck;
mod kernels;
mod ops;
#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::BN_EPS;

use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// Batch-normalization behavior selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel running statistics owned by the caller, updated in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

pub(crate) struct BnSaved {
    pub xhat: Vec<f64>,
    pub invstd: Vec<f64>,
    pub train: bool,
}

pub(crate) enum Op {
    Leaf,
    Conv1d { x: TensorId, w: TensorId, b: TensorId },
    Relu { x: TensorId },
    Tanh { x: TensorId },
    BatchNorm { x: TensorId, gamma: TensorId, beta: TensorId, saved: Option<BnSaved> },
    Dense { x: TensorId, w: TensorId, b: TensorId },
    MatMul { a: TensorId, b: TensorId },
    TransposeLast2 { x: TensorId },
    Softmax { x: TensorId, axis: usize },
    Scale { x: TensorId, c: f64 },
    AcoshLoss { pred: TensorId, target: TensorId },
    LogCoshLoss { pred: TensorId, target: TensorId },
    CrossEntropy { logits: TensorId, onehot: TensorId, probs: Option<Vec<f64>> },
    WeightedSum { terms: Vec<TensorId>, weights: Vec<f64> },
    SumAll { x: TensorId },
    Reshape { x: TensorId },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub op: Op,
}

/// Reverse-mode gradient tape over dense row-major f64 tensors.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Insert an input tensor. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        if data.len() != numel(shape) {
            return Err(Error::Shape(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(Node { shape: shape.to_vec(), data, requires_grad, op: Op::Leaf }))
    }

    pub(crate) fn push(&mut self, node: Node) -> TensorId {
        self.nodes.push(node);
        self.grads.push(None);
        TensorId(self.nodes.len() - 1)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Scalar value of a one-element tensor.
    pub fn value(&self, id: TensorId) -> Result<f64> {
        let n = &self.nodes[id.0];
        if numel(&n.shape) != 1 {
            return Err(Error::Shape(format!("value() on non-scalar shape {:?}", n.shape)));
        }
        Ok(n.data[0])
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient, if any backward pass has reached this tensor.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Drop all accumulated gradients.
    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn require_grad_any(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Reverse sweep from a scalar root, adding dRoot/dNode into each
    /// grad-requiring node's accumulator. Calling twice without
    /// [`Graph::zero_grads`] doubles every gradient.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if numel(&self.nodes[root.0].shape) != 1 {
            return Err(Error::Graph(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        // Per-call flow buffers keep accumulation semantics exact: each call
        // contributes precisely dRoot/dNode on top of what is already stored.
        let mut flow: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        flow[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(gout) = flow[i].take() else { continue };
            ops::backward_op(&self.nodes, i, &gout, &mut flow);
            if self.nodes[i].requires_grad {
                let slot = self.grads[i].get_or_insert_with(|| vec![0.0; gout.len()]);
                kernels::add_assign(slot, &gout);
            }
        }
        Ok(())
    }
}

/// Allocate-or-fetch the flow buffer for a parent node, if it participates in
/// differentiation.
pub(crate) fn flow_slot<'a>(
    nodes: &[Node],
    flow: &'a mut [Option<Vec<f64>>],
    id: TensorId,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id.0].requires_grad {
        return None;
    }
    let len = numel(&nodes[id.0].shape);
    Some(flow[id.0].get_or_insert_with(|| vec![0.0; len]))
}
