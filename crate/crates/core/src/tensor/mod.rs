//! Dense 64-bit tensors and reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a plain value: a shape, a flat row-major buffer, and a
//! `requires_grad` flag. Computation is recorded on a [`Graph`] — a single-use
//! tape rebuilt for every training step. Primitives are methods on the graph;
//! they evaluate eagerly and append a node whenever any input requires a
//! gradient. [`Graph::backward`] walks the tape once in reverse and returns
//! [`Gradients`] addressable by node or by parameter identity.
//!
//! Parameter tensors (created with [`Tensor::param`]) carry a stable identity
//! so that registering the same parameter twice in one graph reuses a single
//! leaf, and so gradients can be looked up after the graph is gone.

mod backward;
mod gradcheck;
mod graph;
pub(crate) mod shape;

pub use gradcheck::{
    grad_check, grad_check_entries, worst_resolvable_rel, EntryCheck, DEFAULT_STEP, FD_ATOL,
};
pub use graph::{Graph, NodeId};

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// Dense n-dimensional array of 64-bit floats in row-major order.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    node_id: Option<NodeId>,
    param_id: Option<u64>,
}

impl Tensor {
    /// A tensor with the given shape and values. Every extent must be
    /// positive and their product must equal `values.len()`.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                kind: "tensor",
                shape,
                reason: "extents must be positive".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::InvalidShape {
                kind: "tensor",
                shape,
                reason: format!("{} values for {} elements", values.len(), numel),
            });
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            node_id: None,
            param_id: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self::new(shape, vec![0.0; numel]).expect("zeros: valid shape")
    }

    /// Rank-0 scalar.
    pub fn scalar(v: f64) -> Self {
        Self::new(vec![], vec![v]).expect("scalar")
    }

    /// 1-D tensor from a vec.
    pub fn from_vec(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(vec![n], values).expect("from_vec: non-empty")
    }

    /// 2-D tensor from a flat row-major buffer.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    /// A trainable parameter: requires a gradient and carries a stable
    /// identity for gradient lookup across graph rebuilds.
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(shape, values)?;
        t.requires_grad = true;
        t.param_id = Some(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed));
        Ok(t)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        if requires_grad && self.param_id.is_none() {
            self.param_id = Some(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed));
        }
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node_id
    }

    pub(crate) fn param_id(&self) -> Option<u64> {
        self.param_id
    }

    /// The single value of a scalar-shaped tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape.clone(),
            });
        }
        Ok(self.values[0])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn with_node(mut self, id: NodeId, requires_grad: bool) -> Self {
        self.node_id = Some(id);
        self.requires_grad = requires_grad;
        self
    }
}

/// Gradient tensors produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    pub(crate) graph_id: u64,
    pub(crate) by_node: Vec<Option<Tensor>>,
    pub(crate) param_nodes: std::collections::HashMap<u64, usize>,
}

impl Gradients {
    /// Gradient for a node of the consumed graph.
    pub fn by_node_id(&self, id: NodeId) -> Option<&Tensor> {
        if id.graph != self.graph_id {
            return None;
        }
        self.by_node.get(id.index).and_then(|g| g.as_ref())
    }

    /// Gradient for a tensor: parameters resolve through their identity,
    /// other tensors through the node id stamped by the graph.
    pub fn for_tensor(&self, t: &Tensor) -> Option<&Tensor> {
        if let Some(pid) = t.param_id {
            if let Some(&idx) = self.param_nodes.get(&pid) {
                return self.by_node.get(idx).and_then(|g| g.as_ref());
            }
        }
        t.node_id.and_then(|id| self.by_node_id(id))
    }

    /// Gradient for a parameter, or zeros when the parameter never reached
    /// the loss (or never entered the graph).
    pub fn for_param_or_zeros(&self, t: &Tensor) -> Tensor {
        self.for_tensor(t)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape.to_vec()))
    }
}
