//! Reverse-mode differentiation over a dynamic tape.
//!
//! A [`Graph`] records every operation of one forward pass. Node data is
//! stored densely; `backward` walks the tape in reverse, accumulating
//! gradients into every node that requires them. The tape is rebuilt per
//! forward pass and dropped afterwards; parameters live outside the graph
//! and are inserted as leaves each pass.
//!
//! Activations of interior nodes are freed as backward consumes them, which
//! keeps peak memory close to the forward-pass footprint.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod shape_ops;
mod signal;

pub use conv::{ConvSpec, PaddingMode};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in one [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Abs(NodeId),
    Square(NodeId),
    Matmul(NodeId, NodeId),
    SoftmaxRows(NodeId),
    MaskCausal(NodeId),
    Prelu { x: NodeId, slopes: NodeId },
    Reshape(NodeId),
    Permute { x: NodeId, order: Vec<usize> },
    Concat(Vec<NodeId>),
    Conv2d(conv::Conv2dRecord),
    SubpixelInterleave { parts: Vec<NodeId>, rate: (usize, usize) },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    SumAll(NodeId),
    MeanAll(NodeId),
    Frame { y: NodeId, frame_len: usize, hop: usize },
    OverlapAdd { frames: NodeId, hop: usize, out_len: usize },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub op: Op,
}

impl Node {
    fn is_leaf(&self) -> bool {
        matches!(self.op, Op::Leaf)
    }
}

/// Scratch buffers reused across ops of one graph.
#[derive(Default)]
pub(crate) struct Workspace {
    pub cols: Vec<f64>,
}

/// Dynamic tape holding one forward pass.
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    pub(crate) ws: Workspace,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            ws: Workspace::default(),
        }
    }

    /// Inserts a tensor as a leaf, copying its data.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.leaf_from(t.shape().to_vec(), t.data().to_vec(), t.requires_grad)
    }

    /// Inserts a leaf from raw parts.
    pub fn leaf_from(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(shape, data, Op::Leaf, requires_grad)
    }

    /// Inserts a 1-D constant leaf (no gradient).
    pub fn constant(&mut self, data: Vec<f64>) -> NodeId {
        let shape = vec![data.len()];
        self.push(shape, data, Op::Leaf, false)
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
        });
        id
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn any_requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Moves a node's gradient buffer out, allocating zeros if absent.
    pub(crate) fn take_grad(&mut self, id: NodeId) -> Vec<f64> {
        let node = &mut self.nodes[id.0];
        match node.grad.take() {
            Some(g) => g,
            None => vec![0.0; node.data.len()],
        }
    }

    pub(crate) fn put_grad(&mut self, id: NodeId, g: Vec<f64>) {
        self.nodes[id.0].grad = Some(g);
    }

    /// Adds `contrib` into the gradient of `id` if that node requires grads.
    pub(crate) fn accumulate(&mut self, id: NodeId, contrib: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let mut g = self.take_grad(id);
        debug_assert_eq!(g.len(), contrib.len());
        for (a, b) in g.iter_mut().zip(contrib) {
            *a += *b;
        }
        self.put_grad(id, g);
    }

    /// Populates gradients of every grad-requiring node reachable from
    /// `loss`, which must be scalar. Interior activations are released as
    /// they are consumed.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.data.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: loss_node.shape.clone(),
            });
        }
        if !loss_node.requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            if self.nodes[idx].is_leaf() {
                continue;
            }
            let gout = self.nodes[idx].grad.take().expect("grad present");
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => self.backward_add(a, b, &gout),
                Op::Sub(a, b) => self.backward_sub(a, b, &gout),
                Op::Mul(a, b) => self.backward_mul(a, b, &gout),
                Op::AddScalar(a) => self.accumulate(a, &gout),
                Op::MulScalar(a, c) => self.backward_mul_scalar(a, c, &gout),
                Op::Abs(a) => self.backward_abs(a, &gout),
                Op::Square(a) => self.backward_square(a, &gout),
                Op::Matmul(a, b) => self.backward_matmul(a, b, &gout),
                Op::SoftmaxRows(a) => self.backward_softmax_rows(idx, a, &gout),
                Op::MaskCausal(a) => self.backward_mask_causal(a, &gout),
                Op::Prelu { x, slopes } => self.backward_prelu(x, slopes, &gout),
                Op::Reshape(a) => self.accumulate(a, &gout),
                Op::Permute { x, ref order } => self.backward_permute(x, order, &gout),
                Op::Concat(ref xs) => self.backward_concat(xs, &gout),
                Op::Conv2d(ref rec) => self.backward_conv2d(rec, &gout),
                Op::SubpixelInterleave { ref parts, rate } => {
                    self.backward_subpixel(parts, rate, &gout)
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    self.backward_layer_norm(x, gamma, beta, eps, &gout)
                }
                Op::SumAll(a) => self.backward_sum_all(a, &gout),
                Op::MeanAll(a) => self.backward_mean_all(a, &gout),
                Op::Frame { y, frame_len, hop } => {
                    self.backward_frame(y, frame_len, hop, &gout)
                }
                Op::OverlapAdd {
                    frames,
                    hop,
                    out_len,
                } => self.backward_overlap_add(frames, hop, out_len, &gout),
            }
            // All consumers of this node sit later on the tape and have
            // already run, so its activation is no longer needed.
            self.nodes[idx].data = Vec::new();
        }
        Ok(())
    }
}
