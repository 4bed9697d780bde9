//! Reshape, axis permutation, and leading-axis concatenation. All three are
//! bijective rearrangements; their backwards are the inverse rearrangements.

use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Gathers `src` (row-major, `shape`) into the axis order `order`.
fn permute_data(src: &[f64], shape: &[usize], order: &[usize]) -> Vec<f64> {
    let ndim = shape.len();
    let out_shape: Vec<usize> = order.iter().map(|&ax| shape[ax]).collect();
    let in_strides = strides_of(shape);
    let out_strides_in_src: Vec<usize> = order.iter().map(|&ax| in_strides[ax]).collect();
    let mut out = vec![0.0; src.len()];
    let mut idx = vec![0usize; ndim];
    let mut src_off = 0usize;
    for slot in out.iter_mut() {
        *slot = src[src_off];
        // Odometer increment over the output index space.
        for d in (0..ndim).rev() {
            idx[d] += 1;
            src_off += out_strides_in_src[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src_off -= out_strides_in_src[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

impl Graph {
    /// Reinterprets a node's data under a new shape with the same element
    /// count.
    pub fn reshape(&mut self, x: NodeId, new_shape: Vec<usize>) -> Result<NodeId> {
        let count: usize = new_shape.iter().product();
        if count != self.nodes[x.0].data.len() || new_shape.iter().any(|&d| d == 0) {
            return Err(Error::ReshapeCountMismatch {
                from: self.nodes[x.0].shape.clone(),
                to: new_shape,
            });
        }
        let data = self.nodes[x.0].data.clone();
        let req = self.nodes[x.0].requires_grad;
        Ok(self.push(new_shape, data, Op::Reshape(x), req))
    }

    /// Reorders axes; `order` must be a permutation of `0..ndim`.
    pub fn permute(&mut self, x: NodeId, order: &[usize]) -> Result<NodeId> {
        let shape = &self.nodes[x.0].shape;
        let ndim = shape.len();
        let mut seen = vec![false; ndim];
        if order.len() != ndim || order.iter().any(|&ax| ax >= ndim || core::mem::replace(&mut seen[ax], true)) {
            return Err(Error::InvalidPermutation {
                order: order.to_vec(),
            });
        }
        let out_shape: Vec<usize> = order.iter().map(|&ax| shape[ax]).collect();
        let data = permute_data(&self.nodes[x.0].data, shape, order);
        let req = self.nodes[x.0].requires_grad;
        Ok(self.push(
            out_shape,
            data,
            Op::Permute {
                x,
                order: order.to_vec(),
            },
            req,
        ))
    }

    /// Concatenates along the leading axis; trailing extents must agree.
    /// For `[C_i, T, L]` inputs this is channel concatenation.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        assert!(!xs.is_empty(), "concat of zero tensors");
        let first = &self.nodes[xs[0].0].shape;
        let tail = &first[1..];
        let mut lead = 0usize;
        for &x in xs {
            let s = &self.nodes[x.0].shape;
            if s.len() != first.len() || &s[1..] != tail {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.clone(),
                    right: s.clone(),
                });
            }
            lead += s[0];
        }
        let mut shape = Vec::with_capacity(first.len());
        shape.push(lead);
        shape.extend_from_slice(tail);
        // Leading-axis blocks are contiguous in row-major layout.
        let mut data = Vec::with_capacity(shape.iter().product());
        for &x in xs {
            data.extend_from_slice(&self.nodes[x.0].data);
        }
        let req = self.any_requires(xs);
        Ok(self.push(shape, data, Op::Concat(xs.to_vec()), req))
    }

    pub(super) fn backward_permute(&mut self, x: NodeId, order: &[usize], gout: &[f64]) {
        if !self.nodes[x.0].requires_grad {
            return;
        }
        // Inverse permutation maps the gradient back to the input layout.
        let mut inverse = vec![0usize; order.len()];
        for (pos, &ax) in order.iter().enumerate() {
            inverse[ax] = pos;
        }
        let out_shape: Vec<usize> = order.iter().map(|&ax| self.nodes[x.0].shape[ax]).collect();
        let da = permute_data(gout, &out_shape, &inverse);
        self.accumulate(x, &da);
    }

    pub(super) fn backward_concat(&mut self, xs: &[NodeId], gout: &[f64]) {
        let mut offset = 0usize;
        for &x in xs {
            let len = self.nodes[x.0].data.len();
            if self.nodes[x.0].requires_grad {
                self.accumulate(x, &gout[offset..offset + len]);
            }
            offset += len;
        }
    }
}
