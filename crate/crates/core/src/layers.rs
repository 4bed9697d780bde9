//! The network building blocks, composed from tape ops: layer-norm +
//! parametric ReLU pairs, sub-pixel upsampling, dense blocks with feature
//! reuse, and the self-attention module.
//!
//! These functions operate on graph nodes; parameter tensors are inserted
//! as leaves by the caller (see `model`).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{ConvSpec, Graph, NodeId, PaddingMode};

/// Kernel and bias of one convolution, as graph leaves.
#[derive(Debug, Clone, Copy)]
pub struct ConvNodes {
    pub kernel: NodeId,
    pub bias: NodeId,
}

/// Layer normalization followed by a per-channel parametric ReLU.
#[derive(Debug, Clone, Copy)]
pub struct NormActNodes {
    pub gamma: NodeId,
    pub beta: NodeId,
    pub eps: f64,
    pub slopes: NodeId,
}

pub fn norm_act(g: &mut Graph, x: NodeId, p: &NormActNodes) -> Result<NodeId> {
    let normed = g.layer_norm(x, p.gamma, p.beta, p.eps)?;
    g.prelu(normed, p.slopes)
}

/// Time-axis padding for an `m x n` convolution in a causal or non-causal
/// network.
pub fn time_padding(causal: bool) -> PaddingMode {
    if causal {
        PaddingMode::CausalTime
    } else {
        PaddingMode::Same
    }
}

/// Sub-pixel convolution: `r*s` same-size convolutions whose outputs are
/// interleaved onto the `(r, s)`-upsampled grid.
pub fn subpixel_conv(
    g: &mut Graph,
    x: NodeId,
    kernels: &[ConvNodes],
    rate: (usize, usize),
    spec: ConvSpec,
) -> Result<NodeId> {
    let parts: Result<Vec<NodeId>> = kernels
        .iter()
        .map(|k| g.conv2d(x, k.kernel, k.bias, spec))
        .collect();
    g.subpixel_interleave(&parts?, rate)
}

/// One dense-block layer: convolution, then layer norm and PReLU.
#[derive(Debug, Clone, Copy)]
pub struct DenseLayerNodes {
    pub conv: ConvNodes,
    pub norm: NormActNodes,
}

/// Output of a dense block plus the recorded per-layer input channel counts.
pub struct DenseBlockOutput {
    pub out: NodeId,
    pub input_channels: Vec<usize>,
}

/// Five convolutional layers with feature reuse: each layer consumes the
/// concatenation of the block input and all previous layer outputs, so the
/// input channel counts grow as C, 2C, 3C, .. while every layer emits C
/// channels.
pub fn dense_block(
    g: &mut Graph,
    x: NodeId,
    layers: &[DenseLayerNodes],
    causal: bool,
    dilations: &[usize],
) -> Result<DenseBlockOutput> {
    assert_eq!(layers.len(), dilations.len());
    let mut input_channels = Vec::with_capacity(layers.len());
    let mut concat_in = x;
    let mut out = x;
    for (idx, layer) in layers.iter().enumerate() {
        if idx > 0 {
            concat_in = g.concat(&[concat_in, out])?;
        }
        input_channels.push(g.shape(concat_in)[0]);
        let spec = ConvSpec {
            stride: (1, 1),
            padding: time_padding(causal),
            dilation_time: dilations[idx],
        };
        let conv = g.conv2d(concat_in, layer.conv.kernel, layer.conv.bias, spec)?;
        out = norm_act(g, conv, &layer.norm)?;
    }
    Ok(DenseBlockOutput {
        out,
        input_channels,
    })
}

/// Query/key/value 1x1 convolutions of one attention module.
#[derive(Debug, Clone, Copy)]
pub struct AttentionNodes {
    pub query: ConvNodes,
    pub key: ConvNodes,
    pub value: ConvNodes,
}

/// Attention output `[F, T, L]` plus the row-stochastic `[T, T]` weights.
pub struct AttentionOutput {
    pub out: NodeId,
    pub weights: NodeId,
}

/// Self-attention over frames: Q/K/V come from 1x1 convolutions, each frame
/// is flattened to a feature row, correlation scores W = Q K^T are
/// (optionally causally masked and) softmax-normalized, and the value rows
/// are mixed accordingly. No scaling factor is applied to W.
pub fn self_attention(
    g: &mut Graph,
    x: NodeId,
    p: &AttentionNodes,
    causal: bool,
) -> Result<AttentionOutput> {
    let shape = g.shape(x);
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "self_attention",
            left: shape.to_vec(),
            right: vec![0, 0, 0],
        });
    }
    let (t, l) = (shape[1], shape[2]);
    let one_by_one = ConvSpec::unit(PaddingMode::Valid);
    let q = g.conv2d(x, p.query.kernel, p.query.bias, one_by_one)?;
    let k = g.conv2d(x, p.key.kernel, p.key.bias, one_by_one)?;
    let v = g.conv2d(x, p.value.kernel, p.value.bias, one_by_one)?;
    let e = g.shape(q)[0];
    let f = g.shape(v)[0];

    // [E, T, L] -> [T, E*L]: one feature row per frame.
    let q2 = {
        let p = g.permute(q, &[1, 0, 2])?;
        g.reshape(p, vec![t, e * l])?
    };
    let k2 = {
        let p = g.permute(k, &[1, 0, 2])?;
        g.reshape(p, vec![t, e * l])?
    };
    let v2 = {
        let p = g.permute(v, &[1, 0, 2])?;
        g.reshape(p, vec![t, f * l])?
    };

    let k2t = g.permute(k2, &[1, 0])?;
    let scores = g.matmul(q2, k2t)?;
    let masked = if causal {
        g.mask_causal(scores)?
    } else {
        scores
    };
    let weights = g.softmax_rows(masked)?;
    let mixed = g.matmul(weights, v2)?;
    let out = {
        let r = g.reshape(mixed, vec![t, f, l])?;
        g.permute(r, &[1, 0, 2])?
    };
    Ok(AttentionOutput { out, weights })
}
