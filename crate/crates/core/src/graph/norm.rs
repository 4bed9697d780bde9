//! Layer normalization over the last dimension and the parametric ReLU.

use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::math;

impl Graph {
    /// Normalizes each slice along the last dimension to zero mean and unit
    /// variance, then scales by `gamma` and shifts by `beta` (both of the
    /// normalized dimension's length, shared across all other axes).
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let shape = self.nodes[x.0].shape.clone();
        let feat = *shape.last().expect("layer_norm on 0-d tensor");
        if self.nodes[gamma.0].data.len() != feat || self.nodes[beta.0].data.len() != feat {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: shape,
                right: self.nodes[gamma.0].shape.clone(),
            });
        }
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let slices = src.len() / feat;
        let mut out = vec![0.0; src.len()];
        for sl in 0..slices {
            let xs = &src[sl * feat..(sl + 1) * feat];
            let mean = xs.iter().sum::<f64>() / feat as f64;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / feat as f64;
            let inv = 1.0 / math::sqrt(var + eps);
            for (j, slot) in out[sl * feat..(sl + 1) * feat].iter_mut().enumerate() {
                *slot = (xs[j] - mean) * inv * g[j] + b[j];
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let req = self.any_requires(&[x, gamma, beta]);
        Ok(self.push(shape, out, Op::LayerNorm { x, gamma, beta, eps }, req))
    }

    /// `out = x` where `x >= 0`, else `slope[c] * x`, with one slope per
    /// leading-axis channel.
    pub fn prelu(&mut self, x: NodeId, slopes: NodeId) -> Result<NodeId> {
        let shape = self.nodes[x.0].shape.clone();
        let channels = shape[0];
        if self.nodes[slopes.0].data.len() != channels {
            return Err(Error::ShapeMismatch {
                op: "prelu",
                left: shape,
                right: self.nodes[slopes.0].shape.clone(),
            });
        }
        let src = &self.nodes[x.0].data;
        let a = &self.nodes[slopes.0].data;
        let chunk = src.len() / channels;
        let mut out = vec![0.0; src.len()];
        for c in 0..channels {
            let slope = a[c];
            for (slot, &v) in out[c * chunk..(c + 1) * chunk]
                .iter_mut()
                .zip(&src[c * chunk..(c + 1) * chunk])
            {
                *slot = if v >= 0.0 { v } else { slope * v };
            }
        }
        let req = self.any_requires(&[x, slopes]);
        Ok(self.push(shape, out, Op::Prelu { x, slopes }, req))
    }

    pub(super) fn backward_layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        gout: &[f64],
    ) {
        let feat = *self.nodes[x.0].shape.last().unwrap();
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let slices = src.len() / feat;
        let feat_f = feat as f64;

        let need_x = self.nodes[x.0].requires_grad;
        let need_g = self.nodes[gamma.0].requires_grad;
        let need_b = self.nodes[beta.0].requires_grad;

        let mut dx = if need_x { vec![0.0; src.len()] } else { Vec::new() };
        let mut dgamma = vec![0.0; feat];
        let mut dbeta = vec![0.0; feat];
        let mut xhat = vec![0.0; feat];
        let mut dxhat = vec![0.0; feat];

        for sl in 0..slices {
            let xs = &src[sl * feat..(sl + 1) * feat];
            let gs = &gout[sl * feat..(sl + 1) * feat];
            let mean = xs.iter().sum::<f64>() / feat_f;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / feat_f;
            let inv = 1.0 / math::sqrt(var + eps);
            for j in 0..feat {
                xhat[j] = (xs[j] - mean) * inv;
            }
            if need_g || need_b {
                for j in 0..feat {
                    dgamma[j] += gs[j] * xhat[j];
                    dbeta[j] += gs[j];
                }
            }
            if need_x {
                for j in 0..feat {
                    dxhat[j] = gs[j] * g[j];
                }
                let sum_dxhat: f64 = dxhat.iter().sum();
                let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                for j in 0..feat {
                    dx[sl * feat + j] = inv / feat_f
                        * (feat_f * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                }
            }
        }
        if need_x {
            self.accumulate(x, &dx);
        }
        if need_g {
            self.accumulate(gamma, &dgamma);
        }
        if need_b {
            self.accumulate(beta, &dbeta);
        }
    }

    pub(super) fn backward_prelu(&mut self, x: NodeId, slopes: NodeId, gout: &[f64]) {
        let need_x = self.nodes[x.0].requires_grad;
        let need_a = self.nodes[slopes.0].requires_grad;
        let (dx, da) = {
            let channels = self.nodes[x.0].shape[0];
            let src = &self.nodes[x.0].data;
            let a = &self.nodes[slopes.0].data;
            let chunk = src.len() / channels;
            let mut dx = if need_x { vec![0.0; src.len()] } else { Vec::new() };
            let mut da = vec![0.0; channels];
            for c in 0..channels {
                let slope = a[c];
                let mut acc = 0.0;
                for j in c * chunk..(c + 1) * chunk {
                    if src[j] >= 0.0 {
                        if need_x {
                            dx[j] = gout[j];
                        }
                    } else {
                        if need_x {
                            dx[j] = slope * gout[j];
                        }
                        acc += gout[j] * src[j];
                    }
                }
                da[c] = acc;
            }
            (dx, da)
        };
        if need_x {
            self.accumulate(x, &dx);
        }
        if need_a {
            self.accumulate(slopes, &da);
        }
    }
}
