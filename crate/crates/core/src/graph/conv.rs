//! 2-D convolution over `[C, T, L]` feature maps and the sub-pixel
//! interleave used for upsampling.
//!
//! Convolution follows the cross-correlation convention. Padding modes:
//! VALID places the kernel strictly inside the input; SAME zero-pads so the
//! output keeps `ceil(extent / stride)`; causal-time pads exactly
//! `(m-1)*dilation` zeros before t = 0 along time (and SAME along the
//! intra-frame axis), so outputs at frame t never read frames beyond t.
//!
//! Forward and both backward passes are expressed as one GEMM over gathered
//! input patches; the gather buffer is reused across ops of a graph.

use alloc::vec;
use alloc::vec::Vec;

use super::linalg::gemm;
use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};

/// Zero-padding policy of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingMode {
    Valid,
    Same,
    /// SAME along the intra-frame axis, strictly-past padding along time.
    CausalTime,
}

/// Geometry of a convolution: stride `(time, intra-frame)`, padding policy,
/// and dilation along time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub padding: PaddingMode,
    pub dilation_time: usize,
}

impl ConvSpec {
    pub fn unit(padding: PaddingMode) -> Self {
        ConvSpec {
            stride: (1, 1),
            padding,
            dilation_time: 1,
        }
    }

    pub fn with_stride(padding: PaddingMode, stride: (usize, usize)) -> Self {
        ConvSpec {
            stride,
            padding,
            dilation_time: 1,
        }
    }
}

fn div_ceil(a: usize, b: usize) -> usize {
    (a + b - 1) / b
}

/// Resolved placement of one convolution.
#[derive(Debug, Clone)]
pub(crate) struct Conv2dRecord {
    pub x: NodeId,
    pub kernel: NodeId,
    pub bias: NodeId,
    pub spec: ConvSpec,
    pub c_in: usize,
    pub c_out: usize,
    pub m: usize,
    pub n: usize,
    pub t_in: usize,
    pub l_in: usize,
    pub t_out: usize,
    pub l_out: usize,
    pub pad_t: usize,
    pub pad_l: usize,
}

impl Conv2dRecord {
    fn resolve(
        x_shape: &[usize],
        k_shape: &[usize],
        spec: ConvSpec,
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
    ) -> Result<Self> {
        let (c_in, t_in, l_in) = (x_shape[0], x_shape[1], x_shape[2]);
        let (c_out, kc_in, m, n) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if kc_in != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                left: x_shape.to_vec(),
                right: k_shape.to_vec(),
            });
        }
        let (rt, rl) = spec.stride;
        let d = spec.dilation_time.max(1);
        let eff_m = (m - 1) * d + 1;
        let (t_out, l_out, pad_t, pad_l) = match spec.padding {
            PaddingMode::Valid => {
                if eff_m > t_in || n > l_in {
                    return Err(Error::KernelTooLarge {
                        input: x_shape.to_vec(),
                        kernel: k_shape.to_vec(),
                    });
                }
                ((t_in - eff_m) / rt + 1, (l_in - n) / rl + 1, 0, 0)
            }
            PaddingMode::Same => {
                let t_out = div_ceil(t_in, rt);
                let l_out = div_ceil(l_in, rl);
                let total_t = ((t_out - 1) * rt + eff_m).saturating_sub(t_in);
                let total_l = ((l_out - 1) * rl + n).saturating_sub(l_in);
                (t_out, l_out, div_ceil(total_t, 2), div_ceil(total_l, 2))
            }
            PaddingMode::CausalTime => {
                let t_out = div_ceil(t_in, rt);
                let l_out = div_ceil(l_in, rl);
                let total_l = ((l_out - 1) * rl + n).saturating_sub(l_in);
                (t_out, l_out, (m - 1) * d, div_ceil(total_l, 2))
            }
        };
        Ok(Conv2dRecord {
            x,
            kernel,
            bias,
            spec,
            c_in,
            c_out,
            m,
            n,
            t_in,
            l_in,
            t_out,
            l_out,
            pad_t,
            pad_l,
        })
    }

    fn patch_rows(&self) -> usize {
        self.c_in * self.m * self.n
    }

    fn out_positions(&self) -> usize {
        self.t_out * self.l_out
    }

    /// Gathers input patches into `cols[patch_rows x out_positions]`;
    /// out-of-bounds taps read as zero.
    fn gather_cols(&self, x: &[f64], cols: &mut Vec<f64>) {
        let rows = self.patch_rows();
        let positions = self.out_positions();
        cols.clear();
        cols.resize(rows * positions, 0.0);
        let (rt, rl) = self.spec.stride;
        let d = self.spec.dilation_time.max(1);
        let plane = self.t_in * self.l_in;
        for ci in 0..self.c_in {
            for u in 0..self.m {
                for v in 0..self.n {
                    let row = (ci * self.m + u) * self.n + v;
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for tp in 0..self.t_out {
                        let ti = (tp * rt + u * d) as isize - self.pad_t as isize;
                        let seg = &mut dst[tp * self.l_out..(tp + 1) * self.l_out];
                        if ti < 0 || ti as usize >= self.t_in {
                            continue; // stays zero
                        }
                        let src_row = &x[ci * plane + ti as usize * self.l_in
                            ..ci * plane + (ti as usize + 1) * self.l_in];
                        if rl == 1 {
                            // Contiguous span with zero fringes.
                            let li0 = v as isize - self.pad_l as isize;
                            let start = (-li0).max(0) as usize;
                            let stop =
                                ((self.l_in as isize - li0).min(self.l_out as isize)).max(0)
                                    as usize;
                            if start < stop {
                                let src0 = (li0 + start as isize) as usize;
                                seg[start..stop]
                                    .copy_from_slice(&src_row[src0..src0 + (stop - start)]);
                            }
                        } else {
                            for (lp, slot) in seg.iter_mut().enumerate() {
                                let li = (lp * rl + v) as isize - self.pad_l as isize;
                                if li >= 0 && (li as usize) < self.l_in {
                                    *slot = src_row[li as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds patch-space gradients back onto the input gradient.
    fn scatter_cols(&self, gcols: &[f64], gx: &mut [f64]) {
        let positions = self.out_positions();
        let (rt, rl) = self.spec.stride;
        let d = self.spec.dilation_time.max(1);
        let plane = self.t_in * self.l_in;
        for ci in 0..self.c_in {
            for u in 0..self.m {
                for v in 0..self.n {
                    let row = (ci * self.m + u) * self.n + v;
                    let src = &gcols[row * positions..(row + 1) * positions];
                    for tp in 0..self.t_out {
                        let ti = (tp * rt + u * d) as isize - self.pad_t as isize;
                        if ti < 0 || ti as usize >= self.t_in {
                            continue;
                        }
                        let dst_row = &mut gx[ci * plane + ti as usize * self.l_in
                            ..ci * plane + (ti as usize + 1) * self.l_in];
                        let seg = &src[tp * self.l_out..(tp + 1) * self.l_out];
                        for (lp, &g) in seg.iter().enumerate() {
                            let li = (lp * rl + v) as isize - self.pad_l as isize;
                            if li >= 0 && (li as usize) < self.l_in {
                                dst_row[li as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Cross-correlation of `x: [C_in, T, L]` with `kernel:
    /// [C_out, C_in, m, n]` plus per-output-channel `bias: [C_out]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let x_shape = self.nodes[x.0].shape.clone();
        let k_shape = self.nodes[kernel.0].shape.clone();
        if x_shape.len() != 3 || k_shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: x_shape,
                right: k_shape,
            });
        }
        let rec = Conv2dRecord::resolve(&x_shape, &k_shape, spec, x, kernel, bias)?;
        if self.nodes[bias.0].data.len() != rec.c_out {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: self.nodes[bias.0].shape.clone(),
                right: vec![rec.c_out],
            });
        }

        let positions = rec.out_positions();
        let mut cols = core::mem::take(&mut self.ws.cols);
        rec.gather_cols(&self.nodes[x.0].data, &mut cols);
        let mut out = vec![0.0; rec.c_out * positions];
        gemm(
            rec.c_out,
            rec.patch_rows(),
            positions,
            &self.nodes[kernel.0].data,
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        self.ws.cols = cols;
        for co in 0..rec.c_out {
            let b = self.nodes[bias.0].data[co];
            out[co * positions..(co + 1) * positions]
                .iter_mut()
                .for_each(|o| *o += b);
        }
        let shape = vec![rec.c_out, rec.t_out, rec.l_out];
        let req = self.any_requires(&[x, kernel, bias]);
        Ok(self.push(shape, out, Op::Conv2d(rec), req))
    }

    pub(super) fn backward_conv2d(&mut self, rec: &Conv2dRecord, gout: &[f64]) {
        let positions = rec.out_positions();
        let rows = rec.patch_rows();

        if self.nodes[rec.bias.0].requires_grad {
            let mut gb = vec![0.0; rec.c_out];
            for (co, slot) in gb.iter_mut().enumerate() {
                *slot = gout[co * positions..(co + 1) * positions].iter().sum();
            }
            self.accumulate(rec.bias, &gb);
        }

        if self.nodes[rec.kernel.0].requires_grad {
            // dK = dY * cols^T, with patches regathered from the input.
            let mut cols = core::mem::take(&mut self.ws.cols);
            rec.gather_cols(&self.nodes[rec.x.0].data, &mut cols);
            let mut gk = self.take_grad(rec.kernel);
            gemm(
                rec.c_out, positions, rows, gout, false, &cols, true, 1.0, &mut gk,
            );
            self.put_grad(rec.kernel, gk);
            self.ws.cols = cols;
        }

        if self.nodes[rec.x.0].requires_grad {
            // dCols = K^T * dY, then scattered back onto the input.
            let mut gcols = vec![0.0; rows * positions];
            gemm(
                rows,
                rec.c_out,
                positions,
                &self.nodes[rec.kernel.0].data,
                true,
                gout,
                false,
                0.0,
                &mut gcols,
            );
            let mut gx = self.take_grad(rec.x);
            rec.scatter_cols(&gcols, &mut gx);
            self.put_grad(rec.x, gx);
        }
    }

    /// Interleaves `r*s` same-size maps onto an `(r, s)`-upsampled grid:
    /// `out(c, i, j) = parts[(i%r)*s + j%s](c, i/r, j/s)`.
    pub fn subpixel_interleave(&mut self, parts: &[NodeId], rate: (usize, usize)) -> Result<NodeId> {
        let (r, s) = rate;
        if parts.len() != r * s {
            return Err(Error::InvalidConfig(alloc::format!(
                "subpixel: expected {} part maps for rate ({r}, {s}), got {}",
                r * s,
                parts.len()
            )));
        }
        let first = self.nodes[parts[0].0].shape.clone();
        if first.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "subpixel_interleave",
                left: first,
                right: vec![0, 0, 0],
            });
        }
        for &p in parts {
            if self.nodes[p.0].shape != first {
                return Err(Error::ShapeMismatch {
                    op: "subpixel_interleave",
                    left: first.clone(),
                    right: self.nodes[p.0].shape.clone(),
                });
            }
        }
        let (c, t, l) = (first[0], first[1], first[2]);
        let (t_up, l_up) = (r * t, s * l);
        let mut out = vec![0.0; c * t_up * l_up];
        for (p, &part) in parts.iter().enumerate() {
            let (ir, js) = (p / s, p % s);
            let src = &self.nodes[part.0].data;
            for ci in 0..c {
                for ti in 0..t {
                    let src_row = &src[(ci * t + ti) * l..(ci * t + ti + 1) * l];
                    let out_t = ti * r + ir;
                    let dst_row =
                        &mut out[(ci * t_up + out_t) * l_up..(ci * t_up + out_t + 1) * l_up];
                    for (li, &v) in src_row.iter().enumerate() {
                        dst_row[li * s + js] = v;
                    }
                }
            }
        }
        let req = self.any_requires(parts);
        Ok(self.push(
            vec![c, t_up, l_up],
            out,
            Op::SubpixelInterleave {
                parts: parts.to_vec(),
                rate,
            },
            req,
        ))
    }

    pub(super) fn backward_subpixel(
        &mut self,
        parts: &[NodeId],
        rate: (usize, usize),
        gout: &[f64],
    ) {
        let (r, s) = rate;
        let first = self.nodes[parts[0].0].shape.clone();
        let (c, t, l) = (first[0], first[1], first[2]);
        let (t_up, l_up) = (r * t, s * l);
        for (p, &part) in parts.iter().enumerate() {
            if !self.nodes[part.0].requires_grad {
                continue;
            }
            let (ir, js) = (p / s, p % s);
            let mut dp = vec![0.0; c * t * l];
            for ci in 0..c {
                for ti in 0..t {
                    let out_t = ti * r + ir;
                    let src_row =
                        &gout[(ci * t_up + out_t) * l_up..(ci * t_up + out_t + 1) * l_up];
                    let dst_row = &mut dp[(ci * t + ti) * l..(ci * t + ti + 1) * l];
                    for (li, slot) in dst_row.iter_mut().enumerate() {
                        *slot = src_row[li * s + js];
                    }
                }
            }
            self.accumulate(part, &dp);
        }
    }
}
