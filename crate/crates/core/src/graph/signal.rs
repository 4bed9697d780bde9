//! Differentiable framing and overlap-add, so gradients flow from losses on
//! reconstructed waveforms back to frame-level network outputs.

use alloc::vec;

use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::framing;

impl Graph {
    /// Chunks a 1-D node into `[T, frame_len]` overlapping frames
    /// (zero-padded tail), `T = ceil(len / hop)`.
    pub fn frame(&mut self, y: NodeId, frame_len: usize, hop: usize) -> Result<NodeId> {
        let shape = &self.nodes[y.0].shape;
        if shape.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "frame",
                left: shape.clone(),
                right: vec![0],
            });
        }
        let signal_len = shape[0];
        framing::check_framing(signal_len, frame_len, hop)?;
        let t_count = framing::num_frames(signal_len, hop);
        let data = framing::frame_data(&self.nodes[y.0].data, frame_len, hop);
        let req = self.nodes[y.0].requires_grad;
        Ok(self.push(
            vec![t_count, frame_len],
            data,
            Op::Frame { y, frame_len, hop },
            req,
        ))
    }

    /// Coverage-normalized overlap-add of a `[T, L]` frame node back to a
    /// waveform of `out_len` samples; `T` must equal `ceil(out_len / hop)`.
    pub fn overlap_add(&mut self, frames: NodeId, hop: usize, out_len: usize) -> Result<NodeId> {
        let shape = &self.nodes[frames.0].shape;
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "overlap_add",
                left: shape.clone(),
                right: vec![0, 0],
            });
        }
        let (t_count, frame_len) = (shape[0], shape[1]);
        framing::check_framing(out_len, frame_len, hop)?;
        if framing::num_frames(out_len, hop) != t_count {
            return Err(Error::InvalidConfig(alloc::format!(
                "overlap_add: {t_count} frames cannot reconstruct {out_len} samples at hop {hop}"
            )));
        }
        let data = framing::overlap_add_data(
            &self.nodes[frames.0].data,
            t_count,
            frame_len,
            hop,
            out_len,
        );
        let req = self.nodes[frames.0].requires_grad;
        Ok(self.push(
            vec![out_len],
            data,
            Op::OverlapAdd {
                frames,
                hop,
                out_len,
            },
            req,
        ))
    }

    pub(super) fn backward_frame(&mut self, y: NodeId, frame_len: usize, hop: usize, gout: &[f64]) {
        if !self.nodes[y.0].requires_grad {
            return;
        }
        let signal_len = self.nodes[y.0].shape[0];
        let t_count = framing::num_frames(signal_len, hop);
        let mut dy = vec![0.0; signal_len];
        for t in 0..t_count {
            let start = t * hop;
            let take = frame_len.min(signal_len - start);
            for k in 0..take {
                dy[start + k] += gout[t * frame_len + k];
            }
        }
        self.accumulate(y, &dy);
    }

    pub(super) fn backward_overlap_add(
        &mut self,
        frames: NodeId,
        hop: usize,
        out_len: usize,
        gout: &[f64],
    ) {
        if !self.nodes[frames.0].requires_grad {
            return;
        }
        let shape = &self.nodes[frames.0].shape;
        let (t_count, frame_len) = (shape[0], shape[1]);
        let cov = framing::coverage(out_len, t_count, frame_len, hop);
        let mut df = vec![0.0; t_count * frame_len];
        for t in 0..t_count {
            let start = t * hop;
            let take = frame_len.min(out_len.saturating_sub(start));
            for k in 0..take {
                df[t * frame_len + k] = gout[start + k] / cov[start + k];
            }
        }
        self.accumulate(frames, &df);
    }
}
