//! Chunking waveforms into overlapping frames and reconstructing them by
//! coverage-normalized overlap-add.
//!
//! A signal of `M` samples with frame length `L` and frame shift `J`
//! produces `T = ceil(M / J)` frames; frame `t` holds samples
//! `y[t*J + k]` for `k in 0..L`, zero where the index runs past the end.
//! Overlap-add divides each output sample by the number of frames covering
//! it, which makes `overlap_add(frame_signal(y)) == y`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Overlapping frames of a waveform plus the bookkeeping needed to invert
/// the chunking.
#[derive(Debug, Clone)]
pub struct FrameMatrix {
    /// `[T, L]` tensor of frames.
    pub frames: Tensor,
    /// Original waveform length in samples.
    pub original_len: usize,
    pub frame_len: usize,
    pub frame_shift: usize,
}

impl FrameMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }
}

pub(crate) fn num_frames(signal_len: usize, hop: usize) -> usize {
    (signal_len + hop - 1) / hop
}

pub(crate) fn check_framing(signal_len: usize, frame_len: usize, hop: usize) -> Result<()> {
    if signal_len == 0 {
        return Err(Error::EmptySignal);
    }
    if hop == 0 || frame_len < hop {
        return Err(Error::InvalidConfig(alloc::format!(
            "framing requires frame_len >= hop >= 1, got frame_len={frame_len}, hop={hop}"
        )));
    }
    Ok(())
}

pub(crate) fn frame_data(y: &[f64], frame_len: usize, hop: usize) -> Vec<f64> {
    let t_count = num_frames(y.len(), hop);
    let mut out = vec![0.0; t_count * frame_len];
    for t in 0..t_count {
        let start = t * hop;
        let take = frame_len.min(y.len().saturating_sub(start));
        out[t * frame_len..t * frame_len + take].copy_from_slice(&y[start..start + take]);
    }
    out
}

/// Number of frames covering each of the first `out_len` samples.
pub(crate) fn coverage(out_len: usize, t_count: usize, frame_len: usize, hop: usize) -> Vec<f64> {
    let mut cov = vec![0.0; out_len];
    for t in 0..t_count {
        let start = t * hop;
        let stop = (start + frame_len).min(out_len);
        for c in cov.iter_mut().take(stop).skip(start.min(out_len)) {
            *c += 1.0;
        }
    }
    cov
}

pub(crate) fn overlap_add_data(
    frames: &[f64],
    t_count: usize,
    frame_len: usize,
    hop: usize,
    out_len: usize,
) -> Vec<f64> {
    let cov = coverage(out_len, t_count, frame_len, hop);
    let mut out = vec![0.0; out_len];
    for t in 0..t_count {
        let start = t * hop;
        let row = &frames[t * frame_len..(t + 1) * frame_len];
        for (k, &v) in row.iter().enumerate() {
            let i = start + k;
            if i < out_len {
                out[i] += v;
            }
        }
    }
    for (o, c) in out.iter_mut().zip(&cov) {
        *o /= c;
    }
    out
}

/// Chunks a waveform into overlapping frames (zero-padded tail).
pub fn frame_signal(y: &[f64], frame_len: usize, hop: usize) -> Result<FrameMatrix> {
    check_framing(y.len(), frame_len, hop)?;
    let t_count = num_frames(y.len(), hop);
    let data = frame_data(y, frame_len, hop);
    Ok(FrameMatrix {
        frames: Tensor::new(vec![t_count, frame_len], data).expect("consistent shape"),
        original_len: y.len(),
        frame_len,
        frame_shift: hop,
    })
}

/// Reconstructs the waveform from a frame matrix by coverage-normalized
/// overlap-add.
pub fn overlap_add(frames: &FrameMatrix) -> Vec<f64> {
    overlap_add_data(
        frames.frames.data(),
        frames.num_frames(),
        frames.frame_len,
        frames.frame_shift,
        frames.original_len,
    )
}
