//! Short-time Fourier transform via framing plus a fixed DFT-matrix
//! multiply, so gradients flow through to the waveform. A matrix transform
//! is plenty at the scales this crate targets and keeps the backward pass a
//! plain matmul.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::tensor::Tensor;

/// Analysis window applied to each frame before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Rectangular,
    Hann,
}

/// STFT analysis parameters. 512 samples at 16 kHz is the 32 ms default
/// frame; one-sided spectra carry `frame_len / 2 + 1` bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            frame_len: 512,
            hop: 256,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(frame_len: usize, hop: usize, window: WindowKind) -> Result<Self> {
        let cfg = StftConfig {
            frame_len,
            hop,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.frame_len % 2 != 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "stft frame_len must be positive and even, got {}",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::InvalidConfig(alloc::format!(
                "stft hop must satisfy 1 <= hop <= frame_len, got {}",
                self.hop
            )));
        }
        Ok(())
    }

    /// One-sided bin count `frame_len / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn window_values(&self) -> Vec<f64> {
        let n = self.frame_len;
        match self.window {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hann => (0..n)
                .map(|k| 0.5 * (1.0 - math::cos(2.0 * math::PI * k as f64 / n as f64)))
                .collect(),
        }
    }
}

/// Paired real/imaginary coefficient matrices, each `[T, num_bins]`.
#[derive(Debug, Clone)]
pub struct StftCoefficients {
    pub real: Tensor,
    pub imag: Tensor,
}

impl StftCoefficients {
    pub fn num_frames(&self) -> usize {
        self.real.shape()[0]
    }

    pub fn num_bins(&self) -> usize {
        self.real.shape()[1]
    }

    /// Complex magnitudes `sqrt(re^2 + im^2)`, flattened `[T, num_bins]`.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.real
            .data()
            .iter()
            .zip(self.imag.data())
            .map(|(&r, &i)| math::sqrt(r * r + i * i))
            .collect()
    }
}

/// DFT basis matrices `[frame_len, num_bins]`:
/// `cos_mat[k, f] = cos(2 pi f k / N)` and `sin_mat[k, f] = sin(2 pi f k / N)`.
pub(crate) fn dft_matrices(frame_len: usize, num_bins: usize) -> (Vec<f64>, Vec<f64>) {
    let mut cos_mat = vec![0.0; frame_len * num_bins];
    let mut sin_mat = vec![0.0; frame_len * num_bins];
    for k in 0..frame_len {
        for f in 0..num_bins {
            let phase = 2.0 * math::PI * (f * k) as f64 / frame_len as f64;
            cos_mat[k * num_bins + f] = math::cos(phase);
            sin_mat[k * num_bins + f] = math::sin(phase);
        }
    }
    (cos_mat, sin_mat)
}

/// STFT of a waveform: `real[t,f] = sum_k w[k] y_t[k] cos(2 pi f k / N)`,
/// `imag[t,f] = -sum_k w[k] y_t[k] sin(2 pi f k / N)`.
pub fn stft(y: &[f64], cfg: &StftConfig) -> Result<StftCoefficients> {
    cfg.validate()?;
    let mut g = Graph::new();
    let yn = g.leaf_from(vec![y.len()], y.to_vec(), false);
    let (re, im) = stft_nodes(&mut g, yn, cfg)?;
    let t = g.shape(re)[0];
    let bins = cfg.num_bins();
    Ok(StftCoefficients {
        real: Tensor::new(vec![t, bins], g.value(re).to_vec()).expect("shape consistent"),
        imag: Tensor::new(vec![t, bins], g.value(im).to_vec()).expect("shape consistent"),
    })
}

/// Graph route of [`stft`]; gradients flow back to `y`.
pub fn stft_nodes(g: &mut Graph, y: NodeId, cfg: &StftConfig) -> Result<(NodeId, NodeId)> {
    cfg.validate()?;
    let n = cfg.frame_len;
    let bins = cfg.num_bins();
    let frames = g.frame(y, n, cfg.hop)?;
    let t = g.shape(frames)[0];

    let windowed = match cfg.window {
        WindowKind::Rectangular => frames,
        WindowKind::Hann => {
            let w = cfg.window_values();
            let mut tiled = Vec::with_capacity(t * n);
            for _ in 0..t {
                tiled.extend_from_slice(&w);
            }
            let wn = g.leaf_from(vec![t, n], tiled, false);
            g.mul(frames, wn)?
        }
    };

    let (cos_mat, sin_mat) = dft_matrices(n, bins);
    let neg_sin: Vec<f64> = sin_mat.iter().map(|v| -v).collect();
    let cos_node = g.leaf_from(vec![n, bins], cos_mat, false);
    let neg_sin_node = g.leaf_from(vec![n, bins], neg_sin, false);
    let real = g.matmul(windowed, cos_node)?;
    let imag = g.matmul(windowed, neg_sin_node)?;
    Ok((real, imag))
}

/// Log-magnitude matrix `20 log10(|S| + 1e-8)` for spectrogram rendering,
/// returned with frame/bin counts.
pub fn log_magnitude_spectrogram(
    y: &[f64],
    cfg: &StftConfig,
) -> Result<(Vec<f64>, usize, usize)> {
    let coeffs = stft(y, cfg)?;
    let mags = coeffs.magnitudes();
    let log: Vec<f64> = mags.iter().map(|&m| 20.0 * math::log10(m + 1e-8)).collect();
    Ok((log, coeffs.num_frames(), coeffs.num_bins()))
}
