//! Training objectives: time-domain MSE, STFT-magnitude MAE, their convex
//! combination, and the phase-constrained magnitude loss over enhanced
//! speech and predicted noise. All four are recorded on the tape, so
//! gradients reach the network through overlap-add.
//!
//! The magnitude losses measure `|Re| + |Im|` per bin (an L1 magnitude) and
//! take the mean absolute difference across all time-frequency bins. The
//! phase-constrained loss adds the same measure over the noise estimate
//! `n_hat = y - s_hat`, which pins the estimate's phase to one of at most
//! two candidates per bin instead of leaving it free.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::stft::{stft, stft_nodes, StftConfig};

/// Which objective to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Utterance-level mean squared error in the time domain.
    Time,
    /// Mean absolute error between L1 magnitudes of STFT coefficients.
    SpectralMagnitude,
    /// `alpha * Time + (1 - alpha) * SpectralMagnitude`.
    TimeFrequency,
    /// Equal-weight spectral-magnitude loss over speech and predicted noise.
    PhaseConstrainedMagnitude,
}

/// Loss selection plus the STFT used by the spectral terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Convex combination weight; only meaningful for `TimeFrequency`.
    pub alpha: f64,
    pub stft: StftConfig,
}

impl LossConfig {
    pub fn new(kind: LossKind, alpha: f64, stft: StftConfig) -> Result<Self> {
        if kind == LossKind::TimeFrequency && !(0.0..=1.0).contains(&alpha) {
            return Err(Error::OutOfRange {
                what: "alpha",
                value: alpha,
                min: 0.0,
                max: 1.0,
            });
        }
        stft.validate()?;
        Ok(LossConfig { kind, alpha, stft })
    }

    pub fn time() -> Self {
        LossConfig {
            kind: LossKind::Time,
            alpha: 0.8,
            stft: StftConfig::default(),
        }
    }

    pub fn pcm() -> Self {
        LossConfig {
            kind: LossKind::PhaseConstrainedMagnitude,
            alpha: 0.8,
            stft: StftConfig::default(),
        }
    }
}

fn check_lengths(g: &Graph, what: &'static str, a: NodeId, b: NodeId) -> Result<()> {
    let (la, lb) = (g.shape(a)[0], g.shape(b)[0]);
    if g.shape(a).len() != 1 || g.shape(b).len() != 1 || la != lb {
        return Err(Error::LengthMismatch {
            what,
            left: la,
            right: lb,
        });
    }
    Ok(())
}

/// `(1/M) sum (s - s_hat)^2`.
pub fn loss_time(g: &mut Graph, s: NodeId, s_hat: NodeId) -> Result<NodeId> {
    check_lengths(g, "loss_time", s, s_hat)?;
    let diff = g.sub(s, s_hat)?;
    let sq = g.square(diff);
    Ok(g.mean_all(sq))
}

/// L1 magnitude matrix `|Re| + |Im|` of a signal's STFT.
fn l1_magnitude(g: &mut Graph, signal: NodeId, cfg: &StftConfig) -> Result<NodeId> {
    let (re, im) = stft_nodes(g, signal, cfg)?;
    let re_abs = g.abs(re);
    let im_abs = g.abs(im);
    g.add(re_abs, im_abs)
}

/// Mean absolute difference between the L1 magnitudes of the two signals'
/// STFTs, over all `T * num_bins` cells.
pub fn loss_sm(g: &mut Graph, s: NodeId, s_hat: NodeId, cfg: &StftConfig) -> Result<NodeId> {
    check_lengths(g, "loss_sm", s, s_hat)?;
    let mag_s = l1_magnitude(g, s, cfg)?;
    let mag_h = l1_magnitude(g, s_hat, cfg)?;
    let diff = g.sub(mag_s, mag_h)?;
    let abs_diff = g.abs(diff);
    Ok(g.mean_all(abs_diff))
}

/// `alpha * loss_time + (1 - alpha) * loss_sm`.
pub fn loss_tf(
    g: &mut Graph,
    s: NodeId,
    s_hat: NodeId,
    alpha: f64,
    cfg: &StftConfig,
) -> Result<NodeId> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange {
            what: "alpha",
            value: alpha,
            min: 0.0,
            max: 1.0,
        });
    }
    let lt = loss_time(g, s, s_hat)?;
    let lsm = loss_sm(g, s, s_hat, cfg)?;
    let left = g.mul_scalar(lt, alpha);
    let right = g.mul_scalar(lsm, 1.0 - alpha);
    g.add(left, right)
}

/// `1/2 loss_sm(s, s_hat) + 1/2 loss_sm(n, n_hat)` with `n = y - s` and
/// `n_hat = y - s_hat`.
pub fn loss_pcm(
    g: &mut Graph,
    s: NodeId,
    s_hat: NodeId,
    y: NodeId,
    cfg: &StftConfig,
) -> Result<NodeId> {
    check_lengths(g, "loss_pcm", s, s_hat)?;
    check_lengths(g, "loss_pcm", s, y)?;
    let n = g.sub(y, s)?;
    let n_hat = g.sub(y, s_hat)?;
    let speech = loss_sm(g, s, s_hat, cfg)?;
    let noise = loss_sm(g, n, n_hat, cfg)?;
    let half_speech = g.mul_scalar(speech, 0.5);
    let half_noise = g.mul_scalar(noise, 0.5);
    g.add(half_speech, half_noise)
}

/// Dispatches on the configured loss kind. `y` is only consulted by the
/// phase-constrained loss.
pub fn build_loss(
    g: &mut Graph,
    cfg: &LossConfig,
    s: NodeId,
    s_hat: NodeId,
    y: NodeId,
) -> Result<NodeId> {
    match cfg.kind {
        LossKind::Time => loss_time(g, s, s_hat),
        LossKind::SpectralMagnitude => loss_sm(g, s, s_hat, &cfg.stft),
        LossKind::TimeFrequency => loss_tf(g, s, s_hat, cfg.alpha, &cfg.stft),
        LossKind::PhaseConstrainedMagnitude => loss_pcm(g, s, s_hat, y, &cfg.stft),
    }
}

fn eval_on_graph(
    build: impl FnOnce(&mut Graph, NodeId, NodeId, NodeId) -> Result<NodeId>,
    s: &[f64],
    s_hat: &[f64],
    y: &[f64],
) -> Result<f64> {
    let mut g = Graph::new();
    let sn = g.leaf_from(alloc::vec![s.len()], s.to_vec(), false);
    let hn = g.leaf_from(alloc::vec![s_hat.len()], s_hat.to_vec(), false);
    let yn = g.leaf_from(alloc::vec![y.len()], y.to_vec(), false);
    let loss = build(&mut g, sn, hn, yn)?;
    Ok(g.scalar_value(loss))
}

pub fn eval_loss_time(s: &[f64], s_hat: &[f64]) -> Result<f64> {
    eval_on_graph(|g, sn, hn, _| loss_time(g, sn, hn), s, s_hat, s)
}

pub fn eval_loss_sm(s: &[f64], s_hat: &[f64], cfg: &StftConfig) -> Result<f64> {
    eval_on_graph(|g, sn, hn, _| loss_sm(g, sn, hn, cfg), s, s_hat, s)
}

pub fn eval_loss_tf(s: &[f64], s_hat: &[f64], alpha: f64, cfg: &StftConfig) -> Result<f64> {
    eval_on_graph(|g, sn, hn, _| loss_tf(g, sn, hn, alpha, cfg), s, s_hat, s)
}

pub fn eval_loss_pcm(s: &[f64], s_hat: &[f64], y: &[f64], cfg: &StftConfig) -> Result<f64> {
    eval_on_graph(|g, sn, hn, yn| loss_pcm(g, sn, hn, yn, cfg), s, s_hat, y)
}

/// Quantitative stripe-artifact diagnostic: the strength of periodic
/// structure in the time-averaged 64 ms magnitude spectrum, as the largest
/// positive normalized autocorrelation of the detrended mean spectrum over
/// comb-like lags. 0 means no regular comb; silence scores 0 by convention.
/// This is a diagnostic, not a training signal.
pub fn artifact_probe(s_hat: &[f64], sample_rate: usize) -> Result<f64> {
    let frame = (sample_rate * 64 / 1000) & !1; // 64 ms, even
    if s_hat.len() < frame {
        return Err(Error::SignalTooShort {
            needed: frame,
            got: s_hat.len(),
        });
    }
    let energy: f64 = s_hat.iter().map(|v| v * v).sum();
    if energy <= 1e-20 {
        return Ok(0.0);
    }
    let cfg = StftConfig::new(frame, frame / 2, crate::stft::WindowKind::Hann)?;
    let coeffs = stft(s_hat, &cfg)?;
    let (t, bins) = (coeffs.num_frames(), coeffs.num_bins());
    let mags = coeffs.magnitudes();

    // Time-averaged magnitude spectrum.
    let mut mean_spec = alloc::vec![0.0f64; bins];
    for frame_row in mags.chunks(bins) {
        for (acc, &m) in mean_spec.iter_mut().zip(frame_row) {
            *acc += m;
        }
    }
    mean_spec.iter_mut().for_each(|v| *v /= t as f64);

    // Detrend with a centered moving average so broadband tilt does not
    // masquerade as periodicity.
    let half = 4usize;
    let detrended: Vec<f64> = (0..bins)
        .map(|f| {
            let lo = f.saturating_sub(half);
            let hi = (f + half + 1).min(bins);
            let local: f64 = mean_spec[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            mean_spec[f] - local
        })
        .collect();

    let ac0: f64 = detrended.iter().map(|v| v * v).sum();
    if ac0 <= 0.0 {
        return Ok(0.0);
    }
    let max_lag = bins / 4;
    let mut score: f64 = 0.0;
    for lag in 2..=max_lag {
        let ac: f64 = (0..bins - lag).map(|f| detrended[f] * detrended[f + lag]).sum();
        score = score.max(ac / ac0);
    }
    Ok(score.max(0.0))
}
