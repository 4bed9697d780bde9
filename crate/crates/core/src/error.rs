//! Error type shared by the tensor engine, DSP, model, and metrics code.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Elementwise or structural shape mismatch; carries both shapes.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Matrix product inner dimensions differ.
    MatmulDimMismatch { left: Vec<usize>, right: Vec<usize> },
    /// A softmax row contained only -inf entries.
    EmptyAttentionRow { row: usize },
    /// `backward` was called on a non-scalar node.
    NonScalarLoss { shape: Vec<usize> },
    /// Reshape target element count differs from the source.
    ReshapeCountMismatch { from: Vec<usize>, to: Vec<usize> },
    /// Axis order is not a permutation of 0..ndim.
    InvalidPermutation { order: Vec<usize> },
    /// Convolution kernel does not fit inside the (padded) input.
    KernelTooLarge {
        input: Vec<usize>,
        kernel: Vec<usize>,
    },
    /// Signal-level length mismatch (losses, metrics, mixing).
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    /// Empty input signal where at least one sample is required.
    EmptySignal,
    /// Signal too short for the requested analysis.
    SignalTooShort { needed: usize, got: usize },
    /// An all-zero signal where energy is required (SNR, SI-SDR, mixing).
    SilentSignal { which: &'static str },
    /// SI-SDR estimate is identically zero.
    ZeroEstimate,
    /// Invalid configuration value; message names the field.
    InvalidConfig(String),
    /// A gradient contained NaN; training must halt.
    NanGradient { param: String },
    /// A parameter out of its documented range.
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    /// Attention was requested on a model built without it.
    AttentionDisabled,
    /// Skip-connection shapes disagree at a decoder junction.
    SkipShapeMismatch {
        layer: usize,
        encoder: Vec<usize>,
        decoder: Vec<usize>,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch {left:?} vs {right:?}")
            }
            Error::MatmulDimMismatch { left, right } => {
                write!(f, "matmul: inner dimensions differ, {left:?} x {right:?}")
            }
            Error::EmptyAttentionRow { row } => {
                write!(f, "empty attention row {row}: all entries are -inf")
            }
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::ReshapeCountMismatch { from, to } => {
                write!(f, "reshape: element count differs, {from:?} -> {to:?}")
            }
            Error::InvalidPermutation { order } => {
                write!(f, "permute: {order:?} is not a permutation")
            }
            Error::KernelTooLarge { input, kernel } => {
                write!(f, "conv2d: kernel {kernel:?} larger than padded input {input:?}")
            }
            Error::LengthMismatch { what, left, right } => {
                write!(f, "{what}: length mismatch {left} vs {right}")
            }
            Error::EmptySignal => write!(f, "empty signal"),
            Error::SignalTooShort { needed, got } => {
                write!(f, "signal too short: need {needed} samples, got {got}")
            }
            Error::SilentSignal { which } => {
                write!(f, "silent {which} signal: energy is zero")
            }
            Error::ZeroEstimate => write!(f, "si-sdr: estimate is identically zero"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::NanGradient { param } => {
                write!(f, "NaN gradient for parameter `{param}`; training halted")
            }
            Error::OutOfRange {
                what,
                value,
                min,
                max,
            } => write!(f, "{what} = {value} out of range [{min}, {max}]"),
            Error::AttentionDisabled => {
                write!(f, "attention maps requested but model has attention disabled")
            }
            Error::SkipShapeMismatch {
                layer,
                encoder,
                decoder,
            } => write!(
                f,
                "skip connection at decoder layer {layer}: encoder {encoder:?} vs decoder {decoder:?}"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
