//! Time-domain speech enhancement with a dense convolutional network (DCN)
//! and self-attention, built on a self-contained f64 tensor engine with
//! reverse-mode differentiation.
//!
//! The crate is organized around the processing chain: a waveform is chunked
//! into overlapping frames, enhanced frame-by-frame by an encoder-decoder
//! network of dense blocks and attention modules, and reconstructed by
//! overlap-add. Four training losses (time-domain MSE, STFT-magnitude MAE,
//! their convex combination, and a phase-constrained magnitude loss over
//! speech and predicted noise) are differentiable end-to-end.
//!
//! `no_std` compatible (requires `alloc`); enable the `libm` feature when
//! building without `std`.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("dcn-core requires either the `std` or the `libm` feature");

extern crate alloc;

pub mod error;
pub mod framing;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod stft;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{ConvSpec, Graph, NodeId, PaddingMode};
pub use tensor::Tensor;
