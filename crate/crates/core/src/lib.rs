//! Cross-architecture universal feature coding.
//!
//! CNN feature maps (`N x H x W`) and transformer token sequences (`M x L`)
//! are brought into one 2D token layout and one value range, then compressed
//! by a single learned scale-hyperprior codec whose latents are range coded
//! into real bitstreams.
//!
//! This crate is `no_std` (it needs `alloc`) and performs no IO. File
//! formats, dataset tooling and the command-line interface live in the
//! companion `caufc` crate.
//!
//! Module map:
//! - [`tensor`]: feature tensors and their layout/architecture tags.
//! - [`synthetic`]: deterministic CNN-like and ViT-like feature generators.
//! - [`alignment`]: tokenization, truncation and (shifted) normalization.
//! - [`entropy`]: quantized CDF tables and the range coder.
//! - [`codec`]: the hyperprior codec, its gradients, training and bitstreams.
//! - [`eval`]: rate, distortion, KS distance, proxy accuracy, RD curves.
#![no_std]

extern crate alloc;

pub mod alignment;
pub mod codec;
pub mod entropy;
mod error;
pub mod eval;
pub mod rng;
pub mod synthetic;
pub mod tensor;

pub use alignment::{AlignmentSpec, NormMode, TokenMatrix, TokenOrigin};
pub use codec::{Bitstream, CodecArch, CodecModel, TrainingConfig};
pub use error::{Error, Result};
pub use tensor::{ArchTag, FeatureTensor, Layout};
