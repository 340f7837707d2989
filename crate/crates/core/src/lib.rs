//! Single-image super-resolution with a Dense U-net and shuffle pooling.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`tensor_ops`]: NCHW tensors and a reverse-mode tape with
//!   convolution, pooling, resampling and concatenation, plus Adam and a
//!   finite-difference gradient checker.
//! * [`pooling`]: max/average pooling and lossless shuffle pooling, with an
//!   information-retention analyzer.
//! * [`network`]: UnetSR and Dense U-net builders and forward pass.
//! * [`losses`] and [`metrics`]: MSE, SSIM, Sobel gradient error, the mixed
//!   training loss, and PSNR/SSIM on 8-bit images.
//! * [`data`]: image loading and LR/HR pair generation.
//! * [`trainer`] and [`checkpoint`]: training loop, evaluation, persistence.
//! * [`config`] and [`cli`]: run configuration and the command implementations
//!   behind the `densesr` binary.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pooling;
pub mod tensor;
pub mod tensor_ops;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
