//! Differentiable operators over rank-4 tensors.
//!
//! Every operator records itself on a [`Tape`] together with its
//! vector-Jacobian product; [`grad_check`] verifies those products against
//! central finite differences.

mod adam;
mod basic;
mod conv;
mod gradcheck;
mod resize;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use basic::{avg_pool_forward, max_pool_forward};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use resize::{cubic_kernel, resize, AxisTaps, ResizeMode, BICUBIC_A};
pub use tape::{Gradients, Tape, Var};
