//! Dense n-dimensional tensors with a reverse-mode autodiff tape and the
//! volumetric layer kernels (3D convolution, transposed convolution,
//! instance normalization, padding) needed by 3D image-translation networks.
//!
//! Computation is recorded on a [`Graph`] arena: every op appends a node, so
//! parents always precede children and the backward sweep is a reverse scan.
//! Graphs are generic over [`Element`] so the same model code runs in 32-bit
//! for training and in a 64-bit shadow mode for gradient checks.

mod element;
mod error;
mod graph;
mod kernels;
mod spec;
mod tensor;

pub mod gradcheck;
pub mod parallel;

pub use element::Element;
pub use error::{Result, VoxError};
pub use graph::{Graph, Var};
pub use kernels::{avg_pool2_forward, avg_pool2_shape};
pub use spec::{Activation, ConvSpec, PaddingMode};
pub use tensor::Tensor;
