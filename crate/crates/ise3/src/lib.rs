//! Iterative SE(3)-equivariant attention networks and a particle
//! energy-minimization benchmark.
//!
//! The crate is organized bottom-up:
//! - [`tensor`]: dense f64 tensors and matmul kernels;
//! - [`so3`]: spherical harmonics, coupling tensors, Wigner-D matrices,
//!   equivariant basis construction;
//! - [`autodiff`]: tape-based reverse-mode differentiation, including the
//!   analytic derivative of the basis construction and a stop-gradient;
//! - [`sim`]: the double-well pairwise potential, problem instances, and
//!   interaction-strength neighborhoods;
//! - [`net`]: fibers, equivariant attention layers, blocks, and the
//!   single-pass / iterative models with position updates;
//! - [`optim`]: Adam + cosine schedule training, gradient-descent
//!   refinement, and evaluation statistics;
//! - [`study`]: orchestration that trains and compares the methods;
//! - [`verify`]: the property suites exposed to the CLI.

pub mod autodiff;
pub mod net;
pub mod optim;
pub mod sim;
pub mod so3;
pub mod study;
pub mod tensor;
pub mod verify;
