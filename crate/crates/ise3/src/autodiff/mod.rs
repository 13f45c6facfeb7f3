//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records primitive operations append-only; [`Tape::backward`]
//! sweeps the nodes in reverse, accumulating dense gradients. Graphs here
//! are small (a few thousand nodes per training example), so simplicity
//! and determinism win over sparsity: identical tapes produce bitwise
//! identical gradients.
//!
//! Two pieces are specific to this crate: `sph_all`, whose backward applies
//! the analytic spherical-harmonic gradients so that position gradients
//! flow through the equivariant basis construction, and `stop_gradient`,
//! which cuts that flow to reproduce the constant-basis regime.

mod gradcheck;
mod tape;

pub use gradcheck::{central_diff_gradient, max_rel_err};
pub use tape::{Gradients, Tape, Var};
