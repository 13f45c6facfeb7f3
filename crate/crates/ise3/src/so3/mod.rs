//! SO(3) representation machinery: real spherical harmonics with analytic
//! gradients, Clebsch-Gordan coupling tensors, Wigner-D matrices, and the
//! direction-dependent equivariant basis matrices built from them.
//!
//! Conventions (fixed once, self-consistent, verified by the property
//! suites rather than against any external table):
//! - real orthonormal spherical harmonics, order index `m = -J..=J` with
//!   `m < 0` sine-like and `m > 0` cosine-like; `m = +1` is x-like at
//!   degree 1, so `Y_1 ∝ (y, z, x)` over `m = (-1, 0, 1)`;
//! - Condon-Shortley phase absorbed so every value is real and `Y_{1,1}`
//!   is positive on the +x axis;
//! - all arithmetic in f64.

mod basis;
mod cg;
pub mod quad;
mod rotation;
mod sh;
mod wigner;

pub use basis::{pair_basis, basis_for_pairs, BasisSet, EdgeBasis};
pub use cg::{clebsch_gordan, CgTable, CGTensor};
pub use rotation::Rotation;
pub use sh::{real_sph_harm, sph_harm_grad, sh_eval_batch, sh_grad_batch, J_MAX, R_MIN};
pub use wigner::{wigner_d, wigner_d_from_samples, WignerD, SH1_TO_CARTESIAN};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum So3Error {
    #[error("degree {j} out of range 0..={max}")]
    DegreeOutOfRange { j: usize, max: usize },
    #[error("order {m} out of range for degree {j}")]
    OrderOutOfRange { j: usize, m: i64 },
    #[error("direction norm {norm} is not 1 (tolerance {tol})")]
    NonUnitDirection { norm: f64, tol: f64 },
    #[error("vector norm {norm} below r_min {r_min}; direction undefined")]
    DegenerateGeometry { norm: f64, r_min: f64 },
    #[error("matrix is not a rotation: {reason}")]
    InvalidRotation { reason: String },
    #[error("degrees (l_out={l_out}, l_in={l_in}, j={j}) violate |l_in-l_out| <= j <= l_in+l_out")]
    TriangleViolation { l_out: usize, l_in: usize, j: usize },
}
