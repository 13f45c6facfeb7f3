//! Wigner-D matrices for the real spherical-harmonic basis.
//!
//! Degree 0 and 1 are written down directly (degree 1 is the rotation
//! matrix conjugated by the (y, z, x) axis permutation). Higher degrees
//! are obtained by projecting D^(l-1) ⊗ D^1 onto the degree-l component
//! with the corresponding coupling tensor. The quadrature projection in
//! [`super::cg`] provides an independent second route used for checks.

use super::cg::{clebsch_gordan, wigner_from_projection};
use super::{Rotation, So3Error};
use crate::tensor::Tensor;

/// Orthogonal representation matrix of a rotation on type-l features.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerD {
    pub l: usize,
    pub m: Tensor,
}

/// Axis order of the degree-1 real harmonics: m = (-1, 0, 1) ↦ (y, z, x).
const AXIS_OF_M: [usize; 3] = [1, 2, 0];

/// Change of basis C with v_cartesian = C · v_sh for degree-1 features,
/// so C · D¹(R) · Cᵀ = R.
pub const SH1_TO_CARTESIAN: [[f64; 3]; 3] = [
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
];

fn wigner_d1(r: &Rotation) -> Tensor {
    let mut out = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        for j in 0..3 {
            out.set(&[i, j], r.matrix()[AXIS_OF_M[i]][AXIS_OF_M[j]]);
        }
    }
    out
}

/// Wigner-D matrix of degree l for a rotation.
pub fn wigner_d(l: usize, r: &Rotation) -> Result<WignerD, So3Error> {
    if l > super::sh::J_MAX {
        return Err(So3Error::DegreeOutOfRange {
            j: l,
            max: super::sh::J_MAX,
        });
    }
    if l == 0 {
        return Ok(WignerD {
            l,
            m: Tensor::new(vec![1, 1], vec![1.0]),
        });
    }
    let d1 = wigner_d1(r);
    let mut current = d1.clone();
    for deg in 2..=l {
        let cg = clebsch_gordan(deg - 1, 1, deg).expect("triangle holds by construction");
        let m_mat = cg.as_matrix(); // (d_prev*3, d)
        let d_prev = 2 * (deg - 1) + 1;
        let d = 2 * deg + 1;
        // T = (D_prev ⊗ D_1) · M
        let mut t = Tensor::zeros(&[d_prev * 3, d]);
        for a in 0..d_prev {
            for b in 0..3 {
                let row = a * 3 + b;
                for ap in 0..d_prev {
                    let da = current.at(&[a, ap]);
                    if da == 0.0 {
                        continue;
                    }
                    for bp in 0..3 {
                        let kron = da * d1.at(&[b, bp]);
                        let src = ap * 3 + bp;
                        for c in 0..d {
                            let v = t.at(&[row, c]) + kron * m_mat.at(&[src, c]);
                            t.set(&[row, c], v);
                        }
                    }
                }
            }
        }
        // D = Mᵀ · T
        let mut next = Tensor::zeros(&[d, d]);
        for c in 0..d {
            for cp in 0..d {
                let mut acc = 0.0;
                for row in 0..d_prev * 3 {
                    acc += m_mat.at(&[row, c]) * t.at(&[row, cp]);
                }
                next.set(&[c, cp], acc);
            }
        }
        current = next;
    }
    Ok(WignerD { l, m: current })
}

/// Quadrature-projection route (independent of the coupling tensors).
pub fn wigner_d_from_samples(l: usize, r: &Rotation) -> Result<WignerD, So3Error> {
    if l > super::sh::J_MAX {
        return Err(So3Error::DegreeOutOfRange {
            j: l,
            max: super::sh::J_MAX,
        });
    }
    Ok(WignerD {
        l,
        m: wigner_from_projection(l, r),
    })
}
