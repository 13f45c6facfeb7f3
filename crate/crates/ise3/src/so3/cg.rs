//! Clebsch-Gordan coupling tensors in the real spherical-harmonic basis.
//!
//! For degrees (l_out, l_in, J) satisfying the triangle inequality there is
//! a one-dimensional space of linear maps M : V_J → V_{l_out} ⊗ V_{l_in}
//! commuting with rotations. We find it numerically as the null space of
//! the commutation constraint sampled at a few random rotations, normalize
//! M to orthonormal columns, and fix the sign so the first sizeable
//! coefficient in (m, a, b) scan order is positive. Solved tensors are
//! cached process-wide.

use super::sh::{eval_unit, sh_index};
use super::{quad, So3Error};
use crate::tensor::Tensor;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Coupling tensor with coefficients indexed `[m_J, m_out, m_in]`,
/// shape (2J+1, 2·l_out+1, 2·l_in+1).
#[derive(Debug, Clone, PartialEq)]
pub struct CGTensor {
    pub l_out: usize,
    pub l_in: usize,
    pub j: usize,
    pub coeffs: Tensor,
}

impl CGTensor {
    /// Coefficient tensor viewed as the (d_out·d_in) × (2J+1) intertwiner
    /// matrix, row = m_out·d_in + m_in, column = m_J.
    pub fn as_matrix(&self) -> Tensor {
        let d_o = 2 * self.l_out + 1;
        let d_i = 2 * self.l_in + 1;
        let d_j = 2 * self.j + 1;
        let mut out = Tensor::zeros(&[d_o * d_i, d_j]);
        for mj in 0..d_j {
            for a in 0..d_o {
                for b in 0..d_i {
                    let v = self.coeffs.at(&[mj, a, b]);
                    out.set(&[a * d_i + b, mj], v);
                }
            }
        }
        out
    }
}

pub(crate) fn triangle_ok(l_out: usize, l_in: usize, j: usize) -> bool {
    let lo = l_out as i64;
    let li = l_in as i64;
    let jj = j as i64;
    (lo - li).abs() <= jj && jj <= lo + li
}

// ---------------------------------------------------------------------------
// Bootstrap Wigner-D by quadrature projection of spherical harmonics.
//
// D^l(R)[m,m'] = ∫ Y_m(R·u) Y_{m'}(u) dΩ. The integrand is a polynomial of
// degree ≤ 2l, so a fixed Gauss-Legendre × uniform grid evaluates the
// projection exactly (to rounding). This route never touches CG tensors,
// which breaks the circularity when solving for them.
// ---------------------------------------------------------------------------

struct ProjectionGrid {
    points: Vec<[f64; 3]>,
    /// weights[i] * Y_{m'}(u_i), laid out per point
    weighted_values: Vec<Vec<f64>>,
}

fn projection_grid() -> &'static ProjectionGrid {
    static GRID: OnceLock<ProjectionGrid> = OnceLock::new();
    GRID.get_or_init(|| {
        let grid = quad::sphere_quadrature(10, 20);
        let points: Vec<[f64; 3]> = grid.iter().map(|&(u, _)| u).collect();
        let weighted_values = grid
            .iter()
            .map(|&(u, w)| eval_unit(super::sh::J_MAX, u).iter().map(|v| v * w).collect())
            .collect();
        ProjectionGrid {
            points,
            weighted_values,
        }
    })
}

/// Wigner-D of degree l by spherical quadrature, as a (2l+1)×(2l+1) tensor.
pub(crate) fn wigner_from_projection(l: usize, r: &super::Rotation) -> Tensor {
    let grid = projection_grid();
    let d = 2 * l + 1;
    let mut out = Tensor::zeros(&[d, d]);
    for (pt, wv) in grid.points.iter().zip(&grid.weighted_values) {
        let rotated = r.apply(*pt);
        let y_rot = eval_unit(l, rotated);
        for m in 0..d {
            let ym = y_rot[sh_index(l, m as i64 - l as i64)];
            for mp in 0..d {
                let o = out.at(&[m, mp]) + ym * wv[sh_index(l, mp as i64 - l as i64)];
                out.set(&[m, mp], o);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Null-space solve
// ---------------------------------------------------------------------------

fn solve_cg(l_out: usize, l_in: usize, j: usize) -> CGTensor {
    let d_o = 2 * l_out + 1;
    let d_i = 2 * l_in + 1;
    let d_j = 2 * j + 1;
    let n_unknowns = d_o * d_i * d_j;
    let n_samples = 3;

    // deterministic per-key rotation samples
    let seed = 0x5e3_000
        ^ (l_out as u64)
        ^ ((l_in as u64) << 8)
        ^ ((j as u64) << 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut constraint = DMatrix::<f64>::zeros(n_samples * n_unknowns, n_unknowns);
    for s in 0..n_samples {
        let rot = super::Rotation::random(&mut rng);
        let d_lo = wigner_from_projection(l_out, &rot);
        let d_li = wigner_from_projection(l_in, &rot);
        let d_jj = wigner_from_projection(j, &rot);
        // rows: one equation per (a', b', m') of (D_lo ⊗ D_li)·M − M·D_j = 0,
        // unknown layout u[(a·d_i + b)·d_j + m]
        for ap in 0..d_o {
            for bp in 0..d_i {
                for mp in 0..d_j {
                    let eq = ((s * d_o + ap) * d_i + bp) * d_j + mp;
                    for a in 0..d_o {
                        let kla = d_lo.at(&[ap, a]);
                        for b in 0..d_i {
                            let kron = kla * d_li.at(&[bp, b]);
                            let col = (a * d_i + b) * d_j + mp;
                            constraint[(eq, col)] += kron;
                        }
                    }
                    for m in 0..d_j {
                        let col = (ap * d_i + bp) * d_j + m;
                        constraint[(eq, col)] -= d_jj.at(&[m, mp]);
                    }
                }
            }
        }
    }

    let svd = constraint.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let (min_idx, min_sv) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, v)| (i, *v))
        .unwrap();
    let second_sv = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != min_idx)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    assert!(
        min_sv < 1e-8 && second_sv > 1e-4,
        "intertwiner space for ({l_out},{l_in},{j}) not one-dimensional: σ_min={min_sv}, σ_next={second_sv}"
    );

    // M[(a·d_i+b), m]
    let mut m_mat = DMatrix::<f64>::zeros(d_o * d_i, d_j);
    for row in 0..d_o * d_i {
        for col in 0..d_j {
            m_mat[(row, col)] = v_t[(min_idx, row * d_j + col)];
        }
    }

    // exact column orthonormalization: M ← M (MᵀM)^(-1/2)
    let gram = m_mat.transpose() * &m_mat;
    let eig = gram.symmetric_eigen();
    let mut inv_sqrt = DMatrix::<f64>::zeros(d_j, d_j);
    for i in 0..d_j {
        for k in 0..d_j {
            let mut acc = 0.0;
            for e in 0..d_j {
                acc += eig.eigenvectors[(i, e)] * eig.eigenvectors[(k, e)]
                    / eig.eigenvalues[e].sqrt();
            }
            inv_sqrt[(i, k)] = acc;
        }
    }
    let m_mat = m_mat * inv_sqrt;

    // canonical sign: first coefficient above threshold in (m, a, b) order
    let max_abs = m_mat.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut sign = 1.0;
    'scan: for m in 0..d_j {
        for a in 0..d_o {
            for b in 0..d_i {
                let v = m_mat[(a * d_i + b, m)];
                if v.abs() > 1e-6 * max_abs {
                    sign = v.signum();
                    break 'scan;
                }
            }
        }
    }

    let mut coeffs = Tensor::zeros(&[d_j, d_o, d_i]);
    for m in 0..d_j {
        for a in 0..d_o {
            for b in 0..d_i {
                coeffs.set(&[m, a, b], sign * m_mat[(a * d_i + b, m)]);
            }
        }
    }
    CGTensor {
        l_out,
        l_in,
        j,
        coeffs,
    }
}

fn cache() -> &'static Mutex<BTreeMap<(usize, usize, usize), Arc<CGTensor>>> {
    static CACHE: OnceLock<Mutex<BTreeMap<(usize, usize, usize), Arc<CGTensor>>>> =
        OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(BTreeMap::new()))
}

/// Coupling tensor for (l_out, l_in, J), solved on first use and cached.
pub fn clebsch_gordan(l_out: usize, l_in: usize, j: usize) -> Result<Arc<CGTensor>, So3Error> {
    if !triangle_ok(l_out, l_in, j) {
        return Err(So3Error::TriangleViolation { l_out, l_in, j });
    }
    let max = super::sh::J_MAX;
    if j > max {
        return Err(So3Error::DegreeOutOfRange { j, max });
    }
    if l_out > max {
        return Err(So3Error::DegreeOutOfRange { j: l_out, max });
    }
    if l_in > max {
        return Err(So3Error::DegreeOutOfRange { j: l_in, max });
    }
    let mut guard = cache().lock().unwrap();
    let entry = guard
        .entry((l_out, l_in, j))
        .or_insert_with(|| Arc::new(solve_cg(l_out, l_in, j)));
    Ok(entry.clone())
}

/// An explicit collection of coupling tensors, used by the verification
/// suites so they can also be run against a deliberately corrupted copy.
#[derive(Debug, Clone)]
pub struct CgTable {
    entries: Vec<Arc<CGTensor>>,
}

impl CgTable {
    /// All tensors with l_out, l_in ≤ max_l (every valid J).
    pub fn up_to(max_l: usize) -> Result<Self, So3Error> {
        let mut entries = Vec::new();
        for l_out in 0..=max_l {
            for l_in in 0..=max_l {
                for j in l_out.abs_diff(l_in)..=(l_out + l_in).min(super::sh::J_MAX) {
                    entries.push(clebsch_gordan(l_out, l_in, j)?);
                }
            }
        }
        Ok(CgTable { entries })
    }

    pub fn from_entries(entries: Vec<CGTensor>) -> Self {
        CgTable {
            entries: entries.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &CGTensor> {
        self.entries.iter().map(|a| a.as_ref())
    }
}
