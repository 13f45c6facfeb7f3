//! Direction-dependent equivariant basis matrices.
//!
//! For a relative position x and a degree pair (l_in, l_out), the matrices
//! B_J(x) = Σ_m Y_{J,m}(x/‖x‖) · Q^{l_out,l_in}_{J,m} (J running over the
//! triangle range) span the rotation-equivariant linear maps from type-l_in
//! to type-l_out features: B_J(R·x) = D^{l_out}(R) · B_J(x) · D^{l_in}(R)ᵀ.
//! They depend only on the direction of x.

use super::cg::{clebsch_gordan, triangle_ok};
use super::sh::{eval_unit, sh_index, J_MAX, R_MIN};
use super::So3Error;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

/// Basis matrices for every requested (l_in, l_out) pair on one edge.
/// Values are indexed J-ascending from |l_in − l_out| to l_in + l_out.
pub type EdgeBasis = BTreeMap<(usize, usize), Vec<Tensor>>;

fn unit_of(rel_pos: [f64; 3]) -> Result<[f64; 3], So3Error> {
    let r = (rel_pos[0] * rel_pos[0] + rel_pos[1] * rel_pos[1] + rel_pos[2] * rel_pos[2]).sqrt();
    if r < R_MIN {
        return Err(So3Error::DegenerateGeometry { norm: r, r_min: R_MIN });
    }
    Ok([rel_pos[0] / r, rel_pos[1] / r, rel_pos[2] / r])
}

fn basis_from_values(y: &[f64], l_in: usize, l_out: usize) -> Vec<Tensor> {
    let d_o = 2 * l_out + 1;
    let d_i = 2 * l_in + 1;
    let mut out = Vec::new();
    for j in l_out.abs_diff(l_in)..=(l_out + l_in) {
        let cg = clebsch_gordan(l_out, l_in, j).expect("degrees validated by caller");
        let mut b = Tensor::zeros(&[d_o, d_i]);
        for m in 0..2 * j + 1 {
            let yv = y[sh_index(j, m as i64 - j as i64)];
            for a in 0..d_o {
                for bi in 0..d_i {
                    let v = b.at(&[a, bi]) + yv * cg.coeffs.at(&[m, a, bi]);
                    b.set(&[a, bi], v);
                }
            }
        }
        out.push(b);
    }
    out
}

/// Basis matrices B_J for a single (l_in, l_out) pair.
pub fn pair_basis(rel_pos: [f64; 3], l_in: usize, l_out: usize) -> Result<Vec<Tensor>, So3Error> {
    if l_in + l_out > J_MAX {
        return Err(So3Error::DegreeOutOfRange {
            j: l_in + l_out,
            max: J_MAX,
        });
    }
    debug_assert!(triangle_ok(l_out, l_in, l_in + l_out));
    let u = unit_of(rel_pos)?;
    let y = eval_unit(l_in + l_out, u);
    Ok(basis_from_values(&y, l_in, l_out))
}

/// Basis matrices for several degree pairs, evaluating the harmonics once.
pub fn basis_for_pairs(
    rel_pos: [f64; 3],
    pairs: &[(usize, usize)],
) -> Result<EdgeBasis, So3Error> {
    let mut j_max_needed = 0;
    for &(l_in, l_out) in pairs {
        if l_in + l_out > J_MAX {
            return Err(So3Error::DegreeOutOfRange {
                j: l_in + l_out,
                max: J_MAX,
            });
        }
        j_max_needed = j_max_needed.max(l_in + l_out);
    }
    let u = unit_of(rel_pos)?;
    let y = eval_unit(j_max_needed, u);
    let mut out = EdgeBasis::new();
    for &(l_in, l_out) in pairs {
        out.entry((l_in, l_out))
            .or_insert_with(|| basis_from_values(&y, l_in, l_out));
    }
    Ok(out)
}

/// Per-edge basis matrices for a whole neighborhood structure.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub edges: BTreeMap<(usize, usize), EdgeBasis>,
}

impl BasisSet {
    /// Builds bases for every ordered edge (i, j) in the neighbor lists.
    pub fn build(
        positions: &[[f64; 3]],
        neighborhoods: &[Vec<usize>],
        pairs: &[(usize, usize)],
    ) -> Result<Self, So3Error> {
        let mut edges = BTreeMap::new();
        for (i, neigh) in neighborhoods.iter().enumerate() {
            for &j in neigh {
                let rel = [
                    positions[j][0] - positions[i][0],
                    positions[j][1] - positions[i][1],
                    positions[j][2] - positions[i][2],
                ];
                edges.insert((i, j), basis_for_pairs(rel, pairs)?);
            }
        }
        Ok(BasisSet { edges })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{wigner_d, Rotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn scalar_scalar_basis_is_y00() {
        let b = pair_basis([0.0, 0.0, 1.0], 0, 0).unwrap();
        assert_eq!(b.len(), 1);
        let want = 0.5 / std::f64::consts::PI.sqrt();
        assert!((b[0].item() - want).abs() < 1e-14);
    }

    #[test]
    fn depends_only_on_direction() {
        let x = [0.3, -1.2, 0.5];
        let scaled = [7.0 * x[0], 7.0 * x[1], 7.0 * x[2]];
        for (l_in, l_out) in [(0, 0), (1, 1), (2, 1), (0, 2)] {
            let a = pair_basis(x, l_in, l_out).unwrap();
            let b = pair_basis(scaled, l_in, l_out).unwrap();
            for (ba, bb) in a.iter().zip(&b) {
                for (x, y) in ba.data().iter().zip(bb.data()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn equivariance_under_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let rot = Rotation::random(&mut rng);
            let v: [f64; 3] = [
                rand::Rng::sample(&mut rng, StandardNormal),
                rand::Rng::sample(&mut rng, StandardNormal),
                rand::Rng::sample(&mut rng, StandardNormal),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n < 0.1 {
                continue;
            }
            for (l_in, l_out) in [(0usize, 1usize), (1, 1), (2, 1), (2, 2)] {
                let b_x = pair_basis(v, l_in, l_out).unwrap();
                let b_rx = pair_basis(rot.apply(v), l_in, l_out).unwrap();
                let d_out = wigner_d(l_out, &rot).unwrap().m;
                let d_in = wigner_d(l_in, &rot).unwrap().m;
                for (bj_x, bj_rx) in b_x.iter().zip(&b_rx) {
                    // D_out · B_J(x) · D_inᵀ
                    let tmp = crate::tensor::matmul(&d_out, bj_x);
                    let d_o = 2 * l_out + 1;
                    let d_i = 2 * l_in + 1;
                    let mut want = Tensor::zeros(&[d_o, d_i]);
                    for a in 0..d_o {
                        for b in 0..d_i {
                            let mut acc = 0.0;
                            for c in 0..d_i {
                                acc += tmp.at(&[a, c]) * d_in.at(&[b, c]);
                            }
                            want.set(&[a, b], acc);
                        }
                    }
                    for (x, y) in bj_rx.data().iter().zip(want.data()) {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
        assert!(worst < 1e-9, "basis equivariance error {worst}");
    }

    #[test]
    fn degenerate_rejected() {
        assert!(matches!(
            pair_basis([1e-8, 0.0, 0.0], 1, 1),
            Err(So3Error::DegenerateGeometry { .. })
        ));
    }
}
