//! Double-well pairwise potential and total-energy assembly.
//!
//! With s = r − a − 1, each pair contributes
//!     p(s) = s⁴ − s² + s/10 + P_MIN,
//! which has a global minimum of exactly zero at [`S_STAR`] and a second,
//! higher local minimum at [`S_SECOND_MIN`].

use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

/// Offset making the global minimum of the pair potential exactly zero.
pub const P_MIN: f64 = 0.32191934688155882;

/// Location of the global minimum of s⁴ − s² + s/10.
pub const S_STAR: f64 = -0.73089310318622136;

/// Location of the second (higher) local minimum.
pub const S_SECOND_MIN: f64 = 0.68063927642366839;

/// Location of the local maximum separating the two wells.
pub const S_LOCAL_MAX: f64 = 0.050253826762553029;

/// Pair energy at distance r with interaction parameter a.
pub fn pair_potential(r: f64, a: f64) -> f64 {
    let s = r - a - 1.0;
    s * s * s * s - s * s + 0.1 * s + P_MIN
}

/// dp/dr at distance r: 4s³ − 2s + 0.1.
pub fn pair_force_mag(r: f64, a: f64) -> f64 {
    let s = r - a - 1.0;
    4.0 * s * s * s - 2.0 * s + 0.1
}

/// Sum of pair potentials over unordered pairs i < j.
pub fn total_energy(positions: &[[f64; 3]], a: &Tensor) -> f64 {
    let n = positions.len();
    debug_assert_eq!(a.shape(), &[n, n]);
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(positions[i], positions[j]);
            total += pair_potential(d, a.at(&[i, j]));
        }
    }
    total
}

/// Energy and its position gradient in one pass (used by plain gradient
/// descent; the tape route in [`energy_node`] must agree with this).
pub fn energy_and_forces(positions: &[[f64; 3]], a: &Tensor) -> (f64, Vec<[f64; 3]>) {
    let n = positions.len();
    let mut grad = vec![[0.0; 3]; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let rel = [
                positions[i][0] - positions[j][0],
                positions[i][1] - positions[j][1],
                positions[i][2] - positions[j][2],
            ];
            let r = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
            let aij = a.at(&[i, j]);
            total += pair_potential(r, aij);
            let dp = pair_force_mag(r, aij) / r;
            for k in 0..3 {
                grad[i][k] += dp * rel[k];
                grad[j][k] -= dp * rel[k];
            }
        }
    }
    (total, grad)
}

/// Records the total energy of a positions node (n, 3) on the tape.
pub fn energy_node(tape: &mut Tape, positions: Var, a: &Tensor) -> Var {
    let n = tape.val(positions).shape()[0];
    assert_eq!(tape.val(positions).shape(), &[n, 3]);
    assert_eq!(a.shape(), &[n, n]);
    let mut idx_i = Vec::with_capacity(n * (n - 1) / 2);
    let mut idx_j = Vec::with_capacity(n * (n - 1) / 2);
    let mut shift = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            idx_i.push(i);
            idx_j.push(j);
            shift.push(-(a.at(&[i, j]) + 1.0));
        }
    }
    let xi = tape.gather_rows(positions, &idx_i);
    let xj = tape.gather_rows(positions, &idx_j);
    let rel = tape.sub(xi, xj);
    let r = tape.norm_last(rel, 0.0);
    let shift_c = tape.constant(Tensor::new(vec![shift.len()], shift));
    let s = tape.add(r, shift_c);
    let s4 = tape.powi(s, 4);
    let s2 = tape.powi(s, 2);
    let quartic = tape.sub(s4, s2);
    let linear = tape.affine(s, 0.1, P_MIN);
    let p = tape.add(quartic, linear);
    tape.sum_all(p)
}

/// Per-instance total energies for a batched positions node
/// (batch·n, 3), instances stacked instance-major. Output shape (batch,).
pub fn energy_node_batch(
    tape: &mut Tape,
    positions: Var,
    instances: &[super::ProblemInstance],
) -> Var {
    let batch = instances.len();
    assert!(batch > 0);
    let n = instances[0].n();
    assert_eq!(tape.val(positions).shape(), &[batch * n, 3]);
    let pairs_per = n * (n - 1) / 2;
    let mut idx_i = Vec::with_capacity(batch * pairs_per);
    let mut idx_j = Vec::with_capacity(batch * pairs_per);
    let mut shift = Vec::with_capacity(batch * pairs_per);
    for (bi, inst) in instances.iter().enumerate() {
        assert_eq!(inst.n(), n, "batch mixes instance sizes");
        for i in 0..n {
            for j in i + 1..n {
                idx_i.push(bi * n + i);
                idx_j.push(bi * n + j);
                shift.push(-(inst.a.at(&[i, j]) + 1.0));
            }
        }
    }
    let xi = tape.gather_rows(positions, &idx_i);
    let xj = tape.gather_rows(positions, &idx_j);
    let rel = tape.sub(xi, xj);
    let r = tape.norm_last(rel, 0.0);
    let shift_c = tape.constant(Tensor::new(vec![shift.len()], shift));
    let s = tape.add(r, shift_c);
    let s4 = tape.powi(s, 4);
    let s2 = tape.powi(s, 2);
    let quartic = tape.sub(s4, s2);
    let linear = tape.affine(s, 0.1, P_MIN);
    let p = tape.add(quartic, linear);
    let grouped = tape.reshape(p, &[batch, pairs_per]);
    tape.sum_axis(grouped, 1)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}
