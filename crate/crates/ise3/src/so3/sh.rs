//! Real spherical harmonics up to degree [`J_MAX`], with analytic gradients.
//!
//! Evaluation goes through polynomials in the ambient coordinates so there
//! is no pole singularity: with `u = (x, y, z)` on the unit sphere,
//! `Y_{J,m}(u) = N_{J,m} · q_J^m(z) · {c_m | s_m}(x, y)` where
//! `c_m + i s_m = (x + i y)^m` and `q_J^m` is the associated Legendre
//! polynomial with the `sin^m θ` factor divided out. Gradients of the
//! ambient polynomial are projected onto the sphere tangent and scaled by
//! `1/r` to differentiate `x ↦ Y(x/‖x‖)`.

use super::So3Error;
use crate::tensor::Tensor;
use std::sync::OnceLock;

/// Highest supported degree (2 × the largest feature type used anywhere).
pub const J_MAX: usize = 4;

/// Below this vector norm the direction (hence the basis) is undefined.
pub const R_MIN: f64 = 1e-6;

const UNIT_TOL: f64 = 1e-9;

pub(crate) fn sh_index(j: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= j);
    j * j + (j as i64 + m) as usize
}

const fn tri_index(j: usize, m: usize) -> usize {
    j * (j + 1) / 2 + m
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Full normalization prefactors, including the sqrt(2) for m != 0.
fn norm_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![0.0; (J_MAX + 1) * (J_MAX + 1)];
        for j in 0..=J_MAX {
            for m in -(j as i64)..=(j as i64) {
                let am = m.unsigned_abs() as usize;
                let mut n = ((2 * j + 1) as f64 / (4.0 * std::f64::consts::PI)
                    * factorial(j - am)
                    / factorial(j + am))
                .sqrt();
                if m != 0 {
                    n *= std::f64::consts::SQRT_2;
                }
                t[sh_index(j, m)] = n;
            }
        }
        t
    })
}

/// Scratch holding the recurrence state for one point.
struct Recur {
    c: [f64; J_MAX + 1],
    s: [f64; J_MAX + 1],
    q: [f64; (J_MAX + 1) * (J_MAX + 2) / 2],
}

impl Recur {
    fn compute(u: [f64; 3]) -> Self {
        let (x, y, z) = (u[0], u[1], u[2]);
        let mut c = [0.0; J_MAX + 1];
        let mut s = [0.0; J_MAX + 1];
        c[0] = 1.0;
        for m in 1..=J_MAX {
            c[m] = x * c[m - 1] - y * s[m - 1];
            s[m] = x * s[m - 1] + y * c[m - 1];
        }
        let mut q = [0.0; (J_MAX + 1) * (J_MAX + 2) / 2];
        q[tri_index(0, 0)] = 1.0;
        for m in 0..=J_MAX {
            if m > 0 {
                // (2m-1)!! step of the diagonal
                q[tri_index(m, m)] = q[tri_index(m - 1, m - 1)] * (2 * m - 1) as f64;
            }
            if m + 1 <= J_MAX {
                q[tri_index(m + 1, m)] = (2 * m + 1) as f64 * z * q[tri_index(m, m)];
            }
            for j in m + 2..=J_MAX {
                q[tri_index(j, m)] = ((2 * j - 1) as f64 * z * q[tri_index(j - 1, m)]
                    - (j - 1 + m) as f64 * q[tri_index(j - 2, m)])
                    / (j - m) as f64;
            }
        }
        Recur { c, s, q }
    }

    /// dq/dz for every (j, m), from the differentiated recurrence.
    fn dq(&self) -> [f64; (J_MAX + 1) * (J_MAX + 2) / 2] {
        let mut dq = [0.0; (J_MAX + 1) * (J_MAX + 2) / 2];
        // needs z back; recover from q[1][0] = z
        let z = self.q[tri_index(1, 0)];
        for m in 0..=J_MAX {
            if m + 1 <= J_MAX {
                dq[tri_index(m + 1, m)] = (2 * m + 1) as f64 * self.q[tri_index(m, m)];
            }
            for j in m + 2..=J_MAX {
                dq[tri_index(j, m)] = ((2 * j - 1) as f64
                    * (self.q[tri_index(j - 1, m)] + z * dq[tri_index(j - 1, m)])
                    - (j - 1 + m) as f64 * dq[tri_index(j - 2, m)])
                    / (j - m) as f64;
            }
        }
        dq
    }
}

/// All values Y_{j,m}(u) for j <= j_max at a unit vector, flat over sh_index.
pub(crate) fn eval_unit(j_max: usize, u: [f64; 3]) -> Vec<f64> {
    debug_assert!(j_max <= J_MAX);
    let norms = norm_table();
    let rec = Recur::compute(u);
    let mut out = vec![0.0; (j_max + 1) * (j_max + 1)];
    for j in 0..=j_max {
        out[sh_index(j, 0)] = norms[sh_index(j, 0)] * rec.q[tri_index(j, 0)];
        for m in 1..=j {
            let qv = rec.q[tri_index(j, m)];
            out[sh_index(j, m as i64)] = norms[sh_index(j, m as i64)] * qv * rec.c[m];
            out[sh_index(j, -(m as i64))] = norms[sh_index(j, -(m as i64))] * qv * rec.s[m];
        }
    }
    out
}

/// Ambient-polynomial gradients at a unit vector (not yet projected).
fn eval_unit_poly_grad(j_max: usize, u: [f64; 3]) -> Vec<[f64; 3]> {
    let norms = norm_table();
    let rec = Recur::compute(u);
    let dq = rec.dq();
    let mut out = vec![[0.0; 3]; (j_max + 1) * (j_max + 1)];
    for j in 0..=j_max {
        let k = norms[sh_index(j, 0)];
        out[sh_index(j, 0)] = [0.0, 0.0, k * dq[tri_index(j, 0)]];
        for m in 1..=j {
            let qv = rec.q[tri_index(j, m)];
            let dqv = dq[tri_index(j, m)];
            let mf = m as f64;
            let (cm, sm) = (rec.c[m], rec.s[m]);
            let (cm1, sm1) = (rec.c[m - 1], rec.s[m - 1]);
            let kp = norms[sh_index(j, m as i64)];
            out[sh_index(j, m as i64)] =
                [kp * qv * mf * cm1, -kp * qv * mf * sm1, kp * dqv * cm];
            let kn = norms[sh_index(j, -(m as i64))];
            out[sh_index(j, -(m as i64))] =
                [kn * qv * mf * sm1, kn * qv * mf * cm1, kn * dqv * sm];
        }
    }
    out
}

/// Gradient of `x ↦ Y(x/‖x‖)`: tangent projection of the polynomial
/// gradient, scaled by 1/r.
fn project_grad(poly: [f64; 3], u: [f64; 3], r: f64) -> [f64; 3] {
    let radial = poly[0] * u[0] + poly[1] * u[1] + poly[2] * u[2];
    [
        (poly[0] - radial * u[0]) / r,
        (poly[1] - radial * u[1]) / r,
        (poly[2] - radial * u[2]) / r,
    ]
}

fn check_degree_order(j: usize, m: i64) -> Result<(), So3Error> {
    if j > J_MAX {
        return Err(So3Error::DegreeOutOfRange { j, max: J_MAX });
    }
    if m.unsigned_abs() as usize > j {
        return Err(So3Error::OrderOutOfRange { j, m });
    }
    Ok(())
}

/// Real spherical harmonic Y_{J,m} at a unit direction.
pub fn real_sph_harm(j: usize, m: i64, dir: [f64; 3]) -> Result<f64, So3Error> {
    check_degree_order(j, m)?;
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(So3Error::NonUnitDirection {
            norm,
            tol: UNIT_TOL,
        });
    }
    Ok(eval_unit(j, dir)[sh_index(j, m)])
}

/// Gradient of `x ↦ Y_{J,m}(x/‖x‖)` at a general (non-degenerate) point.
pub fn sph_harm_grad(j: usize, m: i64, x: [f64; 3]) -> Result<[f64; 3], So3Error> {
    check_degree_order(j, m)?;
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if r < R_MIN {
        return Err(So3Error::DegenerateGeometry { norm: r, r_min: R_MIN });
    }
    let u = [x[0] / r, x[1] / r, x[2] / r];
    let poly = eval_unit_poly_grad(j, u)[sh_index(j, m)];
    Ok(project_grad(poly, u, r))
}

/// Values of all degrees up to `j_max` for a batch of unit directions.
/// Output shape: (n, (j_max+1)²), row layout `sh_index`.
pub fn sh_eval_batch(j_max: usize, units: &[[f64; 3]]) -> Tensor {
    assert!(j_max <= J_MAX);
    let w = (j_max + 1) * (j_max + 1);
    let mut data = Vec::with_capacity(units.len() * w);
    for &u in units {
        data.extend_from_slice(&eval_unit(j_max, u));
    }
    Tensor::new(vec![units.len(), w], data)
}

/// Gradients w.r.t. the unnormalized input vectors for a batch.
/// Output shape: (n, (j_max+1)², 3). Rows whose input norm is below
/// [`R_MIN`] get zero gradients (the forward side clamps there too).
pub fn sh_grad_batch(j_max: usize, rels: &[[f64; 3]]) -> Tensor {
    assert!(j_max <= J_MAX);
    let w = (j_max + 1) * (j_max + 1);
    let mut data = vec![0.0; rels.len() * w * 3];
    for (i, &rel) in rels.iter().enumerate() {
        let r = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
        if r < R_MIN {
            continue;
        }
        let u = [rel[0] / r, rel[1] / r, rel[2] / r];
        let polys = eval_unit_poly_grad(j_max, u);
        for (k, poly) in polys.iter().enumerate() {
            let g = project_grad(*poly, u, r);
            let base = (i * w + k) * 3;
            data[base] = g[0];
            data[base + 1] = g[1];
            data[base + 2] = g[2];
        }
    }
    Tensor::new(vec![rels.len(), w, 3], data)
}
