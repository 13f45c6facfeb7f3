//! 3x3 proper rotation matrices.

use super::So3Error;
use rand::Rng;
use rand_distr::StandardNormal;

const ORTHO_TOL: f64 = 1e-12;

/// A proper rotation (orthogonal, det = +1), applied as `y = R x` with
/// column-vector convention. Row-major storage `m[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Validates orthogonality and det = +1 to 1e-12.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self, So3Error> {
        let r = Rotation { m };
        let rt = r.transpose();
        let prod = rt.compose(&r);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = prod.m[i][j];
                if (got - want).abs() > ORTHO_TOL {
                    return Err(So3Error::InvalidRotation {
                        reason: format!("RᵀR[{i}][{j}] = {got}, expected {want}"),
                    });
                }
            }
        }
        let det = r.det();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(So3Error::InvalidRotation {
                reason: format!("det = {det}, expected +1"),
            });
        }
        Ok(r)
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        assert!(n > 0.0, "axis must be nonzero");
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Rotation {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    /// Haar-uniform random rotation via a normalized Gaussian quaternion.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut q = [0.0f64; 4];
        loop {
            for v in &mut q {
                *v = rng.sample(StandardNormal);
            }
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 1e-8 {
                for v in &mut q {
                    *v /= n;
                }
                break;
            }
        }
        let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
        Rotation {
            m: [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.m[i][0] * v[0] + self.m[i][1] * v[1] + self.m[i][2] * v[2];
        }
        out
    }

    /// self ∘ other (apply `other` first).
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    m[i][j] += self.m[i][k] * other.m[k][j];
                }
            }
        }
        Rotation { m }
    }

    pub fn transpose(&self) -> Rotation {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.m[j][i];
            }
        }
        Rotation { m }
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_is_deterministic_and_valid() {
        let a = Rotation::random(&mut ChaCha8Rng::seed_from_u64(42));
        let b = Rotation::random(&mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
        assert!(Rotation::from_matrix(*a.matrix()).is_ok());
    }

    #[test]
    fn haar_mean_is_near_zero() {
        // The mean over all nine entries has variance 1/27 per sample
        // (entries are correlated within a rotation), so its Monte-Carlo
        // standard error over N samples is 1/sqrt(27 N). Individual entries
        // have variance 1/3; testing nine of them needs a Bonferroni-wider
        // band, hence 4 sigma there.
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sums = [[0.0f64; 3]; 3];
        for _ in 0..n {
            let r = Rotation::random(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    sums[i][j] += r.matrix()[i][j];
                }
            }
        }
        let aggregate = sums.iter().flatten().sum::<f64>() / (9.0 * n as f64);
        let three_sigma_agg = 3.0 / (27.0 * n as f64).sqrt();
        assert!(
            aggregate.abs() < three_sigma_agg,
            "aggregate mean {aggregate} exceeds 3σ {three_sigma_agg}"
        );
        let four_sigma = 4.0 / (3.0 * n as f64).sqrt();
        for row in &sums {
            for &s in row {
                assert!(
                    (s / n as f64).abs() < four_sigma,
                    "entry mean {} exceeds 4σ {}",
                    s / n as f64,
                    four_sigma
                );
            }
        }
    }

    #[test]
    fn axis_angle_basics() {
        let r = Rotation::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let v = r.apply([1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15 && v[2].abs() < 1e-15);
    }

    #[test]
    fn rejects_non_rotation() {
        let m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        assert!(Rotation::from_matrix(m).is_err());
        // reflection: orthogonal but det = -1
        let refl = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(matches!(
            Rotation::from_matrix(refl),
            Err(So3Error::InvalidRotation { .. })
        ));
    }
}
