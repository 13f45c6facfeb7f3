//! Sphere quadrature: Gauss-Legendre in cos θ × uniform in φ.
//!
//! A grid with `n_theta` Gauss nodes integrates polynomials in cos θ up to
//! degree 2·n_theta − 1 exactly, and `n_phi` uniform azimuthal points handle
//! harmonics up to order n_phi − 1. For products of spherical harmonics up
//! to degree 4 a (10, 20) grid is already exact to rounding.

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-based initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((x, w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Quadrature points (unit vectors) and weights summing to 4π.
pub fn sphere_quadrature(n_theta: usize, n_phi: usize) -> Vec<([f64; 3], f64)> {
    let gl = gauss_legendre(n_theta);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for &(z, wz) in &gl {
        let rho = (1.0 - z * z).sqrt();
        for k in 0..n_phi {
            let phi = dphi * k as f64;
            out.push(([rho * phi.cos(), rho * phi.sin(), z], wz * dphi));
        }
    }
    out
}
