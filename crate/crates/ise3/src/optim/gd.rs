//! Plain gradient descent on node positions, used both as a baseline and
//! as the optional post-processing refiner.

use crate::sim::energy_and_forces;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdConfig {
    pub step: f64,
    /// Stop once every per-node position update is shorter than this.
    pub update_norm_tol: f64,
    pub max_iters: usize,
    /// If a step would increase the energy, retry with a halved step (for
    /// that step only, up to 20 halvings). Protects against overshooting
    /// the quartic walls; disable for the unguarded baseline behavior.
    pub halving_fallback: bool,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            step: 0.02,
            update_norm_tol: 1e-3,
            max_iters: 100_000,
            halving_fallback: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GdResult {
    pub positions: Vec<[f64; 3]>,
    pub energy: f64,
    pub iterations: usize,
    /// false when max_iters ran out before the update-norm criterion.
    pub converged: bool,
}

/// Descends x ← x − step·∇E until the largest per-node update is below
/// tolerance.
pub fn gd_refine(positions: &[[f64; 3]], a: &Tensor, config: &GdConfig) -> GdResult {
    assert!(config.step > 0.0 && config.update_norm_tol > 0.0);
    let mut x: Vec<[f64; 3]> = positions.to_vec();
    let (mut energy, mut grad) = energy_and_forces(&x, a);
    for iter in 0..config.max_iters {
        let max_update = grad
            .iter()
            .map(|g| config.step * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt())
            .fold(0.0, f64::max);
        if max_update < config.update_norm_tol {
            return GdResult {
                positions: x,
                energy,
                iterations: iter,
                converged: true,
            };
        }
        let mut scale = 1.0;
        let mut halvings = 0;
        loop {
            let candidate: Vec<[f64; 3]> = x
                .iter()
                .zip(&grad)
                .map(|(p, g)| {
                    [
                        p[0] - scale * config.step * g[0],
                        p[1] - scale * config.step * g[1],
                        p[2] - scale * config.step * g[2],
                    ]
                })
                .collect();
            let (e_new, g_new) = energy_and_forces(&candidate, a);
            if !config.halving_fallback || e_new <= energy || halvings >= 20 {
                if config.halving_fallback && e_new > energy && halvings >= 20 {
                    // could not find a descent step; stop where we are
                    return GdResult {
                        positions: x,
                        energy,
                        iterations: iter,
                        converged: false,
                    };
                }
                x = candidate;
                energy = e_new;
                grad = g_new;
                break;
            }
            scale *= 0.5;
            halvings += 1;
        }
    }
    GdResult {
        positions: x,
        energy,
        iterations: config.max_iters,
        converged: false,
    }
}
