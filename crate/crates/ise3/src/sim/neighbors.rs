//! Interaction-strength neighborhood selection.
//!
//! Each node attends to the K nodes with which it currently interacts most
//! strongly, measured by |dp/dr| at the present distance. Ties break toward
//! the smaller index for reproducibility.

use super::potential::pair_force_mag;
use crate::tensor::Tensor;

/// Node positions, interaction parameters, and per-node neighbor lists.
#[derive(Debug, Clone)]
pub struct PointGraph {
    pub positions: Vec<[f64; 3]>,
    pub a: Tensor,
    pub neighborhoods: Vec<Vec<usize>>,
}

impl PointGraph {
    /// Builds the graph for a neighborhood size; `k = None` means fully
    /// connected (K = n − 1).
    pub fn build(positions: Vec<[f64; 3]>, a: Tensor, k: Option<usize>) -> Self {
        let n = positions.len();
        let k = k.unwrap_or(n - 1);
        let neighborhoods = select_neighborhoods(&positions, &a, k);
        PointGraph {
            positions,
            a,
            neighborhoods,
        }
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }
}

/// For each node, the K other nodes maximizing |dp/dr| at the current
/// distance, strongest first; ties broken by smaller node index.
pub fn select_neighborhoods(positions: &[[f64; 3]], a: &Tensor, k: usize) -> Vec<Vec<usize>> {
    let n = positions.len();
    assert!(
        (1..n).contains(&k),
        "neighborhood size {k} out of 1..={}",
        n - 1
    );
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut scored: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = dist(positions[i], positions[j]);
                (pair_force_mag(d, a.at(&[i, j])).abs(), j)
            })
            .collect();
        scored.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .unwrap()
                .then_with(|| x.1.cmp(&y.1))
        });
        out.push(scored.into_iter().take(k).map(|(_, j)| j).collect());
    }
    out
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}
