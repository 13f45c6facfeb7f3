//! Fibers: the multiplicity structure of equivariant features.

use super::NetError;
use crate::autodiff::{Tape, Var};
use crate::so3::{wigner_d, Rotation};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Channel multiplicities per feature type; a type-l feature occupies
/// 2l+1 components and rotates under the degree-l Wigner-D matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fiber(BTreeMap<usize, usize>);

impl Fiber {
    pub fn new(mults: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, NetError> {
        let map: BTreeMap<usize, usize> = mults.into_iter().collect();
        if map.is_empty() {
            return Err(NetError::Config("fiber has no types".into()));
        }
        for (&l, &c) in &map {
            if c == 0 {
                return Err(NetError::Config(format!("type {l} has zero channels")));
            }
        }
        Ok(Fiber(map))
    }

    /// Single type-0 fiber with the given channel count.
    pub fn scalar(channels: usize) -> Self {
        Fiber::new([(0, channels)]).expect("channels >= 1")
    }

    pub fn mult(&self, l: usize) -> usize {
        self.0.get(&l).copied().unwrap_or(0)
    }

    /// (type, multiplicity) pairs in ascending type order.
    pub fn types(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().map(|(&l, &c)| (l, c))
    }

    pub fn contains(&self, l: usize) -> bool {
        self.0.contains_key(&l)
    }

    pub fn max_type(&self) -> usize {
        *self.0.keys().next_back().unwrap()
    }

    /// Total flattened dimension Σ mult(l)·(2l+1).
    pub fn dim(&self) -> usize {
        self.types().map(|(l, c)| c * (2 * l + 1)).sum()
    }
}

/// Per-type tape handles, each of shape (n_nodes, mult, 2l+1).
#[derive(Debug, Clone)]
pub struct FiberVars {
    pub fiber: Fiber,
    pub parts: BTreeMap<usize, Var>,
}

impl FiberVars {
    /// Extracts the current values from the tape.
    pub fn values(&self, tape: &Tape) -> FiberTensor {
        FiberTensor {
            fiber: self.fiber.clone(),
            parts: self
                .parts
                .iter()
                .map(|(&l, &v)| (l, tape.val(v).clone()))
                .collect(),
        }
    }
}

/// Per-type numeric storage, same layout as [`FiberVars`].
#[derive(Debug, Clone, PartialEq)]
pub struct FiberTensor {
    pub fiber: Fiber,
    pub parts: BTreeMap<usize, Tensor>,
}

/// Rotates every type-l slice by D^l(R) on its last axis.
pub fn rotate_fiber(ft: &FiberTensor, r: &Rotation) -> FiberTensor {
    let mut parts = BTreeMap::new();
    for (&l, t) in &ft.parts {
        let d = wigner_d(l, r).expect("degree within supported range").m;
        let dim = 2 * l + 1;
        let rows = t.len() / dim;
        let mut out = t.clone();
        for row in 0..rows {
            let src = &t.data()[row * dim..(row + 1) * dim];
            let dst = &mut out.data_mut()[row * dim..(row + 1) * dim];
            for (a, slot) in dst.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (b, &v) in src.iter().enumerate() {
                    acc += d.at(&[a, b]) * v;
                }
                *slot = acc;
            }
        }
        parts.insert(l, out);
    }
    FiberTensor {
        fiber: ft.fiber.clone(),
        parts,
    }
}
