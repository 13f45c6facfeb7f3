//! Model assembly: blocks with position updates, geometry recomputation
//! between blocks, and the basis-gradient cut.
//!
//! Forward passes run over a whole batch of instances at once as one
//! block-diagonal graph: node rows are instance-major, edge rows follow,
//! and nothing ever mixes instances. On a single core this amortizes the
//! per-op overhead and gives the matmuls useful shapes.

use super::fiber::FiberVars;
use super::layers::{attention_layer, BlockGeometry, EdgeList};
use super::params::ModelParams;
use super::{ModelConfig, NetError};
use crate::autodiff::{Tape, Var};
use crate::sim::{select_neighborhoods, ProblemInstance};
use crate::tensor::Tensor;
use std::collections::BTreeMap;

/// How to cut geometry gradients in blocks >= 2 when basis gradients are
/// disabled. `StopGradient` is the production path; `ConstantFold` rebuilds
/// the same values as constants and exists so tests can assert the two are
/// bitwise identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutImpl {
    StopGradient,
    ConstantFold,
}

#[derive(Debug, Clone)]
pub struct ForwardOptions {
    pub cut: CutImpl,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            cut: CutImpl::StopGradient,
        }
    }
}

/// Positions per stage (length n_blocks + 1, each (batch·n, 3)) and the
/// final hidden features ((batch·n, mult, 2l+1) per type).
pub struct ForwardOutput {
    pub positions: Vec<Var>,
    pub features: FiberVars,
}

/// Creates one leaf per parameter tensor, in parameter order.
pub fn param_leaves(tape: &mut Tape, params: &ModelParams) -> Vec<Var> {
    params
        .tensors()
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect()
}

/// Runs the model on a batch of same-size instances. Positions are
/// centered per instance at the input; relative positions, bases, and
/// neighborhoods are recomputed at every block boundary.
pub fn forward_batch(
    tape: &mut Tape,
    params: &ModelParams,
    pv: &[Var],
    instances: &[ProblemInstance],
    options: &ForwardOptions,
) -> Result<ForwardOutput, NetError> {
    let config = &params.config;
    config.validate()?;
    assert!(!instances.is_empty(), "empty batch");
    let n = instances[0].n();
    for inst in instances {
        if inst.n() != n {
            return Err(NetError::Config(format!(
                "batch mixes instance sizes {} and {}",
                n,
                inst.n()
            )));
        }
    }
    let batch = instances.len();
    let rows = batch * n;
    let k = config.k.unwrap_or(n - 1);
    if k == 0 || k > n - 1 {
        return Err(NetError::Config(format!(
            "neighborhood size {k} invalid for {n} nodes"
        )));
    }
    let layout = params.layout();

    // per-instance center of mass removed once at the input
    let mut flat = Vec::with_capacity(rows * 3);
    for inst in instances {
        let mut com = [0.0f64; 3];
        for p in &inst.positions {
            for (c, v) in com.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        for p in &inst.positions {
            flat.extend_from_slice(&[p[0] - com[0], p[1] - com[1], p[2] - com[2]]);
        }
    }
    let mut x = tape.constant(Tensor::new(vec![rows, 3], flat));

    // constant type-0 input feature
    let c0 = tape.constant(Tensor::from_fn(&[rows, 1, 1], |_| 1.0));
    let mut f = FiberVars {
        fiber: ModelConfig::input_fiber(),
        parts: BTreeMap::from([(0, c0)]),
    };

    let mut positions = vec![x];
    for (b, block_layers) in layout.blocks.iter().enumerate() {
        // per-instance neighborhoods from the current coordinates
        let pos_vals = positions_of(tape, x);
        let mut idx_i = Vec::with_capacity(rows * k);
        let mut idx_j = Vec::with_capacity(rows * k);
        let mut edge_a = Vec::with_capacity(rows * k);
        for (bi, inst) in instances.iter().enumerate() {
            let chunk = &pos_vals[bi * n..(bi + 1) * n];
            let neigh = select_neighborhoods(chunk, &inst.a, k);
            for (i, list) in neigh.iter().enumerate() {
                if list.is_empty() {
                    return Err(NetError::EmptyNeighborhood { node: bi * n + i });
                }
                for &j in list {
                    idx_i.push(bi * n + i);
                    idx_j.push(bi * n + j);
                    edge_a.push(inst.a.at(&[i, j]));
                }
            }
        }
        let edges = EdgeList {
            idx_i,
            idx_j,
            n: rows,
            k,
        };

        // union of pairs needed by the block's layers
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for layer in block_layers {
            for seg in &layer.segments {
                if !pairs.contains(&(seg.l_in, seg.l_out)) {
                    pairs.push((seg.l_in, seg.l_out));
                }
            }
        }
        let cut = if !config.basis_gradients && b >= 1 {
            Some(options.cut)
        } else {
            None
        };
        let geo = BlockGeometry::build(tape, x, &edges, &edge_a, &pairs, cut);

        for layer in block_layers {
            if layer.fiber_in != f.fiber {
                return Err(NetError::FiberMismatch(format!(
                    "block {b}: layer expects {:?}, got {:?}",
                    layer.fiber_in, f.fiber
                )));
            }
            (f, _) = attention_layer(tape, &f, &geo, &edges, layer, pv);
        }

        // shared zero-initialized head: one type-1 channel as the update,
        // converted from harmonic component order (y, z, x) to cartesian
        let f1 = f.parts[&1];
        let c1 = tape.val(f1).shape()[1];
        let fp = tape.permute(f1, &[1, 0, 2]);
        let ff = tape.reshape(fp, &[c1, rows * 3]);
        let d = tape.matmul(pv[layout.head], ff); // (1, rows·3)
        let dx_sh = tape.reshape(d, &[rows, 3]);
        let c = crate::so3::SH1_TO_CARTESIAN;
        let mut c_t = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            for m in 0..3 {
                c_t.set(&[m, i], c[i][m]);
            }
        }
        let basis_change = tape.constant(c_t);
        let dx = tape.matmul(dx_sh, basis_change);
        x = tape.add(x, dx);
        positions.push(x);
    }

    Ok(ForwardOutput {
        positions,
        features: f,
    })
}

/// Single-instance forward pass.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    pv: &[Var],
    instance: &ProblemInstance,
    options: &ForwardOptions,
) -> Result<ForwardOutput, NetError> {
    forward_batch(tape, params, pv, std::slice::from_ref(instance), options)
}

/// Extracts (rows, 3) position values from a tape node.
pub fn positions_of(tape: &Tape, x: Var) -> Vec<[f64; 3]> {
    let v = tape.val(x);
    v.data()
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect()
}
