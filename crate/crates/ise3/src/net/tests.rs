//! White-box checks of the layer machinery: closed forms, equivariance of
//! every stage, and attention-weight properties.

use super::fiber::{rotate_fiber, Fiber, FiberTensor, FiberVars};
use super::layers::{
    attention_layer, norm_nonlinearity, radial_net, self_interaction, BlockGeometry, EdgeList,
    KernelInputs,
};
use super::params::{build_layout, LayerLayout};
use super::ModelConfig;
use crate::autodiff::{Tape, Var};
use crate::sim::{sample_instance, ProblemInstance};
use crate::so3::{wigner_d, Rotation};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_blocks: 1,
        layers_per_block: 2,
        hidden: Fiber::new([(0, 2), (1, 2), (2, 1)]).unwrap(),
        heads: 1,
        basis_gradients: true,
        k: None,
        radial_hidden: 4,
    }
}

struct Harness {
    instance: ProblemInstance,
    layer: LayerLayout,
    tensors: Vec<Tensor>,
}

impl Harness {
    /// A hidden→hidden layer (the second layer of the tiny config).
    fn hidden_layer(seed: u64) -> Self {
        let config = tiny_config();
        let (layout, _, tensors) = build_layout(&config, seed);
        Harness {
            instance: sample_instance(5, seed ^ 0xabc).unwrap(),
            layer: layout.blocks[0][1].clone(),
            tensors,
        }
    }

    fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    fn geometry(
        &self,
        tape: &mut Tape,
        positions: &[[f64; 3]],
        k: usize,
    ) -> (BlockGeometry, EdgeList) {
        let neigh = crate::sim::select_neighborhoods(positions, &self.instance.a, k);
        let edges = EdgeList::from_neighborhoods(&neigh);
        let edge_a: Vec<f64> = edges
            .idx_i
            .iter()
            .zip(&edges.idx_j)
            .map(|(&i, &j)| self.instance.a.at(&[i, j]))
            .collect();
        let flat: Vec<f64> = positions.iter().flatten().copied().collect();
        let pos = tape.constant(Tensor::new(vec![positions.len(), 3], flat));
        let pairs: Vec<(usize, usize)> = self
            .layer
            .segments
            .iter()
            .map(|s| (s.l_in, s.l_out))
            .collect();
        let geo = BlockGeometry::build(tape, pos, &edges, &edge_a, &pairs, None);
        (geo, edges)
    }

    fn random_features(&self, tape: &mut Tape, n: usize, seed: u64) -> FiberVars {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parts = BTreeMap::new();
        for (l, c) in self.layer.fiber_in.types() {
            let t = Tensor::from_fn(&[n, c, 2 * l + 1], |_| rng.random_range(-1.0..1.0));
            parts.insert(l, tape.leaf(t));
        }
        FiberVars {
            fiber: self.layer.fiber_in.clone(),
            parts,
        }
    }
}

fn max_diff_fiber(a: &FiberTensor, b: &FiberTensor) -> f64 {
    let mut worst: f64 = 0.0;
    for (l, ta) in &a.parts {
        let tb = &b.parts[l];
        for (x, y) in ta.data().iter().zip(tb.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

fn rotate_positions(positions: &[[f64; 3]], r: &Rotation) -> Vec<[f64; 3]> {
    positions.iter().map(|&p| r.apply(p)).collect()
}

#[test]
fn self_interaction_identity_passes_through() {
    let mut h = Harness::hidden_layer(1);
    for (&_l, &idx) in &h.layer.query {
        let t = &mut h.tensors[idx];
        let c = t.shape()[0];
        let eye = Tensor::from_fn(&[c, c], |i| if i / c == i % c { 1.0 } else { 0.0 });
        *t = eye;
    }
    let mut tape = Tape::new();
    let pv = h.leaves(&mut tape);
    let f = h.random_features(&mut tape, 5, 2);
    let out = self_interaction(&mut tape, &f, &h.layer.query, &pv, &h.layer.fiber_out);
    for (&l, &v) in &out {
        assert_eq!(tape.val(v), tape.val(f.parts[&l]));
    }
}

#[test]
fn self_interaction_commutes_with_rotation() {
    let h = Harness::hidden_layer(3);
    let rot = Rotation::random(&mut ChaCha8Rng::seed_from_u64(4));

    let mut tape = Tape::new();
    let pv = h.leaves(&mut tape);
    let f = h.random_features(&mut tape, 5, 5);
    let out = self_interaction(&mut tape, &f, &h.layer.query, &pv, &h.layer.fiber_out);
    let out_vals = FiberVars {
        fiber: h.layer.fiber_out.clone(),
        parts: out,
    }
    .values(&tape);
    let map_then_rotate = rotate_fiber(&out_vals, &rot);

    let f_vals = f.values(&tape);
    let rotated_in = rotate_fiber(&f_vals, &rot);
    let mut tape2 = Tape::new();
    let pv2 = h.leaves(&mut tape2);
    let mut parts = BTreeMap::new();
    for (l, t) in &rotated_in.parts {
        parts.insert(*l, tape2.leaf(t.clone()));
    }
    let f2 = FiberVars {
        fiber: f_vals.fiber.clone(),
        parts,
    };
    let out2 = self_interaction(&mut tape2, &f2, &h.layer.query, &pv2, &h.layer.fiber_out);
    let rotate_then_map = FiberVars {
        fiber: h.layer.fiber_out.clone(),
        parts: out2,
    }
    .values(&tape2);

    assert!(max_diff_fiber(&map_then_rotate, &rotate_then_map) < 1e-10);
}

#[test]
fn self_interaction_on_scalars_is_plain_linear() {
    let mut tape = Tape::new();
    let w = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]);
    let wv = tape.leaf(w.clone());
    let weights = BTreeMap::from([(0usize, 0usize)]);
    let x = Tensor::from_fn(&[4, 3, 1], |i| i as f64 * 0.3 - 1.0);
    let f = FiberVars {
        fiber: Fiber::scalar(3),
        parts: BTreeMap::from([(0, tape.leaf(x.clone()))]),
    };
    let out = self_interaction(&mut tape, &f, &weights, &[wv], &Fiber::scalar(2));
    let got = tape.val(out[&0]);
    // compare against a dense row-by-row product
    for node in 0..4 {
        for co in 0..2 {
            let mut want = 0.0;
            for ci in 0..3 {
                want += w.at(&[co, ci]) * x.at(&[node, ci, 0]);
            }
            assert!((got.at(&[node, co, 0]) - want).abs() < 1e-14);
        }
    }
}

#[test]
fn radial_net_zero_weights_zero_output_and_invariant_inputs() {
    let mut h = Harness::hidden_layer(6);
    for idx in [
        h.layer.key_radial.w1,
        h.layer.key_radial.b1,
        h.layer.key_radial.w2,
        h.layer.key_radial.b2,
        h.layer.key_radial.w3,
        h.layer.key_radial.b3,
    ] {
        let t = &mut h.tensors[idx];
        *t = Tensor::zeros(t.shape());
    }
    let mut tape = Tape::new();
    let pv = h.leaves(&mut tape);
    let (geo, _) = h.geometry(&mut tape, &h.instance.positions.clone(), 4);
    let coeffs = radial_net(&mut tape, geo.radial_input, &h.layer.key_radial, &pv);
    assert!(tape.val(coeffs).data().iter().all(|&v| v == 0.0));

    // rotating the configuration leaves the radial inputs unchanged
    let rot = Rotation::random(&mut ChaCha8Rng::seed_from_u64(8));
    let mut tape2 = Tape::new();
    let _ = h.leaves(&mut tape2);
    let rotated = rotate_positions(&h.instance.positions, &rot);
    let (geo2, _) = h.geometry(&mut tape2, &rotated, 4);
    let a = tape.val(geo.radial_input);
    let b = tape2.val(geo2.radial_input);
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn kernel_zero_coeffs_give_zero_and_scalar_pair_closed_form() {
    let h = Harness::hidden_layer(9);
    let mut tape = Tape::new();
    let _pv = h.leaves(&mut tape);
    let (geo, edges) = h.geometry(&mut tape, &h.instance.positions.clone(), 4);
    let f = h.random_features(&mut tape, 5, 10);
    let kernel = KernelInputs::build(&mut tape, &f, &geo, &edges, &h.layer);

    let zero = tape.constant(Tensor::zeros(&[edges.len(), h.layer.coeff_count]));
    let out = kernel.apply(&mut tape, zero, &h.layer);
    for (_, &v) in &out {
        assert!(tape.val(v).data().iter().all(|&x| x == 0.0));
    }

    // coefficients 1 only on the (0,0) segment, channel pair (0,0):
    // type-0 output channel 0 must be Y_00 · f_0[j, 0]
    let seg = h
        .layer
        .segments
        .iter()
        .find(|s| s.l_in == 0 && s.l_out == 0)
        .unwrap();
    let mut phi = Tensor::zeros(&[edges.len(), h.layer.coeff_count]);
    for e in 0..edges.len() {
        phi.set(&[e, seg.col_start], 1.0); // J=0, c_out=0, c_in=0
    }
    let phi_c = tape.constant(phi);
    let out = kernel.apply(&mut tape, phi_c, &h.layer);
    let got = tape.val(out[&0]);
    let y00 = 0.5 / std::f64::consts::PI.sqrt();
    let fvals = f.values(&tape);
    for (e, &j) in edges.idx_j.iter().enumerate() {
        let want = y00 * fvals.parts[&0].at(&[j, 0, 0]);
        assert!((got.at(&[e, 0, 0]) - want).abs() < 1e-12);
    }
}

#[test]
fn kernel_apply_is_equivariant() {
    let h = Harness::hidden_layer(12);
    let rot = Rotation::random(&mut ChaCha8Rng::seed_from_u64(13));
    let phi_vals = Tensor::from_fn(&[20, h.layer.coeff_count], |i| ((i * 37) % 11) as f64 * 0.1 - 0.5);

    let run = |positions: &[[f64; 3]], feats: &FiberTensor| -> FiberTensor {
        let mut tape = Tape::new();
        let _pv = h.leaves(&mut tape);
        let (geo, edges) = h.geometry(&mut tape, positions, 4);
        let mut parts = BTreeMap::new();
        for (l, t) in &feats.parts {
            parts.insert(*l, tape.leaf(t.clone()));
        }
        let f = FiberVars {
            fiber: feats.fiber.clone(),
            parts,
        };
        let kernel = KernelInputs::build(&mut tape, &f, &geo, &edges, &h.layer);
        let phi = tape.constant(phi_vals.clone());
        let out = kernel.apply(&mut tape, phi, &h.layer);
        FiberVars {
            fiber: h.layer.fiber_out.clone(),
            parts: out,
        }
        .values(&tape)
    };

    let mut tape0 = Tape::new();
    let feats = {
        let f = h.random_features(&mut tape0, 5, 14);
        f.values(&tape0)
    };
    let plain = run(&h.instance.positions, &feats);
    let rotated = run(
        &rotate_positions(&h.instance.positions, &rot),
        &rotate_fiber(&feats, &rot),
    );
    // neighborhoods are rotation-invariant, so edge order matches
    let want = rotate_fiber(&plain, &rot);
    assert!(max_diff_fiber(&rotated, &want) < 1e-9);
}

#[test]
fn norm_nonlinearity_gates_only_magnitudes() {
    let h = Harness::hidden_layer(15);
    let mut tape = Tape::new();
    let pv = h.leaves(&mut tape);
    let mut x = Tensor::from_fn(&[4, 2, 3], |i| (i as f64 * 0.77).sin());
    // zero out one channel entirely
    for m in 0..3 {
        x.set(&[2, 1, m], 0.0);
    }
    let parts = BTreeMap::from([(1usize, tape.leaf(x.clone()))]);
    let out = norm_nonlinearity(&mut tape, &parts, &h.layer, &pv);
    let y = tape.val(out[&1]);
    // zero vectors stay zero
    for m in 0..3 {
        assert_eq!(y.at(&[2, 1, m]), 0.0);
    }
    // all outputs are parallel to inputs: cross product vanishes
    for node in 0..4 {
        for c in 0..2 {
            let xv = [x.at(&[node, c, 0]), x.at(&[node, c, 1]), x.at(&[node, c, 2])];
            let yv = [y.at(&[node, c, 0]), y.at(&[node, c, 1]), y.at(&[node, c, 2])];
            let cross = [
                xv[1] * yv[2] - xv[2] * yv[1],
                xv[2] * yv[0] - xv[0] * yv[2],
                xv[0] * yv[1] - xv[1] * yv[0],
            ];
            for v in cross {
                assert!(v.abs() < 1e-12);
            }
        }
    }
}

#[test]
fn attention_weights_normalized_and_rotation_invariant() {
    let h = Harness::hidden_layer(16);
    let rot = Rotation::random(&mut ChaCha8Rng::seed_from_u64(17));

    let run = |positions: &[[f64; 3]], feats: &FiberTensor| -> Tensor {
        let mut tape = Tape::new();
        let pv = h.leaves(&mut tape);
        let (geo, edges) = h.geometry(&mut tape, positions, 3);
        let mut parts = BTreeMap::new();
        for (l, t) in &feats.parts {
            parts.insert(*l, tape.leaf(t.clone()));
        }
        let f = FiberVars {
            fiber: feats.fiber.clone(),
            parts,
        };
        let (_, weights) = attention_layer(&mut tape, &f, &geo, &edges, &h.layer, &pv);
        tape.val(weights).clone()
    };

    let mut tape0 = Tape::new();
    let feats = h.random_features(&mut tape0, 5, 18).values(&tape0);
    let w = run(&h.instance.positions, &feats);
    for row in w.data().chunks_exact(3) {
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "weights sum {s}");
    }
    let w_rot = run(
        &rotate_positions(&h.instance.positions, &rot),
        &rotate_fiber(&feats, &rot),
    );
    for (a, b) in w.data().iter().zip(w_rot.data()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn single_neighbor_attention_weight_is_exactly_one() {
    let h = Harness::hidden_layer(19);
    let mut tape = Tape::new();
    let pv = h.leaves(&mut tape);
    let (geo, edges) = h.geometry(&mut tape, &h.instance.positions.clone(), 1);
    let f = h.random_features(&mut tape, 5, 20);
    let (_, weights) = attention_layer(&mut tape, &f, &geo, &edges, &h.layer, &pv);
    assert!(tape.val(weights).data().iter().all(|&w| w == 1.0));
}

#[test]
fn attention_layer_equivariant_and_translation_invariant() {
    let h = Harness::hidden_layer(21);
    let rot = Rotation::random(&mut ChaCha8Rng::seed_from_u64(22));

    let run = |positions: &[[f64; 3]], feats: &FiberTensor| -> FiberTensor {
        let mut tape = Tape::new();
        let pv = h.leaves(&mut tape);
        let (geo, edges) = h.geometry(&mut tape, positions, 4);
        let mut parts = BTreeMap::new();
        for (l, t) in &feats.parts {
            parts.insert(*l, tape.leaf(t.clone()));
        }
        let f = FiberVars {
            fiber: feats.fiber.clone(),
            parts,
        };
        let (out, _) = attention_layer(&mut tape, &f, &geo, &edges, &h.layer, &pv);
        out.values(&tape)
    };

    let mut tape0 = Tape::new();
    let feats = h.random_features(&mut tape0, 5, 23).values(&tape0);
    let plain = run(&h.instance.positions, &feats);

    let rotated = run(
        &rotate_positions(&h.instance.positions, &rot),
        &rotate_fiber(&feats, &rot),
    );
    let want = rotate_fiber(&plain, &rot);
    assert!(
        max_diff_fiber(&rotated, &want) < 1e-8,
        "rotation error {}",
        max_diff_fiber(&rotated, &want)
    );

    let shifted: Vec<[f64; 3]> = h
        .instance
        .positions
        .iter()
        .map(|&p| [p[0] + 3.2, p[1] - 0.7, p[2] + 11.0])
        .collect();
    let translated = run(&shifted, &feats);
    assert!(
        max_diff_fiber(&translated, &plain) < 1e-10,
        "translation error {}",
        max_diff_fiber(&translated, &plain)
    );
}

#[test]
fn attention_layer_is_permutation_equivariant() {
    let h = Harness::hidden_layer(25);
    let n = 5;
    let perm: Vec<usize> = vec![3, 0, 4, 2, 1]; // new -> old

    let mut tape = Tape::new();
    let pv = h.leaves(&mut tape);
    let (geo, edges) = h.geometry(&mut tape, &h.instance.positions.clone(), 3);
    let f = h.random_features(&mut tape, n, 26);
    let (out, _) = attention_layer(&mut tape, &f, &geo, &edges, &h.layer, &pv);
    let base = out.values(&tape);
    let f_vals = f.values(&tape);

    // permuted instance
    let ppos: Vec<[f64; 3]> = perm.iter().map(|&o| h.instance.positions[o]).collect();
    let mut pa = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            pa.set(&[i, j], h.instance.a.at(&[perm[i], perm[j]]));
        }
    }
    let mut h2 = Harness::hidden_layer(25);
    h2.instance.positions = ppos.clone();
    h2.instance.a = pa;
    let mut tape2 = Tape::new();
    let pv2 = h2.leaves(&mut tape2);
    let (geo2, edges2) = h2.geometry(&mut tape2, &ppos, 3);
    let mut parts = BTreeMap::new();
    for (l, t) in &f_vals.parts {
        let c = t.shape()[1];
        let d = t.shape()[2];
        let mut pt = Tensor::zeros(&[n, c, d]);
        for (new_i, &old_i) in perm.iter().enumerate() {
            for ci in 0..c {
                for m in 0..d {
                    pt.set(&[new_i, ci, m], t.at(&[old_i, ci, m]));
                }
            }
        }
        parts.insert(*l, tape2.leaf(pt));
    }
    let f2 = FiberVars {
        fiber: f_vals.fiber.clone(),
        parts,
    };
    let (out2, _) = attention_layer(&mut tape2, &f2, &geo2, &edges2, &h2.layer, &pv2);
    let permuted = out2.values(&tape2);

    let mut worst: f64 = 0.0;
    for (l, t) in &base.parts {
        let p = &permuted.parts[l];
        let c = t.shape()[1];
        let d = t.shape()[2];
        for (new_i, &old_i) in perm.iter().enumerate() {
            for ci in 0..c {
                for m in 0..d {
                    worst = worst.max((p.at(&[new_i, ci, m]) - t.at(&[old_i, ci, m])).abs());
                }
            }
        }
    }
    assert!(worst < 1e-12, "permutation error {worst}");
}
