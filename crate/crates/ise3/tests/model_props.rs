//! Full-model properties: trajectory behavior, SE(3) equivariance of the
//! whole pipeline, gradient correctness against finite differences, and
//! the geometry-gradient cut mechanics.

use ise3::autodiff::{central_diff_gradient, Tape};
use ise3::net::{
    forward, param_leaves, positions_of, rotate_fiber, CutImpl, Fiber, ForwardOptions,
    ModelConfig, ModelParams,
};
use ise3::sim::{energy_node, sample_instance, total_energy, ProblemInstance};
use ise3::so3::Rotation;
use ise3::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(n_blocks: usize) -> ModelConfig {
    ModelConfig {
        n_blocks,
        layers_per_block: 1,
        hidden: Fiber::new([(0, 1), (1, 1)]).unwrap(),
        heads: 1,
        basis_gradients: true,
        k: Some(2),
        radial_hidden: 4,
    }
}

/// Gives the zero-initialized head random weights so positions move.
fn randomize_head(params: &mut ModelParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = params
        .names()
        .iter()
        .position(|n| n == "head.t1")
        .expect("head parameter present");
    // modest weights: keeps updates in the range a trained model produces,
    // so the quartic potential does not amplify rounding into the test
    let shape = params.tensors()[idx].shape().to_vec();
    params.tensors_mut()[idx] = Tensor::from_fn(&shape, |_| rng.random_range(-0.02..0.02));
}

fn run_forward(params: &ModelParams, inst: &ProblemInstance) -> (Vec<Vec<[f64; 3]>>, ise3::net::FiberTensor, f64) {
    let mut tape = Tape::new();
    let pv = param_leaves(&mut tape, params);
    let out = forward(&mut tape, params, &pv, inst, &ForwardOptions::default()).unwrap();
    let traj: Vec<Vec<[f64; 3]>> = out.positions.iter().map(|&p| positions_of(&tape, p)).collect();
    let feats = out.features.values(&tape);
    let energy = total_energy(traj.last().unwrap(), &inst.a);
    (traj, feats, energy)
}

#[test]
fn zero_head_means_identity_trajectory() {
    let params = ModelParams::init(&tiny_config(3), 1).unwrap();
    let inst = sample_instance(5, 2).unwrap();
    let (traj, _, _) = run_forward(&params, &inst);
    assert_eq!(traj.len(), 4);
    for step in &traj[1..] {
        assert_eq!(step, &traj[0], "zero head must not move positions");
    }
}

#[test]
fn hidden_fiber_dimension_is_constant() {
    let params = ModelParams::init(&ModelConfig::iterative(), 3).unwrap();
    let inst = sample_instance(10, 4).unwrap();
    let (_, feats, _) = run_forward(&params, &inst);
    let total: usize = feats
        .parts
        .iter()
        .map(|(l, t)| {
            assert_eq!(t.shape()[0], 10);
            t.shape()[1] * (2 * l + 1)
        })
        .sum();
    assert_eq!(total, 36, "hidden fiber dim 4·(1+3+5)");
}

#[test]
fn full_pipeline_equivariance() {
    // both presets, several seeds, randomized heads so positions move
    for (preset, label) in [
        (ModelConfig::single_pass(), "single"),
        (ModelConfig::iterative(), "iterative"),
    ] {
        for seed in 0..3u64 {
            let mut params = ModelParams::init(&preset, 100 + seed).unwrap();
            randomize_head(&mut params, 200 + seed);
            let inst = sample_instance(10, 300 + seed).unwrap();
            let (traj, feats, energy) = run_forward(&params, &inst);

            let rot = Rotation::random(&mut ChaCha8Rng::seed_from_u64(400 + seed));
            let shift = [0.8, -2.5, 1.1];
            let mut moved = inst.clone();
            moved.positions = inst
                .positions
                .iter()
                .map(|&p| {
                    let r = rot.apply(p);
                    [r[0] + shift[0], r[1] + shift[1], r[2] + shift[2]]
                })
                .collect();
            let (traj_m, feats_m, energy_m) = run_forward(&params, &moved);

            assert!(
                (energy - energy_m).abs() < 1e-7,
                "{label} seed {seed}: energy {energy} vs {energy_m}"
            );
            // trajectory equivariance: moved run equals R · original
            // (centering removes the translation)
            let mut worst: f64 = 0.0;
            for (step, step_m) in traj.iter().zip(&traj_m) {
                for (p, pm) in step.iter().zip(step_m) {
                    let rp = rot.apply(*p);
                    for k in 0..3 {
                        worst = worst.max((rp[k] - pm[k]).abs());
                    }
                }
            }
            assert!(worst < 1e-7, "{label} seed {seed}: trajectory error {worst}");

            let want = rotate_fiber(&feats, &rot);
            let mut worst_f: f64 = 0.0;
            for (l, t) in &want.parts {
                for (a, b) in t.data().iter().zip(feats_m.parts[l].data()) {
                    worst_f = worst_f.max((a - b).abs());
                }
            }
            assert!(worst_f < 1e-7, "{label} seed {seed}: feature error {worst_f}");
        }
    }
}

#[test]
fn pure_translation_changes_nothing() {
    let mut params = ModelParams::init(&ModelConfig::iterative(), 7).unwrap();
    randomize_head(&mut params, 8);
    let inst = sample_instance(10, 9).unwrap();
    let (traj, feats, _) = run_forward(&params, &inst);
    let mut moved = inst.clone();
    moved.positions = inst
        .positions
        .iter()
        .map(|&p| [p[0] + 100.0, p[1] - 40.0, p[2] + 7.5])
        .collect();
    let (traj_m, feats_m, _) = run_forward(&params, &moved);
    let mut worst: f64 = 0.0;
    for (step, step_m) in traj.iter().zip(&traj_m) {
        for (p, pm) in step.iter().zip(step_m) {
            for k in 0..3 {
                worst = worst.max((p[k] - pm[k]).abs());
            }
        }
    }
    for (l, t) in &feats.parts {
        for (a, b) in t.data().iter().zip(feats_m.parts[l].data()) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-10, "translation sensitivity {worst}");
}

#[test]
fn model_is_permutation_equivariant() {
    let mut params = ModelParams::init(&tiny_config(2), 11).unwrap();
    randomize_head(&mut params, 12);
    let inst = sample_instance(5, 13).unwrap();
    let (traj, _, energy) = run_forward(&params, &inst);

    let perm = [4usize, 2, 0, 3, 1];
    let mut pinst = inst.clone();
    pinst.positions = perm.iter().map(|&o| inst.positions[o]).collect();
    let mut pa = Tensor::zeros(&[5, 5]);
    for i in 0..5 {
        for j in 0..5 {
            pa.set(&[i, j], inst.a.at(&[perm[i], perm[j]]));
        }
    }
    pinst.a = pa;
    let (ptraj, _, penergy) = run_forward(&params, &pinst);

    assert!((energy - penergy).abs() < 1e-10);
    let mut worst: f64 = 0.0;
    for (step, pstep) in traj.iter().zip(&ptraj) {
        for (new_i, &old_i) in perm.iter().enumerate() {
            for k in 0..3 {
                worst = worst.max((pstep[new_i][k] - step[old_i][k]).abs());
            }
        }
    }
    assert!(worst < 1e-10, "permutation error {worst}");
}

#[test]
fn full_model_gradients_match_finite_differences() {
    // 3-block model, tiny fiber, 3 nodes: every parameter tensor against
    // central differences of the energy loss
    let config = tiny_config(3);
    let mut params = ModelParams::init(&config, 21).unwrap();
    randomize_head(&mut params, 22);
    let inst = sample_instance(3, 23).unwrap();

    let mut tape = Tape::new();
    let pv = param_leaves(&mut tape, &params);
    let out = forward(&mut tape, &params, &pv, &inst, &ForwardOptions::default()).unwrap();
    let loss = energy_node(&mut tape, *out.positions.last().unwrap(), &inst.a);
    let grads = tape.backward(loss);

    // Compare the full gradient vector: the largest entries set the scale,
    // so FD roundoff (|loss|·eps/h ≈ 1e-9 absolute) cannot drown out tiny
    // per-tensor gradients.
    let tensors: Vec<Tensor> = params.tensors().to_vec();
    let mut max_diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut worst_name = String::new();
    for which in 0..tensors.len() {
        let analytic = grads.get_or_zeros(pv[which], &tape);
        let mut f = |xs: &[Tensor]| {
            let p = ModelParams::from_vecs(&config, params.names().to_vec(), xs.to_vec());
            let mut t = Tape::new();
            let vs = param_leaves(&mut t, &p);
            let o = forward(&mut t, &p, &vs, &inst, &ForwardOptions::default()).unwrap();
            let e = energy_node(&mut t, *o.positions.last().unwrap(), &inst.a);
            t.val(e).item()
        };
        let fd = central_diff_gradient(&mut f, &tensors, which, 1e-5);
        for (a, b) in analytic.data().iter().zip(fd.data()) {
            scale = scale.max(a.abs()).max(b.abs());
            if (a - b).abs() > max_diff {
                max_diff = (a - b).abs();
                worst_name = params.names()[which].clone();
            }
        }
    }
    let rel = max_diff / scale;
    assert!(
        rel < 1e-5,
        "gradient FD mismatch {rel:.3e} (abs {max_diff:.3e} at {worst_name}, scale {scale:.3e})"
    );
}

#[test]
fn geometry_cut_matches_constant_fold_bitwise() {
    let mut config = tiny_config(3);
    config.basis_gradients = false;
    let mut params = ModelParams::init(&config, 31).unwrap();
    randomize_head(&mut params, 32);
    let inst = sample_instance(4, 33).unwrap();

    let grads_with = |cut: CutImpl| -> Vec<Tensor> {
        let mut tape = Tape::new();
        let pv = param_leaves(&mut tape, &params);
        let out = forward(&mut tape, &params, &pv, &inst, &ForwardOptions { cut }).unwrap();
        let loss = energy_node(&mut tape, *out.positions.last().unwrap(), &inst.a);
        let grads = tape.backward(loss);
        pv.iter().map(|&v| grads.get_or_zeros(v, &tape)).collect()
    };

    let stop = grads_with(CutImpl::StopGradient);
    let folded = grads_with(CutImpl::ConstantFold);
    for (i, (a, b)) in stop.iter().zip(&folded).enumerate() {
        assert_eq!(
            a.data(),
            b.data(),
            "gradients differ at parameter {}",
            params.names()[i]
        );
    }
}

#[test]
fn enabling_basis_gradients_changes_gradients() {
    let mut config = tiny_config(3);
    config.basis_gradients = true;
    let mut params_on = ModelParams::init(&config, 41).unwrap();
    randomize_head(&mut params_on, 42);
    config.basis_gradients = false;
    let params_off =
        ModelParams::from_vecs(&config, params_on.names().to_vec(), params_on.tensors().to_vec());
    let inst = sample_instance(4, 43).unwrap();

    let grads_of = |p: &ModelParams| -> Vec<Tensor> {
        let mut tape = Tape::new();
        let pv = param_leaves(&mut tape, p);
        let out = forward(&mut tape, p, &pv, &inst, &ForwardOptions::default()).unwrap();
        let loss = energy_node(&mut tape, *out.positions.last().unwrap(), &inst.a);
        let grads = tape.backward(loss);
        pv.iter().map(|&v| grads.get_or_zeros(v, &tape)).collect()
    };

    let on = grads_of(&params_on);
    let off = grads_of(&params_off);
    let mut max_gap: f64 = 0.0;
    for (a, b) in on.iter().zip(&off) {
        for (x, y) in a.data().iter().zip(b.data()) {
            max_gap = max_gap.max((x - y).abs());
        }
    }
    assert!(
        max_gap > 1e-8,
        "basis gradients made no difference ({max_gap:.3e})"
    );
}

#[test]
fn degenerate_geometry_is_clamped_and_counted() {
    let params = ModelParams::init(&tiny_config(1), 51).unwrap();
    // hand-built instance with two nearly coincident nodes (bypasses the
    // sampler's min-distance guarantee)
    let mut a = Tensor::zeros(&[3, 3]);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        a.set(&[i, j], 0.5);
        a.set(&[j, i], 0.5);
    }
    let inst = ProblemInstance {
        seed: 0,
        positions: vec![[0.0, 0.0, 0.0], [1e-9, 0.0, 0.0], [1.0, 0.0, 0.0]],
        a,
    };
    let mut tape = Tape::new();
    let pv = param_leaves(&mut tape, &params);
    let out = forward(&mut tape, &params, &pv, &inst, &ForwardOptions::default());
    assert!(out.is_ok());
    assert!(tape.degenerate_clamps() > 0, "clamp counter not incremented");
}
