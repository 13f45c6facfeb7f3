//! Temporary diagnostic: decompose equivariance error by stage.

use ise3::autodiff::Tape;
use ise3::net::{
    forward, param_leaves, positions_of, rotate_fiber, ForwardOptions, ModelConfig, ModelParams,
};
use ise3::sim::{sample_instance, total_energy};
use ise3::so3::Rotation;
use ise3::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
#[ignore]
fn decompose() {
    let preset = ModelConfig::single_pass();
    let mut params = ModelParams::init(&preset, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let idx = params.names().iter().position(|n| n == "head.t1").unwrap();
    let shape = params.tensors()[idx].shape().to_vec();
    params.tensors_mut()[idx] = Tensor::from_fn(&shape, |_| rng.random_range(-0.02..0.02));
    let inst = sample_instance(10, 300).unwrap();

    let run = |inst: &ise3::sim::ProblemInstance| {
        let mut tape = Tape::new();
        let pv = param_leaves(&mut tape, &params);
        let out = forward(&mut tape, &params, &pv, inst, &ForwardOptions::default()).unwrap();
        let traj: Vec<Vec<[f64; 3]>> =
            out.positions.iter().map(|&p| positions_of(&tape, p)).collect();
        (traj, out.features.values(&tape))
    };

    let (traj, feats) = run(&inst);
    let rot = Rotation::random(&mut ChaCha8Rng::seed_from_u64(400));
    let mut moved = inst.clone();
    moved.positions = inst.positions.iter().map(|&p| rot.apply(p)).collect();
    let (traj_m, feats_m) = run(&moved);

    for (b, (s, sm)) in traj.iter().zip(&traj_m).enumerate() {
        let mut worst: f64 = 0.0;
        for (p, pm) in s.iter().zip(sm) {
            let rp = rot.apply(*p);
            for k in 0..3 {
                worst = worst.max((rp[k] - pm[k]).abs());
            }
        }
        println!("stage {b}: position error {worst:.3e}");
    }
    let want = rotate_fiber(&feats, &rot);
    for (l, t) in &want.parts {
        let mut worst: f64 = 0.0;
        let mut mag: f64 = 0.0;
        for (a, b) in t.data().iter().zip(feats_m.parts[l].data()) {
            worst = worst.max((a - b).abs());
            mag = mag.max(a.abs());
        }
        println!("fiber type {l}: error {worst:.3e} magnitude {mag:.3e}");
    }
    for (b, (s, sm)) in traj.iter().zip(&traj_m).enumerate().skip(1) {
        let mut dmax: f64 = 0.0;
        for (p, prev) in s.iter().zip(&traj[b - 1]) {
            for k in 0..3 {
                dmax = dmax.max((p[k] - prev[k]).abs());
            }
        }
        let _ = sm;
        println!("stage {b}: max |dx| {dmax:.3e}");
    }
    let e = total_energy(traj.last().unwrap(), &inst.a);
    let em = total_energy(traj_m.last().unwrap(), &moved.a);
    println!("energy {e} vs {em}: abs {:.3e} rel {:.3e}", (e - em).abs(), (e - em).abs() / e.abs());
}
