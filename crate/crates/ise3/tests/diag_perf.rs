//! Temporary diagnostic: per-example forward+backward cost.

use ise3::autodiff::Tape;
use ise3::net::{forward, param_leaves, ForwardOptions, ModelConfig, ModelParams};
use ise3::sim::{energy_node, sample_instance};
use std::time::Instant;

#[test]
#[ignore]
fn per_example_cost() {
    for (label, config) in [
        ("single fc", ModelConfig::single_pass()),
        ("iter fc", ModelConfig::iterative()),
        ("single k3", { let mut c = ModelConfig::single_pass(); c.k = Some(3); c }),
    ] {
        let params = ModelParams::init(&config, 1).unwrap();
        let insts: Vec<_> = (0..8).map(|s| sample_instance(10, s).unwrap()).collect();
        // warmup
        for inst in &insts[..2] {
            let mut tape = Tape::new();
            let pv = param_leaves(&mut tape, &params);
            let out = forward(&mut tape, &params, &pv, inst, &ForwardOptions::default()).unwrap();
            let loss = energy_node(&mut tape, *out.positions.last().unwrap(), &inst.a);
            let _ = tape.backward(loss);
        }
        let t0 = Instant::now();
        let mut nodes = 0;
        for inst in &insts {
            let mut tape = Tape::new();
            let pv = param_leaves(&mut tape, &params);
            let out = forward(&mut tape, &params, &pv, inst, &ForwardOptions::default()).unwrap();
            let loss = energy_node(&mut tape, *out.positions.last().unwrap(), &inst.a);
            let g = tape.backward(loss);
            let _ = g.get(pv[0]);
            nodes = tape.len();
        }
        let dt = t0.elapsed().as_secs_f64() / insts.len() as f64;
        println!("{label}: {:.2} ms/example ({nodes} tape nodes)", dt * 1e3);
    }
}

#[test]
#[ignore]
fn split_fw_bw() {
    use ise3::tensor::{matmul_nn_acc, Tensor};
    let config = ModelConfig::single_pass();
    let params = ModelParams::init(&config, 1).unwrap();
    let inst = sample_instance(10, 3).unwrap();
    // forward only
    let t0 = Instant::now();
    let reps = 10;
    for _ in 0..reps {
        let mut tape = Tape::new();
        let pv = param_leaves(&mut tape, &params);
        let out = forward(&mut tape, &params, &pv, &inst, &ForwardOptions::default()).unwrap();
        let _ = energy_node(&mut tape, *out.positions.last().unwrap(), &inst.a);
    }
    let fw = t0.elapsed().as_secs_f64() / reps as f64;
    // forward + backward
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let pv = param_leaves(&mut tape, &params);
        let out = forward(&mut tape, &params, &pv, &inst, &ForwardOptions::default()).unwrap();
        let loss = energy_node(&mut tape, *out.positions.last().unwrap(), &inst.a);
        let _ = tape.backward(loss);
    }
    let fwbw = t0.elapsed().as_secs_f64() / reps as f64;
    println!("forward {:.2} ms, backward {:.2} ms", fw * 1e3, (fwbw - fw) * 1e3);

    // param leaf cost alone (250k doubles cloned)
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let _ = param_leaves(&mut tape, &params);
    }
    println!("leaves {:.2} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // raw gemm rate at the radial shape
    let a = Tensor::from_fn(&[90, 32], |i| i as f64 * 1e-4);
    let b = Tensor::from_fn(&[32, 304], |i| i as f64 * 1e-5);
    let mut out = Tensor::zeros(&[90, 304]);
    let t0 = Instant::now();
    let n = 2000;
    for _ in 0..n {
        out.data_mut().fill(0.0);
        matmul_nn_acc(out.data_mut(), a.data(), b.data(), 90, 32, 304);
    }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    let flops = 2.0 * 90.0 * 32.0 * 304.0;
    println!("gemm 90x32x304: {:.1} us = {:.2} GFLOP/s", dt * 1e6, flops / dt / 1e9);
}

#[test]
#[ignore]
fn op_census() {
    // count tape nodes by output size to find allocation hot spots
    let config = ModelConfig::single_pass();
    let params = ModelParams::init(&config, 1).unwrap();
    let inst = sample_instance(10, 3).unwrap();
    let mut tape = Tape::new();
    let pv = param_leaves(&mut tape, &params);
    let out = forward(&mut tape, &params, &pv, &inst, &ForwardOptions::default()).unwrap();
    let _ = energy_node(&mut tape, *out.positions.last().unwrap(), &inst.a);
    println!("nodes {} total elems {}", tape.len(), tape.total_elements());
}

#[test]
#[ignore]
fn batched_cost() {
    use ise3::net::forward_batch;
    use ise3::sim::energy_node_batch;
    for (label, config) in [
        ("single fc", ModelConfig::single_pass()),
        ("iter fc", ModelConfig::iterative()),
    ] {
        let params = ModelParams::init(&config, 1).unwrap();
        let insts: Vec<_> = (0..32).map(|s| sample_instance(10, s).unwrap()).collect();
        // warmup
        {
            let mut tape = Tape::new();
            let pv = param_leaves(&mut tape, &params);
            let out = forward_batch(&mut tape, &params, &pv, &insts, &ForwardOptions::default()).unwrap();
            let e = energy_node_batch(&mut tape, *out.positions.last().unwrap(), &insts);
            let loss = tape.sum_all(e);
            let _ = tape.backward(loss);
        }
        let t0 = Instant::now();
        let reps = 4;
        let mut elems = 0;
        for _ in 0..reps {
            let mut tape = Tape::new();
            let pv = param_leaves(&mut tape, &params);
            let out = forward_batch(&mut tape, &params, &pv, &insts, &ForwardOptions::default()).unwrap();
            let e = energy_node_batch(&mut tape, *out.positions.last().unwrap(), &insts);
            let loss = tape.sum_all(e);
            let _ = tape.backward(loss);
            elems = tape.total_elements();
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64 / insts.len() as f64;
        println!("{label}: {:.2} ms/example batched ({} MB tape)", dt * 1e3, elems * 8 / 1_000_000);
    }
}
