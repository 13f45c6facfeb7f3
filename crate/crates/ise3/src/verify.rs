//! Runtime verification suites behind the `verify` CLI verb, mirroring the
//! crate's property tests: each check reports its worst observed deviation
//! against a fixed tolerance.

use crate::autodiff::{central_diff_gradient, Tape};
use crate::net::{
    forward, param_leaves, rotate_fiber, Fiber, ForwardOptions, ModelConfig, ModelParams,
};
use crate::optim::{gd_refine, GdConfig};
use crate::sim::{sample_instance, total_energy, P_MIN, S_SECOND_MIN, S_STAR};
use crate::so3::{quad, wigner_d, CgTable, Rotation};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_err: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_err.is_finite() && self.max_err < self.tol
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn render(&self) -> String {
        let mut out = format!("suite {}\n", self.suite);
        for c in &self.checks {
            out.push_str(&format!(
                "  [{}] {}: max error {:.3e} (tolerance {:.0e})\n",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.max_err,
                c.tol
            ));
        }
        out.push_str(if self.passed() {
            "  suite PASSED\n"
        } else {
            "  suite FAILED\n"
        });
        out
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Spherical-harmonic orthonormality, Wigner-D composition and degree-1
/// equivalence, coupling-tensor orthonormality, and basis equivariance.
/// The coupling tensors are taken from the given table so a corrupted
/// table is caught.
pub fn so3_suite(cg: &CgTable) -> SuiteReport {
    let mut checks = Vec::new();

    // orthonormality under exact quadrature
    let grid = quad::sphere_quadrature(10, 20);
    let w = (crate::so3::J_MAX + 1) * (crate::so3::J_MAX + 1);
    let mut gram = vec![0.0f64; w * w];
    for &(u, wt) in &grid {
        let mut vals = Vec::with_capacity(w);
        for j in 0..=crate::so3::J_MAX {
            for m in -(j as i64)..=(j as i64) {
                vals.push(crate::so3::real_sph_harm(j, m, u).expect("valid degree"));
            }
        }
        for a in 0..w {
            for b in 0..w {
                gram[a * w + b] += wt * vals[a] * vals[b];
            }
        }
    }
    let mut worst: f64 = 0.0;
    for a in 0..w {
        for b in 0..w {
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((gram[a * w + b] - want).abs());
        }
    }
    checks.push(CheckResult {
        name: "sh orthonormality (quadrature)".into(),
        max_err: worst,
        tol: 1e-6,
    });

    // representation property and degree-1 cartesian equivalence
    let mut rng = ChaCha8Rng::seed_from_u64(0x50_3);
    let mut worst_comp: f64 = 0.0;
    let mut worst_d1: f64 = 0.0;
    for _ in 0..100 {
        let r1 = Rotation::random(&mut rng);
        let r2 = Rotation::random(&mut rng);
        let r12 = r1.compose(&r2);
        for l in 0..=crate::so3::J_MAX {
            let d1 = wigner_d(l, &r1).expect("degree ok").m;
            let d2 = wigner_d(l, &r2).expect("degree ok").m;
            let d12 = wigner_d(l, &r12).expect("degree ok").m;
            let prod = crate::tensor::matmul(&d1, &d2);
            for (x, y) in prod.data().iter().zip(d12.data()) {
                worst_comp = worst_comp.max((x - y).abs());
            }
        }
        let d = wigner_d(1, &r1).expect("degree ok").m;
        let c = crate::so3::SH1_TO_CARTESIAN;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        acc += c[i][p] * d.at(&[p, q]) * c[j][q];
                    }
                }
                worst_d1 = worst_d1.max((acc - r1.matrix()[i][j]).abs());
            }
        }
    }
    checks.push(CheckResult {
        name: "wigner-d composition".into(),
        max_err: worst_comp,
        tol: 1e-9,
    });
    checks.push(CheckResult {
        name: "wigner-d degree-1 cartesian equivalence".into(),
        max_err: worst_d1,
        tol: 1e-9,
    });

    // coupling-tensor row orthonormality per (l_out, l_in), rows stacked
    // over (J, m)
    let mut worst_cg: f64 = 0.0;
    for l_out in 0..=2usize {
        for l_in in 0..=2usize {
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for e in cg.entries().filter(|e| e.l_out == l_out && e.l_in == l_in) {
                let d_o = 2 * e.l_out + 1;
                let d_i = 2 * e.l_in + 1;
                for m in 0..2 * e.j + 1 {
                    let mut row = Vec::with_capacity(d_o * d_i);
                    for a in 0..d_o {
                        for b in 0..d_i {
                            row.push(e.coeffs.at(&[m, a, b]));
                        }
                    }
                    rows.push(row);
                }
            }
            for (p, rp) in rows.iter().enumerate() {
                for (q, rq) in rows.iter().enumerate() {
                    let dot: f64 = rp.iter().zip(rq).map(|(x, y)| x * y).sum();
                    let want = if p == q { 1.0 } else { 0.0 };
                    worst_cg = worst_cg.max((dot - want).abs());
                }
            }
        }
    }
    checks.push(CheckResult {
        name: "coupling-tensor orthonormality".into(),
        max_err: worst_cg,
        tol: 1e-10,
    });

    // basis equivariance B_J(Rx) = D_out B_J(x) D_inᵀ, bases built from
    // the provided table
    let basis_of = |x: [f64; 3], e: &crate::so3::CGTensor| -> Tensor {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let u = [x[0] / r, x[1] / r, x[2] / r];
        let d_o = 2 * e.l_out + 1;
        let d_i = 2 * e.l_in + 1;
        let mut b = Tensor::zeros(&[d_o, d_i]);
        for m in 0..2 * e.j + 1 {
            let y = crate::so3::real_sph_harm(e.j, m as i64 - e.j as i64, u).expect("degree ok");
            for a in 0..d_o {
                for bi in 0..d_i {
                    let v = b.at(&[a, bi]) + y * e.coeffs.at(&[m, a, bi]);
                    b.set(&[a, bi], v);
                }
            }
        }
        b
    };
    let mut worst_basis: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x50_4);
    for _ in 0..100 {
        let rot = Rotation::random(&mut rng);
        let x = random_unit(&mut rng);
        let rx = rot.apply(x);
        for e in cg.entries() {
            if e.l_out > 2 || e.l_in > 2 {
                continue;
            }
            let b_x = basis_of(x, e);
            let b_rx = basis_of(rx, e);
            let d_out = wigner_d(e.l_out, &rot).expect("degree ok").m;
            let d_in = wigner_d(e.l_in, &rot).expect("degree ok").m;
            let tmp = crate::tensor::matmul(&d_out, &b_x);
            let d_o = 2 * e.l_out + 1;
            let d_i = 2 * e.l_in + 1;
            for a in 0..d_o {
                for bi in 0..d_i {
                    let mut acc = 0.0;
                    for c in 0..d_i {
                        acc += tmp.at(&[a, c]) * d_in.at(&[bi, c]);
                    }
                    worst_basis = worst_basis.max((acc - b_rx.at(&[a, bi])).abs());
                }
            }
        }
    }
    checks.push(CheckResult {
        name: "basis equivariance".into(),
        max_err: worst_basis,
        tol: 1e-9,
    });

    SuiteReport {
        suite: "so3".into(),
        checks,
    }
}

fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        n_blocks: 3,
        layers_per_block: 1,
        hidden: Fiber::new([(0, 1), (1, 1)]).unwrap(),
        heads: 1,
        basis_gradients: true,
        k: Some(2),
        radial_hidden: 4,
    }
}

/// Primitive-level and full-model gradients against central differences.
pub fn gradcheck_suite() -> SuiteReport {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6_12ad);

    // a representative composite of every nonlinearity in the model path
    let x = Tensor::from_fn(&[4, 3], |i| 0.3 + 0.17 * (i as f64 * 1.3).sin());
    let w = Tensor::from_fn(&[3, 5], |i| 0.2 * (i as f64 * 0.7).cos());
    let b = Tensor::from_fn(&[5], |i| 0.05 * i as f64 + 0.3);
    let weights = Tensor::from_fn(&[4], |_| rng.random_range(0.2..1.0));
    let inputs = vec![x, w, b];
    let run = |xs: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let xv = t.leaf(xs[0].clone());
        let wv = t.leaf(xs[1].clone());
        let bv = t.leaf(xs[2].clone());
        let h = t.linear(xv, wv, bv, true);
        let sm = t.softmax_last(h);
        let e = t.exp(sm);
        let sg = t.sigmoid(e);
        let p = t.powi(sg, 3);
        let nrm = t.norm_last(p, 1e-8);
        let wv2 = t.constant(Tensor::from_fn(&[4], |i| 0.5 + 0.1 * i as f64));
        let prod = t.mul(nrm, wv2);
        let s = t.sum_all(prod);
        t.val(s).item()
    };
    let mut worst_prim: f64 = 0.0;
    for which in 0..inputs.len() {
        let mut f = |xs: &[Tensor]| run(xs);
        let fd = central_diff_gradient(&mut f, &inputs, which, 1e-5);
        let mut t = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|v| t.leaf(v.clone())).collect();
        let h = t.linear(vars[0], vars[1], vars[2], true);
        let sm = t.softmax_last(h);
        let e = t.exp(sm);
        let sg = t.sigmoid(e);
        let p = t.powi(sg, 3);
        let nrm = t.norm_last(p, 1e-8);
        let wv2 = t.constant(Tensor::from_fn(&[4], |i| 0.5 + 0.1 * i as f64));
        let prod = t.mul(nrm, wv2);
        let s = t.sum_all(prod);
        let grads = t.backward(s);
        let analytic = grads.get_or_zeros(vars[which], &t);
        worst_prim = worst_prim.max(crate::autodiff::max_rel_err(&analytic, &fd));
        let _ = weights;
    }
    checks.push(CheckResult {
        name: "primitive composite fd".into(),
        max_err: worst_prim,
        tol: 1e-6,
    });

    // full 3-block model on 3 nodes: global relative error of the whole
    // gradient vector
    let config = gradcheck_model_config();
    let mut params = ModelParams::init(&config, 21).expect("valid config");
    let head = params
        .names()
        .iter()
        .position(|n| n == "head.t1")
        .expect("head present");
    let shape = params.tensors()[head].shape().to_vec();
    let mut hrng = ChaCha8Rng::seed_from_u64(22);
    params.tensors_mut()[head] = Tensor::from_fn(&shape, |_| hrng.random_range(-0.02..0.02));
    let inst = sample_instance(3, 23).expect("sampling");

    let mut tape = Tape::new();
    let pv = param_leaves(&mut tape, &params);
    let out = forward(&mut tape, &params, &pv, &inst, &ForwardOptions::default()).expect("forward");
    let loss = crate::sim::energy_node(&mut tape, *out.positions.last().unwrap(), &inst.a);
    let grads = tape.backward(loss);
    let tensors: Vec<Tensor> = params.tensors().to_vec();
    let mut max_diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for which in 0..tensors.len() {
        let analytic = grads.get_or_zeros(pv[which], &tape);
        let mut f = |xs: &[Tensor]| {
            let p = ModelParams::from_vecs(&config, params.names().to_vec(), xs.to_vec());
            let mut t = Tape::new();
            let vs = param_leaves(&mut t, &p);
            let o = forward(&mut t, &p, &vs, &inst, &ForwardOptions::default()).expect("forward");
            let e = crate::sim::energy_node(&mut t, *o.positions.last().unwrap(), &inst.a);
            t.val(e).item()
        };
        let fd = central_diff_gradient(&mut f, &tensors, which, 1e-5);
        for (a, b) in analytic.data().iter().zip(fd.data()) {
            scale = scale.max(a.abs()).max(b.abs());
            max_diff = max_diff.max((a - b).abs());
        }
    }
    checks.push(CheckResult {
        name: "full 3-block model fd".into(),
        max_err: max_diff / scale,
        tol: 1e-5,
    });

    SuiteReport {
        suite: "gradcheck".into(),
        checks,
    }
}

/// Rotation equivariance and translation invariance of full forward
/// passes, both presets, over `seeds` random instances each.
pub fn equivariance_suite(seeds: u64) -> SuiteReport {
    let mut worst_rot: f64 = 0.0;
    let mut worst_trans: f64 = 0.0;
    for (preset, tag) in [(ModelConfig::single_pass(), 0u64), (ModelConfig::iterative(), 1)] {
        for seed in 0..seeds {
            let mut params = ModelParams::init(&preset, 1000 + tag * 100 + seed).expect("init");
            let head = params
                .names()
                .iter()
                .position(|n| n == "head.t1")
                .expect("head present");
            let shape = params.tensors()[head].shape().to_vec();
            let mut hrng = ChaCha8Rng::seed_from_u64(2000 + seed);
            params.tensors_mut()[head] =
                Tensor::from_fn(&shape, |_| hrng.random_range(-0.02..0.02));
            let inst = sample_instance(10, 3000 + seed).expect("sampling");

            let run = |inst: &crate::sim::ProblemInstance| {
                let mut tape = Tape::new();
                let pv = param_leaves(&mut tape, &params);
                let out =
                    forward(&mut tape, &params, &pv, inst, &ForwardOptions::default()).expect("forward");
                let traj: Vec<Vec<[f64; 3]>> = out
                    .positions
                    .iter()
                    .map(|&p| crate::net::positions_of(&tape, p))
                    .collect();
                (traj, out.features.values(&tape))
            };
            let (traj, feats) = run(&inst);

            let rot = Rotation::random(&mut ChaCha8Rng::seed_from_u64(4000 + seed));
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
            let (traj_m, feats_m) = run(&moved);
            for (s, sm) in traj.iter().zip(&traj_m) {
                for (p, pm) in s.iter().zip(sm) {
                    let rp = rot.apply(*p);
                    for k in 0..3 {
                        worst_rot = worst_rot.max((rp[k] - pm[k]).abs());
                    }
                }
            }
            let want = rotate_fiber(&feats, &rot);
            for (l, t) in &want.parts {
                for (a, b) in t.data().iter().zip(feats_m.parts[l].data()) {
                    worst_rot = worst_rot.max((a - b).abs());
                }
            }

            let mut shifted = inst.clone();
            shifted.positions = inst
                .positions
                .iter()
                .map(|&p| [p[0] + 42.0, p[1] - 13.0, p[2] + 5.5])
                .collect();
            let (traj_t, feats_t) = run(&shifted);
            for (s, st) in traj.iter().zip(&traj_t) {
                for (p, pt) in s.iter().zip(st) {
                    for k in 0..3 {
                        worst_trans = worst_trans.max((p[k] - pt[k]).abs());
                    }
                }
            }
            for (l, t) in &feats.parts {
                for (a, b) in t.data().iter().zip(feats_t.parts[l].data()) {
                    worst_trans = worst_trans.max((a - b).abs());
                }
            }
        }
    }
    SuiteReport {
        suite: "equivariance".into(),
        checks: vec![
            CheckResult {
                name: "rotation equivariance (positions and fibers)".into(),
                max_err: worst_rot,
                tol: 1e-7,
            },
            CheckResult {
                name: "translation invariance".into(),
                max_err: worst_trans,
                tol: 1e-10,
            },
        ],
    }
}

/// Double-well facts against an independent root-finding oracle, force
/// consistency, and the two-particle descent test.
pub fn potential_suite() -> SuiteReport {
    let mut checks = Vec::new();

    // closed-form roots of 4s³ − 2s + 0.1 (depressed cubic)
    let p: f64 = -0.5;
    let q: f64 = 0.025;
    let mcoef = 2.0 * (-p / 3.0).sqrt();
    let phi = (3.0 * q / (p * mcoef)).acos() / 3.0;
    let mut roots: Vec<f64> = (0..3)
        .map(|k| mcoef * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
        .collect();
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let g = |s: f64| s.powi(4) - s * s + 0.1 * s;

    checks.push(CheckResult {
        name: "p_min matches root oracle (vs 0.32190 ± 1e-4)".into(),
        max_err: (P_MIN - 0.32190).abs().max((P_MIN + g(roots[0])).abs()),
        tol: 1e-4,
    });
    checks.push(CheckResult {
        name: "global well location (vs -0.73091 ± 1e-4)".into(),
        max_err: (S_STAR + 0.73091).abs().max((S_STAR - roots[0]).abs()),
        tol: 1e-4,
    });
    checks.push(CheckResult {
        name: "pair potential is zero at the global well".into(),
        max_err: crate::sim::pair_potential(0.5 + 1.0 + S_STAR, 0.5).abs(),
        tol: 1e-6,
    });
    checks.push(CheckResult {
        name: "second minimum value (vs 0.14133 ± 1e-3)".into(),
        max_err: (crate::sim::pair_potential(0.5 + 1.0 + S_SECOND_MIN, 0.5) - 0.14133)
            .abs()
            .max((S_SECOND_MIN - roots[2]).abs()),
        tol: 1e-3,
    });

    // force against finite differences of the pair energy
    let mut worst_force: f64 = 0.0;
    let h = 1e-6;
    for (r, a) in [(0.6, 0.2), (1.2, 0.5), (2.2, 0.9), (3.0, 0.4)] {
        let fd = (crate::sim::pair_potential(r + h, a) - crate::sim::pair_potential(r - h, a))
            / (2.0 * h);
        let an = crate::sim::pair_force_mag(r, a);
        worst_force = worst_force.max((fd - an).abs() / an.abs().max(1e-3));
    }
    checks.push(CheckResult {
        name: "dp/dr matches finite differences".into(),
        max_err: worst_force,
        tol: 1e-8,
    });

    // two-particle descent into the global well
    let mut a = Tensor::zeros(&[2, 2]);
    a.set(&[0, 1], 0.5);
    a.set(&[1, 0], 0.5);
    let start = vec![[0.0f64; 3], [1.5, 0.0, 0.0]];
    let res = gd_refine(
        &start,
        &a,
        &GdConfig {
            update_norm_tol: 1e-5,
            ..GdConfig::default()
        },
    );
    let d = {
        let dx = [
            res.positions[0][0] - res.positions[1][0],
            res.positions[0][1] - res.positions[1][1],
            res.positions[0][2] - res.positions[1][2],
        ];
        (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt()
    };
    checks.push(CheckResult {
        name: "two-particle descent reaches the global well distance".into(),
        max_err: (d - (0.5 + 1.0 + S_STAR)).abs(),
        tol: 1e-3,
    });
    checks.push(CheckResult {
        name: "two-particle descent energy".into(),
        max_err: res.energy.abs(),
        tol: 1e-5,
    });

    // rigid-motion invariance of the total energy
    let inst = sample_instance(8, 77).expect("sampling");
    let e0 = total_energy(&inst.positions, &inst.a);
    let rot = Rotation::random(&mut ChaCha8Rng::seed_from_u64(78));
    let moved: Vec<[f64; 3]> = inst
        .positions
        .iter()
        .map(|&pt| {
            let r = rot.apply(pt);
            [r[0] + 3.0, r[1] - 1.0, r[2] + 0.25]
        })
        .collect();
    checks.push(CheckResult {
        name: "energy invariance under rigid motion".into(),
        max_err: (total_energy(&moved, &inst.a) - e0).abs(),
        tol: 1e-10,
    });

    SuiteReport {
        suite: "potential".into(),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::CGTensor;

    #[test]
    fn all_suites_pass() {
        let cg = CgTable::up_to(2).unwrap();
        for report in [
            so3_suite(&cg),
            potential_suite(),
            equivariance_suite(2),
        ] {
            assert!(report.passed(), "{}", report.render());
        }
    }

    #[test]
    fn corrupted_coupling_tensor_is_caught() {
        let cg = CgTable::up_to(2).unwrap();
        let mut entries: Vec<CGTensor> = cg.entries().cloned().collect();
        // flip the sign of one coefficient in a (1,1,2) tensor
        let victim = entries
            .iter_mut()
            .find(|e| e.l_out == 1 && e.l_in == 1 && e.j == 2)
            .unwrap();
        let flat = victim
            .coeffs
            .data()
            .iter()
            .position(|v| v.abs() > 0.1)
            .unwrap();
        let shape = victim.coeffs.shape().to_vec();
        let mut data = victim.coeffs.data().to_vec();
        data[flat] = -data[flat];
        victim.coeffs = Tensor::new(shape, data);
        let tampered = CgTable::from_entries(entries);
        let report = so3_suite(&tampered);
        assert!(!report.passed(), "tampered table must fail the suite");
    }
}
