//! Problem instances: random initial positions and interaction parameters,
//! plus the JSON-lines dataset format.

use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use std::io::{BufRead, Write};
use thiserror::Error;

pub const A_MIN: f64 = 0.1;
pub const A_MAX: f64 = 1.0;
/// Minimum pairwise distance accepted when sampling initial positions.
pub const D_MIN: f64 = 0.05;

/// Seed-stream tags keeping training and evaluation instances disjoint.
pub const SEED_DOMAIN_TRAIN: u64 = 0x7452_41494e;
pub const SEED_DOMAIN_TEST: u64 = 0x7445_5354;

/// SplitMix64-style mixing of (base seed, domain tag, index) into an
/// instance seed; collisions across domains are astronomically unlikely.
pub fn mix_seed(base: u64, domain: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(domain)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
        .wrapping_add(index);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("could not sample positions with min distance {d_min} in {tries} tries (seed {seed})")]
    RejectionExhausted { d_min: f64, tries: usize, seed: u64 },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset parse at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid instance at line {line}: {msg}")]
    Invalid { line: usize, msg: String },
}

/// One energy-minimization problem: initial coordinates and the symmetric
/// interaction parameters a_ij.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub seed: u64,
    pub positions: Vec<[f64; 3]>,
    /// Symmetric (n, n) with zero diagonal, entries in [A_MIN, A_MAX].
    pub a: Tensor,
}

impl ProblemInstance {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Structural invariants; used on load and in tests.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.n();
        if n < 2 {
            return Err(format!("n = {n} too small"));
        }
        if self.a.shape() != [n, n] {
            return Err(format!("a shape {:?} vs n {n}", self.a.shape()));
        }
        for i in 0..n {
            if self.a.at(&[i, i]) != 0.0 {
                return Err(format!("a[{i},{i}] not zero"));
            }
            for j in i + 1..n {
                let v = self.a.at(&[i, j]);
                if v != self.a.at(&[j, i]) {
                    return Err(format!("a not symmetric at ({i},{j})"));
                }
                if !(A_MIN..=A_MAX).contains(&v) {
                    return Err(format!("a[{i},{j}] = {v} out of range"));
                }
                let d = dist(self.positions[i], self.positions[j]);
                if d < D_MIN {
                    return Err(format!("nodes {i},{j} too close: {d}"));
                }
            }
        }
        Ok(())
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Samples an instance: a_ij ~ U[0.1, 1] symmetrized, positions i.i.d.
/// standard normal with the center of mass removed, rejection-resampled
/// until all pairwise distances are at least [`D_MIN`].
pub fn sample_instance(n: usize, seed: u64) -> Result<ProblemInstance, SampleError> {
    if n < 2 {
        return Err(SampleError::TooFewNodes(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(A_MIN..=A_MAX);
            a.set(&[i, j], v);
            a.set(&[j, i], v);
        }
    }
    for _try in 0..MAX_REJECTIONS {
        let mut positions: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ]
            })
            .collect();
        let mut com = [0.0; 3];
        for p in &positions {
            for k in 0..3 {
                com[k] += p[k] / n as f64;
            }
        }
        for p in &mut positions {
            for k in 0..3 {
                p[k] -= com[k];
            }
        }
        let ok = (0..n).all(|i| (i + 1..n).all(|j| dist(positions[i], positions[j]) >= D_MIN));
        if ok {
            return Ok(ProblemInstance { seed, positions, a });
        }
    }
    Err(SampleError::RejectionExhausted {
        d_min: D_MIN,
        tries: MAX_REJECTIONS,
        seed,
    })
}

// ---------------------------------------------------------------------------
// JSON-lines dataset
//
// One instance per line:
//   {"seed": u64, "n": int, "positions": [[x,y,z],…], "a": [upper-tri row-major]}
// Floats are written with 17 significant digits so values round-trip
// bit-exactly.
// ---------------------------------------------------------------------------

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_jsonl<W: Write>(out: &mut W, instances: &[ProblemInstance]) -> std::io::Result<()> {
    for inst in instances {
        let n = inst.n();
        let mut line = String::new();
        line.push_str(&format!("{{\"seed\": {}, \"n\": {}, \"positions\": [", inst.seed, n));
        for (i, p) in inst.positions.iter().enumerate() {
            if i > 0 {
                line.push_str(", ");
            }
            line.push_str(&format!(
                "[{}, {}, {}]",
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(p[2])
            ));
        }
        line.push_str("], \"a\": [");
        let mut first = true;
        for i in 0..n {
            for j in i + 1..n {
                if !first {
                    line.push_str(", ");
                }
                first = false;
                line.push_str(&fmt_f64(inst.a.at(&[i, j])));
            }
        }
        line.push_str("]}\n");
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct InstanceLine {
    seed: u64,
    n: usize,
    positions: Vec<[f64; 3]>,
    a: Vec<f64>,
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<ProblemInstance>, SampleError> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: InstanceLine =
            serde_json::from_str(&line).map_err(|e| SampleError::Parse {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        let n = parsed.n;
        if parsed.positions.len() != n || parsed.a.len() != n * (n - 1) / 2 {
            return Err(SampleError::Invalid {
                line: lineno + 1,
                msg: format!(
                    "lengths: positions {}, a {} for n {}",
                    parsed.positions.len(),
                    parsed.a.len(),
                    n
                ),
            });
        }
        let mut a = Tensor::zeros(&[n, n]);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                a.set(&[i, j], parsed.a[k]);
                a.set(&[j, i], parsed.a[k]);
                k += 1;
            }
        }
        let inst = ProblemInstance {
            seed: parsed.seed,
            positions: parsed.positions,
            a,
        };
        inst.validate().map_err(|msg| SampleError::Invalid {
            line: lineno + 1,
            msg,
        })?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = sample_instance(10, 42).unwrap();
        let b = sample_instance(10, 42).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        // center of mass removed
        let mut com = [0.0f64; 3];
        for p in &a.positions {
            for k in 0..3 {
                com[k] += p[k];
            }
        }
        assert!(com.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn parameter_mean_matches_uniform() {
        // mean of U[0.1, 1] is 0.55 with per-draw variance 0.9²/12;
        // aggregate over many draws and check 3 sigma.
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..2000u64 {
            let inst = sample_instance(10, 77_000 + seed).unwrap();
            for i in 0..10 {
                for j in i + 1..10 {
                    sum += inst.a.at(&[i, j]);
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        let sigma = (0.9f64 * 0.9 / 12.0).sqrt() / (count as f64).sqrt();
        assert!(
            (mean - 0.55).abs() < 3.0 * sigma,
            "mean {mean} vs 0.55 ± {}",
            3.0 * sigma
        );
    }

    #[test]
    fn too_few_nodes_rejected() {
        assert!(matches!(sample_instance(1, 0), Err(SampleError::TooFewNodes(1))));
    }

    #[test]
    fn jsonl_round_trips_bitwise() {
        let instances: Vec<ProblemInstance> =
            (0..20).map(|s| sample_instance(8, s).unwrap()).collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &instances).unwrap();
        let loaded = read_jsonl(&buf[..]).unwrap();
        assert_eq!(instances, loaded);
        // writing again is byte-identical
        let mut buf2 = Vec::new();
        write_jsonl(&mut buf2, &loaded).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_corrupt_lines() {
        let bad = b"{\"seed\": 1, \"n\": 3, \"positions\": [[0,0,0],[1,0,0],[0,1,0]], \"a\": [0.5, 0.5]}\n";
        assert!(matches!(
            read_jsonl(&bad[..]),
            Err(SampleError::Invalid { .. })
        ));
        let garbage = b"not json\n";
        assert!(matches!(
            read_jsonl(&garbage[..]),
            Err(SampleError::Parse { .. })
        ));
    }
}

