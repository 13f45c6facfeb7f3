//! Parameter storage, deterministic initialization, and the index layout
//! used by the forward pass and the checkpoint format.

use super::{Fiber, ModelConfig, NetError};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// One (l_in, l_out) column block of a radial network output.
#[derive(Debug, Clone)]
pub(crate) struct CoeffSegment {
    pub l_in: usize,
    pub l_out: usize,
    pub col_start: usize,
    pub n_j: usize,
    pub c_out: usize,
    pub c_in: usize,
}

impl CoeffSegment {
    pub fn width(&self) -> usize {
        self.n_j * self.c_out * self.c_in
    }
}

/// Column layout of radial coefficients for a layer's fiber pair
/// structure: segments ordered (l_in asc, l_out asc); within a segment
/// columns run [J asc][c_out][c_in].
pub(crate) fn coeff_segments(fiber_in: &Fiber, fiber_out: &Fiber) -> (Vec<CoeffSegment>, usize) {
    let mut segments = Vec::new();
    let mut col = 0;
    for (l_in, c_in) in fiber_in.types() {
        for (l_out, c_out) in fiber_out.types() {
            let n_j = (l_in + l_out) - l_in.abs_diff(l_out) + 1;
            let seg = CoeffSegment {
                l_in,
                l_out,
                col_start: col,
                n_j,
                c_out,
                c_in,
            };
            col += seg.width();
            segments.push(seg);
        }
    }
    (segments, col)
}

#[derive(Debug, Clone)]
pub(crate) struct RadialIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerLayout {
    pub fiber_in: Fiber,
    pub fiber_out: Fiber,
    /// type -> weight index for the query map (types present in both fibers)
    pub query: BTreeMap<usize, usize>,
    /// type -> weight index for the self-interaction skip
    pub skip: BTreeMap<usize, usize>,
    pub key_radial: RadialIdx,
    pub value_radial: RadialIdx,
    pub segments: Vec<CoeffSegment>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub coeff_count: usize,
    /// type > 0 -> (scale idx, bias idx) for the norm gate
    pub nonlin: BTreeMap<usize, (usize, usize)>,
}

#[derive(Debug, Clone)]
pub(crate) struct ModelLayout {
    pub blocks: Vec<Vec<LayerLayout>>,
    /// Shared position-update head: type-1 channel mixer (1, mult_1),
    /// zero-initialized so every block starts as the identity update.
    pub head: usize,
}

/// Named parameter tensors in a fixed deterministic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

struct Builder {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl Builder {
    /// Scaled-uniform init: U(-g, g) with gain g = 1/sqrt(fan_in).
    fn weight(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> usize {
        let g = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::from_fn(&[rows, cols], |_| self.rng.random_range(-g..g));
        self.push(name, t)
    }

    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }
}

fn radial(b: &mut Builder, prefix: &str, hidden: usize, coeffs: usize) -> RadialIdx {
    RadialIdx {
        w1: b.weight(format!("{prefix}.w1"), 2, hidden, 2),
        b1: b.push(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
        w2: b.weight(format!("{prefix}.w2"), hidden, hidden, hidden),
        b2: b.push(format!("{prefix}.b2"), Tensor::zeros(&[hidden])),
        w3: b.weight(format!("{prefix}.w3"), hidden, coeffs, hidden),
        b3: b.push(format!("{prefix}.b3"), Tensor::zeros(&[coeffs])),
    }
}

fn self_interaction(
    b: &mut Builder,
    prefix: &str,
    fiber_in: &Fiber,
    fiber_out: &Fiber,
) -> BTreeMap<usize, usize> {
    let mut map = BTreeMap::new();
    for (l, c_in) in fiber_in.types() {
        if fiber_out.contains(l) {
            let c_out = fiber_out.mult(l);
            map.insert(l, b.weight(format!("{prefix}.t{l}"), c_out, c_in, c_in));
        }
    }
    map
}

pub(crate) fn build_layout(config: &ModelConfig, seed: u64) -> (ModelLayout, Vec<String>, Vec<Tensor>) {
    let mut b = Builder {
        names: Vec::new(),
        tensors: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let hidden = config.hidden.clone();
    let mut blocks = Vec::new();
    for block in 0..config.n_blocks {
        let mut layers = Vec::new();
        for layer in 0..config.layers_per_block {
            let fiber_in = if block == 0 && layer == 0 {
                ModelConfig::input_fiber()
            } else {
                hidden.clone()
            };
            let fiber_out = hidden.clone();
            let p = format!("block{block}.layer{layer}");
            let query = self_interaction(&mut b, &format!("{p}.query"), &fiber_in, &fiber_out);
            let skip = self_interaction(&mut b, &format!("{p}.skip"), &fiber_in, &fiber_out);
            let (segments, coeff_count) = coeff_segments(&fiber_in, &fiber_out);
            let key_radial = radial(&mut b, &format!("{p}.key_radial"), config.radial_hidden, coeff_count);
            let value_radial = radial(
                &mut b,
                &format!("{p}.value_radial"),
                config.radial_hidden,
                coeff_count,
            );
            let mut nonlin = BTreeMap::new();
            for (l, c) in fiber_out.types() {
                if l > 0 {
                    let s = b.push(
                        format!("{p}.nonlin.t{l}.scale"),
                        Tensor::from_fn(&[c], |_| 1.0),
                    );
                    // bias 2 opens the gate (sigmoid ≈ 0.88) so signals
                    // survive a 12-layer stack at initialization
                    let bias = b.push(
                        format!("{p}.nonlin.t{l}.bias"),
                        Tensor::from_fn(&[c], |_| 2.0),
                    );
                    nonlin.insert(l, (s, bias));
                }
            }
            layers.push(LayerLayout {
                fiber_in,
                fiber_out,
                query,
                skip,
                key_radial,
                value_radial,
                segments,
                coeff_count,
                nonlin,
            });
        }
        blocks.push(layers);
    }
    let head = b.push(
        "head.t1".to_string(),
        Tensor::zeros(&[1, hidden.mult(1)]),
    );
    (ModelLayout { blocks, head }, b.names, b.tensors)
}

impl ModelParams {
    /// Deterministic initialization from a seed. The position-update head
    /// starts at zero so the untrained model is the identity map.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let (_, names, tensors) = build_layout(config, seed);
        Ok(ModelParams {
            config: config.clone(),
            names,
            tensors,
        })
    }

    pub(crate) fn layout(&self) -> ModelLayout {
        build_layout(&self.config, 0).0
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Replaces all tensors (shapes must match), used by the optimizer and
    /// checkpoint loader.
    pub(crate) fn from_parts(
        config: ModelConfig,
        names: Vec<String>,
        tensors: Vec<Tensor>,
    ) -> Self {
        ModelParams {
            config,
            names,
            tensors,
        }
    }

    /// Builds params from explicit tensors; names and shapes must match
    /// the layout the config implies.
    pub fn from_vecs(config: &ModelConfig, names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        let (_, want_names, want_tensors) = build_layout(config, 0);
        assert_eq!(names, want_names, "parameter names do not match layout");
        assert_eq!(tensors.len(), want_tensors.len());
        for (t, w) in tensors.iter().zip(&want_tensors) {
            assert_eq!(t.shape(), w.shape(), "parameter shape mismatch");
        }
        ModelParams {
            config: config.clone(),
            names,
            tensors,
        }
    }
}
