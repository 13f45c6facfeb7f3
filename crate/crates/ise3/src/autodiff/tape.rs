use crate::so3::{sh_eval_batch, sh_grad_batch, R_MIN};
use crate::tensor::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, strides_of, Tensor};

/// Handle to a recorded tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
#[allow(dead_code)] // constants kept on variants for debugging
enum Op {
    /// Differentiable input (parameters, positions).
    Leaf,
    /// Recorded value with no gradient.
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// k·x + b with scalar constants.
    Affine(Var, f64, f64),
    /// x (..., c) + b (c), broadcast over leading axes.
    AddBias(Var, Var),
    /// x (..., c) ∘ s (c), broadcast over leading axes.
    MulLast(Var, Var),
    /// x ∘ w where w's shape is a prefix of x's shape.
    PrefixScale(Var, Var),
    Matmul(Var, Var),
    /// Batched matmul over the leading axis of two rank-3 tensors.
    Bmm(Var, Var),
    /// Fused x·w + b with optional relu: one node per dense layer.
    Linear {
        x: Var,
        w: Var,
        b: Var,
        relu: bool,
    },
    /// Contraction of a column block of per-row coefficients against a
    /// prepared stack: out[e, co, o] = Σ_{j, ci} phi[e, col(j, co, ci)] ·
    /// u[e, j·c_in + ci, o], with col(j, co, ci) = col_start +
    /// (j·c_out + co)·c_in + ci.
    SegmentContract {
        phi: Var,
        u: Var,
        col_start: usize,
        n_j: usize,
        c_out: usize,
        c_in: usize,
    },
    /// Stacked basis-feature contraction, one node for a whole (l_in,
    /// l_out) pair: given per-J bases B_j (e, d_o, d_i) and features
    /// f (e, d_i, c), out[e, j·c + ci, o] = Σ_b B_j[e, o, b] · f[e, b, ci].
    BasisStack { bases: Vec<Var>, f: Var },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Stack(Vec<Var>, usize),
    Slice(Var, usize, usize, usize),
    SumAll(Var),
    SumAxis(Var, usize),
    Powi(Var, i32),
    /// sqrt(Σ_last x² + eps), removing the last axis.
    NormLast(Var, f64),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxLast(Var),
    /// Row gather along axis 0 with constant indices.
    GatherRows(Var, Vec<usize>),
    /// All real spherical harmonics up to j_max of per-row directions:
    /// (n, 3) -> (n, (j_max+1)²). Rows with norm < R_MIN are clamped to the
    /// +z direction and counted.
    SphAll(Var, usize),
    StopGradient(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a differentiable computation.
pub struct Tape {
    nodes: Vec<Node>,
    checked: bool,
    degenerate_clamps: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: false,
            degenerate_clamps: 0,
        }
    }

    /// Checked tapes trap non-finite values at node creation.
    pub fn checked() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: true,
            degenerate_clamps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Total stored forward elements; a proxy for tape memory.
    pub fn total_elements(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of spherical-harmonic rows clamped for degenerate geometry.
    pub fn degenerate_clamps(&self) -> u64 {
        self.degenerate_clamps
    }

    pub fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constants sink gradients; skipping them saves backward work.
    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.checked {
            assert!(
                value.all_finite(),
                "non-finite value produced by {:?} (shape {:?})",
                op,
                value.shape()
            );
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let mut out = va.clone();
        out.axpy(1.0, vb);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let mut out = va.clone();
        out.axpy(-1.0, vb);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        self.push(out, Op::Mul(a, b))
    }

    /// k·x + b elementwise with scalar constants.
    pub fn affine(&mut self, x: Var, k: f64, b: f64) -> Var {
        let out = self.val(x).map(|v| k * v + b);
        self.push(out, Op::Affine(x, k, b))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (vx, vb) = (self.val(x), self.val(bias));
        let c = *vx.shape().last().expect("add_bias needs rank >= 1");
        assert_eq!(vb.shape(), &[c], "bias must match last axis");
        let mut out = vx.clone();
        for chunk in out.data_mut().chunks_exact_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(x, bias))
    }

    pub fn mul_last(&mut self, x: Var, scale: Var) -> Var {
        let (vx, vs) = (self.val(x), self.val(scale));
        let c = *vx.shape().last().expect("mul_last needs rank >= 1");
        assert_eq!(vs.shape(), &[c], "scale must match last axis");
        let mut out = vx.clone();
        for chunk in out.data_mut().chunks_exact_mut(c) {
            for (o, &s) in chunk.iter_mut().zip(vs.data()) {
                *o *= s;
            }
        }
        self.push(out, Op::MulLast(x, scale))
    }

    /// Multiplies x by w broadcast over trailing axes: w's shape must be a
    /// prefix of x's shape.
    pub fn prefix_scale(&mut self, x: Var, w: Var) -> Var {
        let (vx, vw) = (self.val(x), self.val(w));
        assert!(
            vx.shape().starts_with(vw.shape()),
            "prefix_scale: {:?} is not a prefix of {:?}",
            vw.shape(),
            vx.shape()
        );
        let suffix = vx.len() / vw.len().max(1);
        let mut out = vx.clone();
        for (chunk, &wv) in out.data_mut().chunks_exact_mut(suffix).zip(vw.data()) {
            for o in chunk.iter_mut() {
                *o *= wv;
            }
        }
        self.push(out, Op::PrefixScale(x, w))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = crate::tensor::matmul(self.val(a), self.val(b));
        self.push(out, Op::Matmul(a, b))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        assert_eq!(va.rank(), 3, "bmm lhs rank");
        assert_eq!(vb.rank(), 3, "bmm rhs rank");
        let (bt, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let (bt2, k2, n) = (vb.shape()[0], vb.shape()[1], vb.shape()[2]);
        assert_eq!(bt, bt2, "bmm batch dims");
        assert_eq!(k, k2, "bmm inner dims");
        let mut out = Tensor::zeros(&[bt, m, n]);
        for e in 0..bt {
            matmul_nn_acc(
                &mut out.data_mut()[e * m * n..(e + 1) * m * n],
                &va.data()[e * m * k..(e + 1) * m * k],
                &vb.data()[e * k * n..(e + 1) * k * n],
                m,
                k,
                n,
            );
        }
        self.push(out, Op::Bmm(a, b))
    }

    /// Fused dense layer: x (r, i) · w (i, o) + b (o), optionally relu.
    pub fn linear(&mut self, x: Var, w: Var, b: Var, relu: bool) -> Var {
        let (vx, vw, vb) = (self.val(x), self.val(w), self.val(b));
        assert_eq!(vx.rank(), 2, "linear input rank");
        assert_eq!(vw.rank(), 2, "linear weight rank");
        let (r, i) = (vx.shape()[0], vx.shape()[1]);
        let (i2, o) = (vw.shape()[0], vw.shape()[1]);
        assert_eq!(i, i2, "linear inner dims");
        assert_eq!(vb.shape(), &[o], "linear bias shape");
        let mut out = Tensor::zeros(&[r, o]);
        {
            let od = out.data_mut();
            for row in od.chunks_exact_mut(o) {
                row.copy_from_slice(vb.data());
            }
            matmul_nn_acc(od, vx.data(), vw.data(), r, i, o);
            if relu {
                for v in od.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        self.push(out, Op::Linear { x, w, b, relu })
    }

    /// See [`Op::SegmentContract`]; phi is (e, ≥ col_start + block width),
    /// u is (e, n_j·c_in, d), output (e, c_out, d).
    pub fn segment_contract(
        &mut self,
        phi: Var,
        u: Var,
        col_start: usize,
        n_j: usize,
        c_out: usize,
        c_in: usize,
    ) -> Var {
        let (vp, vu) = (self.val(phi), self.val(u));
        assert_eq!(vp.rank(), 2, "segment_contract phi rank");
        assert_eq!(vu.rank(), 3, "segment_contract u rank");
        let e = vp.shape()[0];
        assert_eq!(vu.shape()[0], e, "segment_contract batch");
        assert_eq!(vu.shape()[1], n_j * c_in, "segment_contract rows");
        let d = vu.shape()[2];
        let width = n_j * c_out * c_in;
        assert!(col_start + width <= vp.shape()[1], "segment out of range");
        let phi_w = vp.shape()[1];
        let mut out = Tensor::zeros(&[e, c_out, d]);
        {
            let od = out.data_mut();
            let pd = vp.data();
            let ud = vu.data();
            for ei in 0..e {
                let prow = &pd[ei * phi_w + col_start..ei * phi_w + col_start + width];
                let ublock = &ud[ei * n_j * c_in * d..(ei + 1) * n_j * c_in * d];
                let oblock = &mut od[ei * c_out * d..(ei + 1) * c_out * d];
                for j in 0..n_j {
                    for co in 0..c_out {
                        let orow = &mut oblock[co * d..(co + 1) * d];
                        for ci in 0..c_in {
                            let coeff = prow[(j * c_out + co) * c_in + ci];
                            if coeff == 0.0 {
                                continue;
                            }
                            let urow = &ublock[(j * c_in + ci) * d..(j * c_in + ci + 1) * d];
                            for (ov, &uv) in orow.iter_mut().zip(urow) {
                                *ov += coeff * uv;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::SegmentContract {
                phi,
                u,
                col_start,
                n_j,
                c_out,
                c_in,
            },
        )
    }

    /// See [`Op::BasisStack`]: contracts each per-J basis with the shared
    /// feature block and stacks the results along the row axis.
    pub fn basis_stack(&mut self, bases: &[Var], f: Var) -> Var {
        assert!(!bases.is_empty());
        let vf = self.val(f);
        assert_eq!(vf.rank(), 3, "basis_stack feature rank");
        let (e, d_i, c) = (vf.shape()[0], vf.shape()[1], vf.shape()[2]);
        let d_o = self.val(bases[0]).shape()[1];
        for &b in bases {
            let vb = self.val(b);
            assert_eq!(vb.shape(), &[e, d_o, d_i], "basis_stack basis shape");
        }
        let n_j = bases.len();
        let mut out = Tensor::zeros(&[e, n_j * c, d_o]);
        {
            let od = out.data_mut();
            let fd = vf.data();
            for (j, &bv) in bases.iter().enumerate() {
                let bd = self.nodes[bv.0].value.data();
                for ei in 0..e {
                    let bblock = &bd[ei * d_o * d_i..(ei + 1) * d_o * d_i];
                    let fblock = &fd[ei * d_i * c..(ei + 1) * d_i * c];
                    // out[e, j·c + ci, o] = Σ_b B[o, b] f[b, ci]
                    let orows = &mut od[(ei * n_j + j) * c * d_o..(ei * n_j + j + 1) * c * d_o];
                    for o in 0..d_o {
                        let brow = &bblock[o * d_i..(o + 1) * d_i];
                        for (b, &bvv) in brow.iter().enumerate() {
                            if bvv == 0.0 {
                                continue;
                            }
                            let frow = &fblock[b * c..(b + 1) * c];
                            for (ci, &fv) in frow.iter().enumerate() {
                                orows[ci * d_o + o] += bvv * fv;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::BasisStack {
                bases: bases.to_vec(),
                f,
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.val(x).reshaped(shape);
        self.push(out, Op::Reshape(x))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Var {
        let out = permuted(self.val(x), axes);
        self.push(out, Op::Permute(x, axes.to_vec()))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| &self.nodes[p.0].value).collect();
        let out = concat_tensors(&tensors, axis);
        self.push(out, Op::Concat(parts.to_vec(), axis))
    }

    /// Stacks same-shape tensors along a new axis at `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| &self.nodes[p.0].value).collect();
        let out = stack_tensors(&tensors, axis);
        self.push(out, Op::Stack(parts.to_vec(), axis))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Var {
        let out = slice_tensor(self.val(x), axis, start, end);
        self.push(out, Op::Slice(x, axis, start, end))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.val(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Var {
        let vx = self.val(x);
        assert!(axis < vx.rank(), "sum_axis axis out of range");
        let (pre, ax, post) = split_at_axis(vx.shape(), axis);
        let mut shape = vx.shape().to_vec();
        shape.remove(axis);
        let mut out = Tensor::zeros(&shape);
        for p in 0..pre {
            for a in 0..ax {
                let src = &vx.data()[(p * ax + a) * post..(p * ax + a + 1) * post];
                let dst = &mut out.data_mut()[p * post..(p + 1) * post];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        self.push(out, Op::SumAxis(x, axis))
    }

    /// Elementwise integer power with constant exponent.
    pub fn powi(&mut self, x: Var, n: i32) -> Var {
        let out = self.val(x).map(|v| v.powi(n));
        self.push(out, Op::Powi(x, n))
    }

    /// sqrt(Σ_last x² + eps); removes the last axis. With eps = 0 this is
    /// the exact Euclidean norm; a small eps keeps it differentiable at 0.
    pub fn norm_last(&mut self, x: Var, eps: f64) -> Var {
        let vx = self.val(x);
        let c = *vx.shape().last().expect("norm_last needs rank >= 1");
        let shape: Vec<usize> = vx.shape()[..vx.rank() - 1].to_vec();
        let mut data = Vec::with_capacity(vx.len() / c);
        for chunk in vx.data().chunks_exact(c) {
            let s: f64 = chunk.iter().map(|v| v * v).sum();
            data.push((s + eps).sqrt());
        }
        let out = Tensor::new(shape, data);
        self.push(out, Op::NormLast(x, eps))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.val(x).map(f64::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.val(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.val(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(x))
    }

    /// Softmax over the last axis, with max subtraction for stability.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let vx = self.val(x);
        let c = *vx.shape().last().expect("softmax needs rank >= 1");
        let mut out = vx.clone();
        for chunk in out.data_mut().chunks_exact_mut(c) {
            let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in chunk.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in chunk.iter_mut() {
                *v /= total;
            }
        }
        self.push(out, Op::SoftmaxLast(x))
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let vx = self.val(x);
        assert!(vx.rank() >= 1);
        let rows = vx.shape()[0];
        let row_len = vx.len() / rows.max(1);
        let mut shape = vx.shape().to_vec();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * row_len);
        for &i in indices {
            assert!(i < rows, "gather index {i} out of {rows}");
            data.extend_from_slice(&vx.data()[i * row_len..(i + 1) * row_len]);
        }
        let out = Tensor::new(shape, data);
        self.push(out, Op::GatherRows(x, indices.to_vec()))
    }

    /// Spherical harmonics of per-row directions: (n, 3) → (n, (j_max+1)²).
    pub fn sph_all(&mut self, rel: Var, j_max: usize) -> Var {
        let vr = self.val(rel);
        assert_eq!(vr.rank(), 2, "sph_all input rank");
        assert_eq!(vr.shape()[1], 3, "sph_all input must be (n, 3)");
        let n = vr.shape()[0];
        let mut units = Vec::with_capacity(n);
        let mut clamped = 0;
        for row in vr.data().chunks_exact(3) {
            let r = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
            if r < R_MIN {
                clamped += 1;
                units.push([0.0, 0.0, 1.0]);
            } else {
                units.push([row[0] / r, row[1] / r, row[2] / r]);
            }
        }
        self.degenerate_clamps += clamped;
        let out = sh_eval_batch(j_max, &units);
        self.push(out, Op::SphAll(rel, j_max))
    }

    /// Identity forward; contributes zero gradient to its parent.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let out = self.val(x).clone();
        self.push(out, Op::StopGradient(x))
    }

    /// Reverse accumulation from a scalar root. Returns gradients for every
    /// node reachable from the root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.val(root).len(),
            1,
            "backward root must be scalar, got shape {:?}",
            self.val(root).shape()
        );
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::new(
            self.val(root).shape().to_vec(),
            vec![1.0],
        ));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Constant | Op::StopGradient(_) => {}
            Op::Add(a, b) => {
                acc_scaled(grads, *a, g, 1.0, self);
                acc_scaled(grads, *b, g, 1.0, self);
            }
            Op::Sub(a, b) => {
                acc_scaled(grads, *a, g, 1.0, self);
                acc_scaled(grads, *b, g, -1.0, self);
            }
            Op::Mul(a, b) => {
                let da = elementwise_product(g, self.val(*b));
                acc(grads, *a, da, self);
                let db = elementwise_product(g, self.val(*a));
                acc(grads, *b, db, self);
            }
            Op::Affine(x, k, _) => acc_scaled(grads, *x, g, *k, self),
            Op::AddBias(x, bias) => {
                acc_scaled(grads, *x, g, 1.0, self);
                let c = self.val(*bias).len();
                let mut gb = Tensor::zeros(&[c]);
                for chunk in g.data().chunks_exact(c) {
                    for (o, &v) in gb.data_mut().iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
                acc(grads, *bias, gb, self);
            }
            Op::MulLast(x, scale) => {
                let vs = self.val(*scale);
                let c = vs.len();
                let mut gx = g.clone();
                for chunk in gx.data_mut().chunks_exact_mut(c) {
                    for (o, &s) in chunk.iter_mut().zip(vs.data()) {
                        *o *= s;
                    }
                }
                acc(grads, *x, gx, self);
                let vx = self.val(*x);
                let mut gs = Tensor::zeros(&[c]);
                for (gchunk, xchunk) in g.data().chunks_exact(c).zip(vx.data().chunks_exact(c)) {
                    for ((o, &gv), &xv) in gs.data_mut().iter_mut().zip(gchunk).zip(xchunk) {
                        *o += gv * xv;
                    }
                }
                acc(grads, *scale, gs, self);
            }
            Op::PrefixScale(x, w) => {
                let vw = self.val(*w);
                let suffix = g.len() / vw.len().max(1);
                let mut gx = g.clone();
                for (chunk, &wv) in gx.data_mut().chunks_exact_mut(suffix).zip(vw.data()) {
                    for o in chunk.iter_mut() {
                        *o *= wv;
                    }
                }
                acc(grads, *x, gx, self);
                let vx = self.val(*x);
                let mut gw = Tensor::zeros(vw.shape());
                for ((o, gchunk), xchunk) in gw
                    .data_mut()
                    .iter_mut()
                    .zip(g.data().chunks_exact(suffix))
                    .zip(vx.data().chunks_exact(suffix))
                {
                    let mut acc_v = 0.0;
                    for (&gv, &xv) in gchunk.iter().zip(xchunk) {
                        acc_v += gv * xv;
                    }
                    *o += acc_v;
                }
                acc(grads, *w, gw, self);
            }
            Op::Matmul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.needs_grad(*a) {
                    let ga = ensure(grads, *a, va.shape());
                    matmul_nt_acc(ga.data_mut(), g.data(), vb.data(), m, n, k);
                }
                if self.needs_grad(*b) {
                    let gb = ensure(grads, *b, vb.shape());
                    matmul_tn_acc(gb.data_mut(), va.data(), g.data(), k, m, n);
                }
            }
            Op::Linear { x, w, b, relu } => {
                let (vx, vw) = (self.val(*x), self.val(*w));
                let (r, i) = (vx.shape()[0], vx.shape()[1]);
                let o = vw.shape()[1];
                // mask through relu: output > 0 iff pre-activation > 0
                let gm: Tensor;
                let g_eff: &Tensor = if *relu {
                    let data = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(&gv, &yv)| if yv > 0.0 { gv } else { 0.0 })
                        .collect();
                    gm = Tensor::new(g.shape().to_vec(), data);
                    &gm
                } else {
                    g
                };
                if self.needs_grad(*x) {
                    let gx = ensure(grads, *x, vx.shape());
                    matmul_nt_acc(gx.data_mut(), g_eff.data(), vw.data(), r, o, i);
                }
                if self.needs_grad(*w) {
                    let gw = ensure(grads, *w, vw.shape());
                    matmul_tn_acc(gw.data_mut(), vx.data(), g_eff.data(), i, r, o);
                }
                if self.needs_grad(*b) {
                    let gb = ensure(grads, *b, &[o]);
                    for chunk in g_eff.data().chunks_exact(o) {
                        for (acc_v, &v) in gb.data_mut().iter_mut().zip(chunk) {
                            *acc_v += v;
                        }
                    }
                }
            }
            Op::SegmentContract {
                phi,
                u,
                col_start,
                n_j,
                c_out,
                c_in,
            } => {
                let (vp, vu) = (self.val(*phi), self.val(*u));
                let e = vp.shape()[0];
                let phi_w = vp.shape()[1];
                let d = vu.shape()[2];
                if self.needs_grad(*phi) {
                    let gp = ensure(grads, *phi, vp.shape());
                    let gpd = gp.data_mut();
                    let ud = vu.data();
                    for ei in 0..e {
                        let gblock = &g.data()[ei * c_out * d..(ei + 1) * c_out * d];
                        let ublock = &ud[ei * n_j * c_in * d..(ei + 1) * n_j * c_in * d];
                        let prow = &mut gpd
                            [ei * phi_w + col_start..ei * phi_w + col_start + n_j * c_out * c_in];
                        for j in 0..*n_j {
                            for co in 0..*c_out {
                                let grow = &gblock[co * d..(co + 1) * d];
                                for ci in 0..*c_in {
                                    let urow =
                                        &ublock[(j * c_in + ci) * d..(j * c_in + ci + 1) * d];
                                    let mut acc_v = 0.0;
                                    for (&gv, &uv) in grow.iter().zip(urow) {
                                        acc_v += gv * uv;
                                    }
                                    prow[(j * c_out + co) * c_in + ci] += acc_v;
                                }
                            }
                        }
                    }
                }
                if !self.needs_grad(*u) {
                    return;
                }
                let gu = ensure(grads, *u, vu.shape());
                let gud = gu.data_mut();
                let pd = vp.data();
                for ei in 0..e {
                    let gblock = &g.data()[ei * c_out * d..(ei + 1) * c_out * d];
                    let prow = &pd[ei * phi_w + col_start..ei * phi_w + col_start + n_j * c_out * c_in];
                    let ublock = &mut gud[ei * n_j * c_in * d..(ei + 1) * n_j * c_in * d];
                    for j in 0..*n_j {
                        for co in 0..*c_out {
                            let grow = &gblock[co * d..(co + 1) * d];
                            for ci in 0..*c_in {
                                let coeff = prow[(j * c_out + co) * c_in + ci];
                                if coeff == 0.0 {
                                    continue;
                                }
                                let urow =
                                    &mut ublock[(j * c_in + ci) * d..(j * c_in + ci + 1) * d];
                                for (uv, &gv) in urow.iter_mut().zip(grow) {
                                    *uv += coeff * gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::BasisStack { bases, f } => {
                let vf = self.val(*f);
                let (e, d_i, c) = (vf.shape()[0], vf.shape()[1], vf.shape()[2]);
                let d_o = self.val(bases[0]).shape()[1];
                let n_j = bases.len();
                for (j, &bv) in bases.iter().enumerate() {
                    if self.needs_grad(bv) {
                        let gb = ensure(grads, bv, &[e, d_o, d_i]);
                        let gbd = gb.data_mut();
                        let fd = vf.data();
                        for ei in 0..e {
                            let gblock =
                                &g.data()[(ei * n_j + j) * c * d_o..(ei * n_j + j + 1) * c * d_o];
                            let fblock = &fd[ei * d_i * c..(ei + 1) * d_i * c];
                            let gbb = &mut gbd[ei * d_o * d_i..(ei + 1) * d_o * d_i];
                            for ci in 0..c {
                                let grow = &gblock[ci * d_o..(ci + 1) * d_o];
                                for b in 0..d_i {
                                    let fv = fblock[b * c + ci];
                                    if fv == 0.0 {
                                        continue;
                                    }
                                    for (o, &gv) in grow.iter().enumerate() {
                                        gbb[o * d_i + b] += gv * fv;
                                    }
                                }
                            }
                        }
                    }
                }
                if self.needs_grad(*f) {
                    let gf = ensure(grads, *f, vf.shape());
                    let gfd = gf.data_mut();
                    for (j, &bv) in bases.iter().enumerate() {
                        let bd = self.nodes[bv.0].value.data();
                        for ei in 0..e {
                            let gblock =
                                &g.data()[(ei * n_j + j) * c * d_o..(ei * n_j + j + 1) * c * d_o];
                            let bblock = &bd[ei * d_o * d_i..(ei + 1) * d_o * d_i];
                            let fgb = &mut gfd[ei * d_i * c..(ei + 1) * d_i * c];
                            for o in 0..d_o {
                                let brow = &bblock[o * d_i..(o + 1) * d_i];
                                for (b, &bvv) in brow.iter().enumerate() {
                                    if bvv == 0.0 {
                                        continue;
                                    }
                                    let frow = &mut fgb[b * c..(b + 1) * c];
                                    for (ci, slot) in frow.iter_mut().enumerate() {
                                        *slot += bvv * gblock[ci * d_o + o];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Bmm(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let (bt, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                let n = vb.shape()[2];
                if self.needs_grad(*a) {
                    let ga = ensure(grads, *a, va.shape());
                    for e in 0..bt {
                        matmul_nt_acc(
                            &mut ga.data_mut()[e * m * k..(e + 1) * m * k],
                            &g.data()[e * m * n..(e + 1) * m * n],
                            &vb.data()[e * k * n..(e + 1) * k * n],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if self.needs_grad(*b) {
                    let gb = ensure(grads, *b, vb.shape());
                    for e in 0..bt {
                        matmul_tn_acc(
                            &mut gb.data_mut()[e * k * n..(e + 1) * k * n],
                            &va.data()[e * m * k..(e + 1) * m * k],
                            &g.data()[e * m * n..(e + 1) * m * n],
                            k,
                            m,
                            n,
                        );
                    }
                }
            }
            Op::Reshape(x) => {
                let gx = g.reshaped(self.val(*x).shape());
                acc(grads, *x, gx, self);
            }
            Op::Permute(x, axes) => {
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let gx = permuted(g, &inverse);
                acc(grads, *x, gx, self);
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.val(p).shape()[*axis];
                    let gp = slice_tensor(g, *axis, start, start + w);
                    acc(grads, p, gp, self);
                    start += w;
                }
            }
            Op::Stack(parts, axis) => {
                for (i, &p) in parts.iter().enumerate() {
                    let gp = slice_tensor(g, *axis, i, i + 1)
                        .reshaped(self.val(p).shape());
                    acc(grads, p, gp, self);
                }
            }
            Op::Slice(x, axis, start, end) => {
                if !self.needs_grad(*x) {
                    return;
                }
                let vx = self.val(*x);
                let (pre, ax, post) = split_at_axis(vx.shape(), *axis);
                let gx = ensure(grads, *x, vx.shape());
                let width = end - start;
                for p in 0..pre {
                    for a in 0..width {
                        let src = &g.data()[(p * width + a) * post..(p * width + a + 1) * post];
                        let off = (p * ax + start + a) * post;
                        let dst = &mut gx.data_mut()[off..off + post];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if !self.needs_grad(*x) {
                    return;
                }
                let gv = g.item();
                let vx = self.val(*x);
                let gx = ensure(grads, *x, vx.shape());
                for o in gx.data_mut().iter_mut() {
                    *o += gv;
                }
            }
            Op::SumAxis(x, axis) => {
                if !self.needs_grad(*x) {
                    return;
                }
                let vx = self.val(*x);
                let (pre, ax, post) = split_at_axis(vx.shape(), *axis);
                let gx = ensure(grads, *x, vx.shape());
                for p in 0..pre {
                    let src = &g.data()[p * post..(p + 1) * post];
                    for a in 0..ax {
                        let off = (p * ax + a) * post;
                        let dst = &mut gx.data_mut()[off..off + post];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Powi(x, n) => {
                let vx = self.val(*x);
                let nf = *n as f64;
                let data = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(&gv, &xv)| gv * nf * xv.powi(n - 1))
                    .collect();
                acc(grads, *x, Tensor::new(vx.shape().to_vec(), data), self);
            }
            Op::NormLast(x, _) => {
                let vx = self.val(*x);
                let c = *vx.shape().last().unwrap();
                let y = &node.value;
                let mut gx = Tensor::zeros(vx.shape());
                for (p, (&gout, &yv)) in g.data().iter().zip(y.data()).enumerate() {
                    if yv == 0.0 {
                        continue;
                    }
                    let s = gout / yv;
                    let xchunk = &vx.data()[p * c..(p + 1) * c];
                    let gchunk = &mut gx.data_mut()[p * c..(p + 1) * c];
                    for (o, &xv) in gchunk.iter_mut().zip(xchunk) {
                        *o = s * xv;
                    }
                }
                acc(grads, *x, gx, self);
            }
            Op::Exp(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &yv)| gv * yv)
                    .collect();
                acc(grads, *x, Tensor::new(g.shape().to_vec(), data), self);
            }
            Op::Relu(x) => {
                let vx = self.val(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                acc(grads, *x, Tensor::new(vx.shape().to_vec(), data), self);
            }
            Op::Sigmoid(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &yv)| gv * yv * (1.0 - yv))
                    .collect();
                acc(grads, *x, Tensor::new(g.shape().to_vec(), data), self);
            }
            Op::SoftmaxLast(x) => {
                let y = &node.value;
                let c = *y.shape().last().unwrap();
                let mut gx = g.clone();
                for (gchunk, ychunk) in gx
                    .data_mut()
                    .chunks_exact_mut(c)
                    .zip(y.data().chunks_exact(c))
                {
                    let dot: f64 = gchunk.iter().zip(ychunk).map(|(a, b)| a * b).sum();
                    for (o, &yv) in gchunk.iter_mut().zip(ychunk) {
                        *o = yv * (*o - dot);
                    }
                }
                acc(grads, *x, gx, self);
            }
            Op::GatherRows(x, indices) => {
                if !self.needs_grad(*x) {
                    return;
                }
                let vx = self.val(*x);
                let rows = vx.shape()[0];
                let row_len = vx.len() / rows.max(1);
                let gx = ensure(grads, *x, vx.shape());
                for (slot, &i) in indices.iter().enumerate() {
                    let src = &g.data()[slot * row_len..(slot + 1) * row_len];
                    let dst = &mut gx.data_mut()[i * row_len..(i + 1) * row_len];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            Op::SphAll(rel, j_max) => {
                if !self.needs_grad(*rel) {
                    return;
                }
                let vr = self.val(*rel);
                let n = vr.shape()[0];
                let mut rels = Vec::with_capacity(n);
                for row in vr.data().chunks_exact(3) {
                    rels.push([row[0], row[1], row[2]]);
                }
                let jac = sh_grad_batch(*j_max, &rels); // (n, w, 3)
                let w = (*j_max + 1) * (*j_max + 1);
                let gx = ensure(grads, *rel, vr.shape());
                for e in 0..n {
                    let grow = &g.data()[e * w..(e + 1) * w];
                    let jrow = &jac.data()[e * w * 3..(e + 1) * w * 3];
                    let dst = &mut gx.data_mut()[e * 3..(e + 1) * 3];
                    for (k, &gv) in grow.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        dst[0] += gv * jrow[k * 3];
                        dst[1] += gv * jrow[k * 3 + 1];
                        dst[2] += gv * jrow[k * 3 + 2];
                    }
                }
            }
        }
    }
}

/// Gradient buffers keyed by node id after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `v`, if `v` was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of the root w.r.t. `v`, zeros if unreached.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape) -> Tensor {
        match self.get(v) {
            Some(t) => t.clone(),
            None => Tensor::zeros(tape.val(v).shape()),
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, delta: Tensor, tape: &Tape) {
    if !tape.needs_grad(v) {
        return;
    }
    debug_assert_eq!(delta.shape(), tape.val(v).shape());
    match &mut grads[v.0] {
        Some(t) => t.axpy(1.0, &delta),
        slot @ None => *slot = Some(delta),
    }
}

fn acc_scaled(grads: &mut [Option<Tensor>], v: Var, g: &Tensor, alpha: f64, tape: &Tape) {
    if !tape.needs_grad(v) {
        return;
    }
    let buf = ensure(grads, v, tape.val(v).shape());
    buf.axpy(alpha, g);
}

fn ensure<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn elementwise_product(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x * y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let pre: usize = shape[..axis].iter().product();
    let ax = shape[axis];
    let post: usize = shape[axis + 1..].iter().product();
    (pre, ax, post)
}

/// Strided permutation copy (rank ≤ 4).
fn permuted(x: &Tensor, axes: &[usize]) -> Tensor {
    let rank = x.rank();
    assert_eq!(axes.len(), rank, "permute axes length");
    let mut seen = vec![false; rank];
    for &a in axes {
        assert!(a < rank && !seen[a], "invalid permutation {axes:?}");
        seen[a] = true;
    }
    assert!(rank <= 4, "permute supports rank <= 4");
    let in_shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let xd = x.data();

    // fast path for the common batched transpose (0, 2, 1)
    if rank == 3 && axes == [0, 2, 1] {
        let (bt, m, n) = (in_shape[0], in_shape[1], in_shape[2]);
        let mut data = vec![0.0; x.len()];
        for e in 0..bt {
            let src = &xd[e * m * n..(e + 1) * m * n];
            let dst = &mut data[e * m * n..(e + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        return Tensor::new(out_shape, data);
    }

    let in_strides = strides_of(in_shape);
    // stride in the input for each output axis
    let s: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut padded_shape = out_shape.clone();
    let mut padded_s = s.clone();
    while padded_shape.len() < 4 {
        padded_shape.push(1);
        padded_s.push(0);
    }
    let mut data = vec![0.0; x.len()];
    let mut w = 0;
    for i0 in 0..padded_shape[0] {
        for i1 in 0..padded_shape[1] {
            for i2 in 0..padded_shape[2] {
                let base = i0 * padded_s[0] + i1 * padded_s[1] + i2 * padded_s[2];
                let s3 = padded_s[3];
                let row = &mut data[w..w + padded_shape[3]];
                for (i3, slot) in row.iter_mut().enumerate() {
                    *slot = xd[base + i3 * s3];
                }
                w += padded_shape[3];
            }
        }
    }
    Tensor::new(out_shape, data)
}

fn concat_tensors(parts: &[&Tensor], axis: usize) -> Tensor {
    let rank = parts[0].rank();
    assert!(axis < rank, "concat axis out of range");
    for p in parts {
        assert_eq!(p.rank(), rank);
        for (i, (&a, &b)) in p.shape().iter().zip(parts[0].shape()).enumerate() {
            assert!(i == axis || a == b, "concat shape mismatch");
        }
    }
    let mut out_shape = parts[0].shape().to_vec();
    out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let (pre, _, post) = split_at_axis(&out_shape, axis);
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for p_idx in 0..pre {
        for p in parts {
            let ax = p.shape()[axis];
            let start = p_idx * ax * post;
            data.extend_from_slice(&p.data()[start..start + ax * post]);
        }
    }
    Tensor::new(out_shape, data)
}

fn stack_tensors(parts: &[&Tensor], axis: usize) -> Tensor {
    let base = parts[0].shape();
    for p in parts {
        assert_eq!(p.shape(), base, "stack shape mismatch");
    }
    assert!(axis <= base.len(), "stack axis out of range");
    let mut out_shape = base.to_vec();
    out_shape.insert(axis, parts.len());
    let pre: usize = base[..axis].iter().product();
    let post: usize = base[axis..].iter().product();
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for p_idx in 0..pre {
        for p in parts {
            data.extend_from_slice(&p.data()[p_idx * post..(p_idx + 1) * post]);
        }
    }
    Tensor::new(out_shape, data)
}

fn slice_tensor(x: &Tensor, axis: usize, start: usize, end: usize) -> Tensor {
    let (pre, ax, post) = split_at_axis(x.shape(), axis);
    assert!(start <= end && end <= ax, "slice [{start}, {end}) out of axis {ax}");
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = end - start;
    let mut data = Vec::with_capacity(pre * (end - start) * post);
    for p in 0..pre {
        let off = (p * ax + start) * post;
        data.extend_from_slice(&x.data()[off..off + (end - start) * post]);
    }
    Tensor::new(out_shape, data)
}
