//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Nodes are recorded in insertion order, so every node's parents precede
//! it and a backward pass is a single reverse sweep. All reductions run in a
//! fixed order: the same graph on the same inputs yields bit-identical
//! values and gradients.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::{gemm, Scalar, Strides};
use crate::tensor::{numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    MaxPool2x2 { input: Var, argmax: Vec<u32> },
    Relu { input: Var },
    Resize { input: Var },
    MatMul { a: Var, b: Var },
    Transpose { input: Var },
    Reshape { input: Var },
    SoftmaxRows { input: Var, scale: T },
    Reduce { input: Var, kind: ReduceKind, axes: Vec<usize> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: T },
    CenterColumns { input: Var },
    NormalizeRows { input: Var, norms: Vec<T>, eps: T },
    InfoNceDiag { input: Var, scale: T },
    SumSqDiff { a: Var, b: Var },
    Unfold { input: Var, geom: ConvGeom },
    ChannelAffine { input: Var, scale: Vec<T> },
    Clamp { input: Var, lo: T, hi: T },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2x2 { .. } => "maxpool2d_2x2",
            Op::Relu { .. } => "relu",
            Op::Resize { .. } => "resize_bilinear",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::Reduce { .. } => "reduce",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::CenterColumns { .. } => "center_columns",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::InfoNceDiag { .. } => "infonce_diag",
            Op::SumSqDiff { .. } => "sum_sq_diff",
            Op::Unfold { .. } => "unfold",
            Op::ChannelAffine { .. } => "channel_affine",
            Op::Clamp { .. } => "clamp",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf; it takes part in differentiation if the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node { op: Op::Leaf, value: tensor, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// A gradient-free copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let mut t = Tensor::from_vec(self.shape(v), self.data(v).to_vec()).expect("same shape");
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, present on leaves that require it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    /// Copies a node's value out as an owned tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::from_vec(self.shape(v), self.data(v).to_vec()).expect("same shape")
    }

    pub fn item(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    fn push(&mut self, op: Op<T>, shape: &[usize], data: Vec<T>, parents: &[Var]) -> Result<Var> {
        let value = Tensor::from_vec(shape, data)?;
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { op, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::contract(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ---- convolution and pooling ----

    /// Cross-correlation of an N×C_in×H×W input with a C_out×C_in×k×k kernel.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        let [co, ci, kh, kw] = self.value(weight).dims4().map_err(|_| {
            Error::contract(format!("conv2d: weight must be C_out×C_in×k×k, got {:?}", self.shape(weight)))
        })?;
        if ci != c {
            return Err(Error::contract(format!(
                "conv2d: input has {c} channels (shape {:?}) but weight expects C_in = {ci} (shape {:?})",
                self.shape(input),
                self.shape(weight)
            )));
        }
        if kh != kw {
            return Err(Error::contract(format!("conv2d: non-square kernel {kh}×{kw}")));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d: stride must be positive"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [co] {
                return Err(Error::contract(format!(
                    "conv2d: bias shape {:?} does not match C_out = {co}",
                    self.shape(b)
                )));
            }
        }
        let (Some(oh), Some(ow)) = (
            ConvGeom::out_extent(h, kh, stride, pad),
            ConvGeom::out_extent(w, kw, stride, pad),
        ) else {
            return Err(Error::contract(format!(
                "conv2d: non-positive output extent for H×W = {h}×{w}, k = {kh}, stride = {stride}, pad = {pad}"
            )));
        };
        let geom = ConvGeom { channels: c, height: h, width: w, kernel: kh, stride, pad };
        let out = kernels::conv2d_forward(
            self.data(input),
            n,
            &geom,
            self.data(weight),
            co,
            bias.map(|b| self.data(b)),
        );
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.push(Op::Conv2d { input, weight, bias, geom }, &[n, co, oh, ow], out, &parents)
    }

    pub fn maxpool2d_2x2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::contract(format!("maxpool2d_2x2: odd spatial extent {h}×{w}")));
        }
        let (out, argmax) = kernels::maxpool2x2_forward(self.data(input), n * c, h, w);
        self.push(Op::MaxPool2x2 { input, argmax }, &[n, c, h / 2, w / 2], out, &[input])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = self.data(input).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let shape = self.shape(input).to_vec();
        self.push(Op::Relu { input }, &shape, out, &[input])
    }

    /// Bilinear resize of the two trailing axes with half-pixel centers and
    /// edge clamping.
    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(Error::contract("resize_bilinear: zero extent"));
        }
        let out = kernels::resize_forward(self.data(input), n * c, h, w, out_h, out_w);
        self.push(Op::Resize { input }, &[n, c, out_h, out_w], out, &[input])
    }

    pub fn upsample_bilinear_2x(&mut self, input: Var) -> Result<Var> {
        let [_, _, h, w] = self.value(input).dims4()?;
        self.resize_bilinear(input, 2 * h, 2 * w)
    }

    // ---- matrices ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [p, q] = self.value(a).dims2()?;
        let [q2, r] = self.value(b).dims2()?;
        if q != q2 {
            return Err(Error::contract(format!("matmul: inner dimensions {p}×{q} · {q2}×{r} disagree")));
        }
        let mut out = vec![T::zero(); p * r];
        gemm(p, q, r, self.data(a), Strides::row_major(q), self.data(b), Strides::row_major(r), &mut out, Strides::row_major(r), false);
        self.push(Op::MatMul { a, b }, &[p, r], out, &[a, b])
    }

    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let [r, c] = self.value(input).dims2()?;
        let x = self.data(input);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        self.push(Op::Transpose { input }, &[c, r], out, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(input).len() {
            return Err(Error::contract(format!("reshape: {:?} to {shape:?}", self.shape(input))));
        }
        let out = self.data(input).to_vec();
        self.push(Op::Reshape { input }, shape, out, &[input])
    }

    /// Row-wise softmax of `logits / scale`.
    pub fn softmax_rows(&mut self, logits: Var, scale: T) -> Result<Var> {
        if !(scale > T::zero()) {
            return Err(Error::contract(format!("softmax_rows: scale must be positive, got {scale}")));
        }
        let [p, q] = self.value(logits).dims2()?;
        let out = kernels::softmax_rows(self.data(logits), p, q, scale);
        self.push(Op::SoftmaxRows { input: logits, scale }, &[p, q], out, &[logits])
    }

    // ---- reductions and elementwise arithmetic ----

    /// Sum or mean over `axes`, which are removed from the shape.
    pub fn reduce(&mut self, input: Var, kind: ReduceKind, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(Error::contract(format!("reduce: axis {bad} out of range for shape {shape:?}")));
        }
        let out_shape: Vec<usize> = shape.iter().enumerate().filter(|(i, _)| !axes.contains(i)).map(|(_, &d)| d).collect();
        let map = reduce_index_map(&shape, &axes);
        let mut out = vec![T::zero(); numel(&out_shape)];
        for (i, &x) in self.data(input).iter().enumerate() {
            out[map[i]] = out[map[i]] + x;
        }
        if kind == ReduceKind::Mean {
            let count = T::of_f64((numel(&shape) / numel(&out_shape).max(1)) as f64);
            for v in &mut out {
                *v = *v / count;
            }
        }
        self.push(Op::Reduce { input, kind, axes }, &out_shape, out, &[input])
    }

    pub fn sum_all(&mut self, input: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(input).len()).collect();
        self.reduce(input, ReduceKind::Sum, &axes)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Add { a, b }, &shape, out, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Sub { a, b }, &shape, out, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Mul { a, b }, &shape, out, &[a, b])
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let out = self.data(input).iter().map(|&x| x * factor).collect();
        let shape = self.shape(input).to_vec();
        self.push(Op::Scale { input, factor }, &shape, out, &[input])
    }

    /// `wa * a + wb * b`.
    pub fn lerp_weights(&mut self, a: Var, wa: T, b: Var, wb: T) -> Result<Var> {
        let sa = self.scale(a, wa)?;
        let sb = self.scale(b, wb)?;
        self.add(sa, sb)
    }

    pub fn clamp(&mut self, input: Var, lo: T, hi: T) -> Result<Var> {
        let out = self.data(input).iter().map(|&x| x.max(lo).min(hi)).collect();
        let shape = self.shape(input).to_vec();
        self.push(Op::Clamp { input, lo, hi }, &shape, out, &[input])
    }

    /// Per-channel affine map `x * scale[c] + shift[c]` on an N×C×H×W input.
    pub fn channel_affine(&mut self, input: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if scale.len() != c || shift.len() != c {
            return Err(Error::contract(format!("channel_affine: {c} channels but {} scales", scale.len())));
        }
        let plane = h * w;
        let x = self.data(input);
        let mut out = Vec::with_capacity(x.len());
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                out.extend(x[base..base + plane].iter().map(|&v| v * scale[ci] + shift[ci]));
            }
        }
        self.push(Op::ChannelAffine { input, scale: scale.to_vec() }, &[n, c, h, w], out, &[input])
    }

    // ---- fused ops for the correspondence and loss computations ----

    /// Subtracts each column's mean (over rows) from a P×C matrix.
    pub fn center_columns(&mut self, input: Var) -> Result<Var> {
        let [p, c] = self.value(input).dims2()?;
        if p == 0 {
            return Err(Error::contract("center_columns: no rows"));
        }
        let x = self.data(input);
        let means = column_means(x, p, c);
        let out = x.iter().enumerate().map(|(i, &v)| v - means[i % c]).collect();
        self.push(Op::CenterColumns { input }, &[p, c], out, &[input])
    }

    /// Scales each row of a matrix to unit length, dividing by
    /// `max(‖row‖, eps)`.
    pub fn normalize_rows(&mut self, input: Var, eps: T) -> Result<Var> {
        let [p, c] = self.value(input).dims2()?;
        let x = self.data(input);
        let mut norms = Vec::with_capacity(p);
        let mut out = Vec::with_capacity(p * c);
        for row in x.chunks(c.max(1)).take(p) {
            let n = row.iter().fold(T::zero(), |s, &v| s + v * v).sqrt().max(eps);
            norms.push(n);
            out.extend(row.iter().map(|&v| v / n));
        }
        self.push(Op::NormalizeRows { input, norms, eps }, &[p, c], out, &[input])
    }

    /// Contrastive loss over a square score matrix whose diagonal holds the
    /// positives: `Σ_u [logsumexp_v(s_uv / scale) − s_uu / scale]`.
    pub fn infonce_diag(&mut self, scores: Var, scale: T) -> Result<Var> {
        let [p, q] = self.value(scores).dims2()?;
        if p != q {
            return Err(Error::contract(format!("infonce_diag: score matrix {p}×{q} is not square")));
        }
        if !(scale > T::zero()) {
            return Err(Error::contract("infonce_diag: scale must be positive"));
        }
        let s = self.data(scores);
        let mut total = T::zero();
        for u in 0..p {
            let row = &s[u * q..(u + 1) * q];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut acc = T::zero();
            for &v in row {
                acc = acc + ((v - max) / scale).exp();
            }
            total = total + (acc.ln() + (max - row[u]) / scale);
        }
        self.push(Op::InfoNceDiag { input: scores, scale }, &[], vec![total], &[scores])
    }

    /// `Σ (a − b)²` as a scalar.
    pub fn sum_sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sum_sq_diff", a, b)?;
        let mut total = T::zero();
        for (&x, &y) in self.data(a).iter().zip(self.data(b)) {
            let d = x - y;
            total = total + d * d;
        }
        self.push(Op::SumSqDiff { a, b }, &[], vec![total], &[a, b])
    }

    /// Extracts every fully contained `patch×patch` window of a 1×C×H×W
    /// input as a column of a (C·patch²) × (H'·W') matrix.
    pub fn unfold(&mut self, input: Var, patch: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if n != 1 {
            return Err(Error::contract(format!("unfold: batch must be 1, got {n}")));
        }
        if patch == 0 || patch > h || patch > w {
            return Err(Error::contract(format!("unfold: patch {patch} does not fit a {h}×{w} map")));
        }
        let geom = ConvGeom { channels: c, height: h, width: w, kernel: patch, stride: 1, pad: 0 };
        let mut col = vec![T::zero(); geom.col_rows() * geom.col_cols()];
        kernels::im2col(self.data(input), &geom, &mut col);
        self.push(Op::Unfold { input, geom }, &[geom.col_rows(), geom.col_cols()], col, &[input])
    }

    // ---- backward ----

    /// Populates gradients of the scalar `loss` on every leaf that requires
    /// them. Leaves not reached by the loss receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("backward: loss is not a node of this graph"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(gout);
                continue;
            }
            self.backward_node(i, &gout, &mut grads);
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                node.value.set_grad(Some(g));
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| nodes[v.0].value.data();
        let out = nodes[i].value.data();

        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let [n, co, _, _] = nodes[i].value.dims4().expect("4-d");
                let mut dx = wants(*input).then(|| take_or_zeros(grads, *input, nodes));
                let mut dw = wants(*weight).then(|| take_or_zeros(grads, *weight, nodes));
                let mut db = bias.filter(|b| wants(*b)).map(|b| take_or_zeros(grads, b, nodes));
                kernels::conv2d_backward(
                    val(*input),
                    n,
                    geom,
                    val(*weight),
                    co,
                    gout,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    grads[input.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    grads[weight.0] = Some(dw);
                }
                if let (Some(b), Some(db)) = (bias, db) {
                    grads[b.0] = Some(db);
                }
            }
            Op::MaxPool2x2 { input, argmax } => {
                accumulate(grads, *input, nodes, |dx| {
                    for (&g, &j) in gout.iter().zip(argmax) {
                        dx[j as usize] = dx[j as usize] + g;
                    }
                });
            }
            Op::Relu { input } => {
                accumulate(grads, *input, nodes, |dx| {
                    for ((d, &g), &y) in dx.iter_mut().zip(gout).zip(out) {
                        if y > T::zero() {
                            *d = *d + g;
                        }
                    }
                });
            }
            Op::Resize { input } => {
                let [n, c, h, w] = nodes[input.0].value.dims4().expect("4-d");
                let [_, _, oh, ow] = nodes[i].value.dims4().expect("4-d");
                accumulate(grads, *input, nodes, |dx| kernels::resize_backward(gout, n * c, h, w, oh, ow, dx));
            }
            Op::MatMul { a, b } => {
                let [p, q] = nodes[a.0].value.dims2().expect("2-d");
                let [_, r] = nodes[b.0].value.dims2().expect("2-d");
                if wants(*a) {
                    // dA = dC · Bᵀ
                    let bv = val(*b);
                    accumulate(grads, *a, nodes, |da| {
                        gemm(p, r, q, gout, Strides::row_major(r), bv, Strides::row_major(r).transposed(), da, Strides::row_major(q), true)
                    });
                }
                if wants(*b) {
                    // dB = Aᵀ · dC
                    let av = val(*a);
                    accumulate(grads, *b, nodes, |db| {
                        gemm(q, p, r, av, Strides::row_major(q).transposed(), gout, Strides::row_major(r), db, Strides::row_major(r), true)
                    });
                }
            }
            Op::Transpose { input } => {
                let [r, c] = nodes[input.0].value.dims2().expect("2-d");
                accumulate(grads, *input, nodes, |dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = dx[i * c + j] + gout[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape { input } => {
                accumulate(grads, *input, nodes, |dx| add_into(dx, gout));
            }
            Op::SoftmaxRows { input, scale } => {
                let [p, q] = nodes[i].value.dims2().expect("2-d");
                accumulate(grads, *input, nodes, |dx| {
                    for r in 0..p {
                        let y = &out[r * q..(r + 1) * q];
                        let g = &gout[r * q..(r + 1) * q];
                        let dot = y.iter().zip(g).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        for j in 0..q {
                            dx[r * q + j] = dx[r * q + j] + y[j] * (g[j] - dot) / *scale;
                        }
                    }
                });
            }
            Op::Reduce { input, kind, axes } => {
                let shape = nodes[input.0].value.shape();
                let map = reduce_index_map(shape, axes);
                let factor = match kind {
                    ReduceKind::Sum => T::one(),
                    ReduceKind::Mean => T::one() / T::of_f64((numel(shape) / gout.len().max(1)) as f64),
                };
                accumulate(grads, *input, nodes, |dx| {
                    for (d, &m) in dx.iter_mut().zip(&map) {
                        *d = *d + gout[m] * factor;
                    }
                });
            }
            Op::Add { a, b } => {
                if wants(*a) {
                    accumulate(grads, *a, nodes, |d| add_into(d, gout));
                }
                if wants(*b) {
                    accumulate(grads, *b, nodes, |d| add_into(d, gout));
                }
            }
            Op::Sub { a, b } => {
                if wants(*a) {
                    accumulate(grads, *a, nodes, |d| add_into(d, gout));
                }
                if wants(*b) {
                    accumulate(grads, *b, nodes, |d| {
                        for (x, &g) in d.iter_mut().zip(gout) {
                            *x = *x - g;
                        }
                    });
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    accumulate(grads, *a, nodes, |d| {
                        for ((x, &g), &y) in d.iter_mut().zip(gout).zip(bv) {
                            *x = *x + g * y;
                        }
                    });
                }
                if wants(*b) {
                    accumulate(grads, *b, nodes, |d| {
                        for ((x, &g), &y) in d.iter_mut().zip(gout).zip(av) {
                            *x = *x + g * y;
                        }
                    });
                }
            }
            Op::Scale { input, factor } => {
                accumulate(grads, *input, nodes, |d| {
                    for (x, &g) in d.iter_mut().zip(gout) {
                        *x = *x + g * *factor;
                    }
                });
            }
            Op::CenterColumns { input } => {
                let [p, c] = nodes[i].value.dims2().expect("2-d");
                let means = column_means(gout, p, c);
                accumulate(grads, *input, nodes, |d| {
                    for (k, (x, &g)) in d.iter_mut().zip(gout).enumerate() {
                        *x = *x + g - means[k % c];
                    }
                });
            }
            Op::NormalizeRows { input, norms, eps } => {
                let [_, c] = nodes[i].value.dims2().expect("2-d");
                accumulate(grads, *input, nodes, |d| {
                    for (r, &n) in norms.iter().enumerate() {
                        let y = &out[r * c..(r + 1) * c];
                        let g = &gout[r * c..(r + 1) * c];
                        let dst = &mut d[r * c..(r + 1) * c];
                        if n > *eps {
                            let dot = y.iter().zip(g).fold(T::zero(), |s, (&a, &b)| s + a * b);
                            for j in 0..c {
                                dst[j] = dst[j] + (g[j] - y[j] * dot) / n;
                            }
                        } else {
                            for j in 0..c {
                                dst[j] = dst[j] + g[j] / n;
                            }
                        }
                    }
                });
            }
            Op::InfoNceDiag { input, scale } => {
                let [p, q] = nodes[input.0].value.dims2().expect("2-d");
                let probs = kernels::softmax_rows(val(*input), p, q, *scale);
                let g0 = gout[0];
                accumulate(grads, *input, nodes, |d| {
                    for u in 0..p {
                        for v in 0..q {
                            let delta = if u == v { T::one() } else { T::zero() };
                            d[u * q + v] = d[u * q + v] + g0 * (probs[u * q + v] - delta) / *scale;
                        }
                    }
                });
            }
            Op::SumSqDiff { a, b } => {
                let two_g = gout[0] + gout[0];
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    accumulate(grads, *a, nodes, |d| {
                        for ((x, &p), &q) in d.iter_mut().zip(av).zip(bv) {
                            *x = *x + two_g * (p - q);
                        }
                    });
                }
                if wants(*b) {
                    accumulate(grads, *b, nodes, |d| {
                        for ((x, &p), &q) in d.iter_mut().zip(av).zip(bv) {
                            *x = *x - two_g * (p - q);
                        }
                    });
                }
            }
            Op::Unfold { input, geom } => {
                accumulate(grads, *input, nodes, |d| kernels::col2im(gout, geom, d));
            }
            Op::ChannelAffine { input, scale } => {
                let [_, c, h, w] = nodes[i].value.dims4().expect("4-d");
                let plane = h * w;
                accumulate(grads, *input, nodes, |d| {
                    for (k, (x, &g)) in d.iter_mut().zip(gout).enumerate() {
                        *x = *x + g * scale[(k / plane) % c];
                    }
                });
            }
            Op::Clamp { input, lo, hi } => {
                let xv = val(*input);
                accumulate(grads, *input, nodes, |d| {
                    for ((x, &g), &v) in d.iter_mut().zip(gout).zip(xv) {
                        if v >= *lo && v <= *hi {
                            *x = *x + g;
                        }
                    }
                });
            }
        }
    }
}

fn take_or_zeros<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, nodes: &[Node<T>]) -> Vec<T> {
    grads[v.0].take().unwrap_or_else(|| vec![T::zero(); nodes[v.0].value.len()])
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, nodes: &[Node<T>], f: impl FnOnce(&mut [T])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let mut g = take_or_zeros(grads, v, nodes);
    f(&mut g);
    grads[v.0] = Some(g);
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn column_means<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut means = vec![T::zero(); cols];
    for row in x.chunks(cols.max(1)).take(rows) {
        for (m, &v) in means.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    let n = T::of_f64(rows as f64);
    means.iter_mut().for_each(|m| *m = *m / n);
    means
}

/// For each flat input index, the flat index of its reduction slot.
fn reduce_index_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let total = numel(shape);
    let kept: Vec<usize> = (0..shape.len()).filter(|i| !axes.contains(i)).collect();
    let mut out_strides = vec![0usize; shape.len()];
    let mut stride = 1;
    for &k in kept.iter().rev() {
        out_strides[k] = stride;
        stride *= shape[k];
    }
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..total {
        map.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}
